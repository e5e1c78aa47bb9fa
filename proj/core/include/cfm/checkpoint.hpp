#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cfm/config.hpp"
#include "cfm/tensor.hpp"

namespace cfm {

inline constexpr std::uint32_t checkpoint_version = 1;

/// Training state at a stage boundary.
///
/// On disk (all integers little-endian):
///   "CFMC" | u32 version | u64 text length | canonical config text incl. a
///   [checkpoint] section | u64 tensor count | per tensor: u32 name length,
///   UTF-8 name, u8 dtype (1 = float64), u32 rank, u64 dims..., f64 payload |
///   u64 FNV-1a checksum of every preceding byte.
struct Checkpoint {
    RunConfig config;
    // Last completed stage: init, stage1, stage2, adversarial or fm-baseline.
    std::string stage = "init";
    int epoch = 0;
    // Completed stages with their epoch counts, e.g. "stage1:50,stage2:50".
    std::string provenance;
    std::uint64_t rng_seed = 0;
    std::uint64_t rng_position = 0;
    std::int64_t generator_steps = 0;
    std::int64_t discriminator_steps = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;

    [[nodiscard]] const Tensor* find(const std::string& name) const;
    [[nodiscard]] std::string header_text() const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

}  // namespace cfm
