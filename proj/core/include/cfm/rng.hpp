#pragma once

#include <cstdint>
#include <vector>

#include "cfm/tensor.hpp"

namespace cfm {

/// Counter-based random stream: draw k of a stream is a pure function of
/// (seed, k), so any state can be recreated from two integers.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t position = 0);

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t position() const noexcept { return position_; }
    // Seeds of every ancestor stream, oldest first.
    [[nodiscard]] const std::vector<std::uint64_t>& lineage() const noexcept { return lineage_; }

    std::uint64_t next_u64();
    // Uniform on the open interval (0, 1).
    double next_uniform();
    // Uniform integer in [0, bound).
    std::uint64_t next_below(std::uint64_t bound);
    // Box-Muller; consumes two draws per variate.
    double next_normal();

    // Derives an independent child stream. Consumes one draw of the parent.
    RngStream split(std::uint64_t tag);

private:
    std::uint64_t seed_;
    std::uint64_t position_;
    std::vector<std::uint64_t> lineage_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

Tensor sample_standard_normal(RngStream& stream, const Shape& shape);
Tensor sample_uniform(RngStream& stream, const Shape& shape, double low, double high);

/// Binary keep/drop pattern plus the inverted-dropout scale.
struct DropoutMask {
    Shape shape;
    double keep_probability = 1.0;
    std::vector<std::uint8_t> bits;
    double scale = 1.0;
    // Distinguishes masks drawn from different stream states.
    std::uint64_t fingerprint = 0;

    [[nodiscard]] double kept_fraction() const;
    // Element-wise x * bit * scale.
    [[nodiscard]] Tensor apply(const Tensor& x) const;
};

DropoutMask make_dropout_mask(RngStream& stream, const Shape& shape, double rate);

}  // namespace cfm
