#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cfm/rng.hpp"
#include "cfm/tensor.hpp"

namespace cfm {

enum class ProblemKind { single_point, eight_gaussians, two_moons, checkerboard };

/// Synthetic conditional 2-D target. Conditions are integer labels in
/// [0, num_conditions()).
///
/// Supports, per kind:
///   single_point     every sample equals `point` (one condition);
///   eight_gaussians  N(c_k, sigma^2 I), c_k on a circle of `ring_radius`, condition k;
///   two_moons        interleaved half circles scaled by `moon_scale` with
///                    N(0, moon_noise^2) jitter, condition = moon index;
///   checkerboard     uniform on the 8 dark unit cells of a 4x4 board over
///                    [-2, 2]^2, condition = cell index in row-major order.
struct ProblemSpec {
    ProblemKind kind = ProblemKind::two_moons;
    std::array<double, 2> point{1.5, -0.5};
    double ring_radius = 2.0;
    double gaussian_sigma = 0.1;
    double moon_scale = 2.0;
    double moon_noise = 0.1;
    std::size_t samples_per_epoch = 1024;

    [[nodiscard]] std::size_t data_dim() const noexcept { return 2; }
    [[nodiscard]] int num_conditions() const noexcept;
    [[nodiscard]] std::string name() const;

    static ProblemSpec named(std::string_view name);
};

ProblemKind parse_problem_kind(std::string_view name);
std::string_view to_string(ProblemKind kind);

std::array<double, 2> gaussian_center(const ProblemSpec& spec, int condition);
// Lower-left corner of a checkerboard cell.
std::array<double, 2> checkerboard_cell(int condition);

struct PairBatch {
    Tensor x0;
    Tensor x1;
    std::vector<int> condition;
};

/// Independent coupling: x0 ~ N(0, I), condition uniform, x1 ~ p(x | condition).
PairBatch sample_pairs(const ProblemSpec& spec, RngStream& stream, std::size_t batch_size);

/// n draws of x1 given a fixed condition, shape [n, 2].
Tensor sample_target(const ProblemSpec& spec, RngStream& stream, int condition, std::size_t n);

}  // namespace cfm
