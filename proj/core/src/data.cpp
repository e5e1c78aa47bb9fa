#include "cfm/data.hpp"

#include <cmath>
#include <numbers>

#include "cfm/errors.hpp"

namespace cfm {

int ProblemSpec::num_conditions() const noexcept {
    switch (kind) {
        case ProblemKind::single_point: return 1;
        case ProblemKind::eight_gaussians: return 8;
        case ProblemKind::two_moons: return 2;
        case ProblemKind::checkerboard: return 8;
    }
    return 1;
}

std::string ProblemSpec::name() const {
    return std::string(to_string(kind));
}

ProblemSpec ProblemSpec::named(std::string_view name) {
    ProblemSpec spec;
    spec.kind = parse_problem_kind(name);
    return spec;
}

ProblemKind parse_problem_kind(std::string_view name) {
    if (name == "single-point") return ProblemKind::single_point;
    if (name == "eight-gaussians") return ProblemKind::eight_gaussians;
    if (name == "two-moons") return ProblemKind::two_moons;
    if (name == "checkerboard") return ProblemKind::checkerboard;
    fail(ErrorKind::config, "unknown problem '" + std::string(name) +
                                "' (expected single-point, eight-gaussians, two-moons or checkerboard)");
}

std::string_view to_string(ProblemKind kind) {
    switch (kind) {
        case ProblemKind::single_point: return "single-point";
        case ProblemKind::eight_gaussians: return "eight-gaussians";
        case ProblemKind::two_moons: return "two-moons";
        case ProblemKind::checkerboard: return "checkerboard";
    }
    return "unknown";
}

std::array<double, 2> gaussian_center(const ProblemSpec& spec, int condition) {
    const double angle = 2.0 * std::numbers::pi * condition / 8.0;
    return {spec.ring_radius * std::cos(angle), spec.ring_radius * std::sin(angle)};
}

std::array<double, 2> checkerboard_cell(int condition) {
    require(condition >= 0 && condition < 8, ErrorKind::index, "checkerboard cell index out of range");
    int seen = 0;
    for (int cy = 0; cy < 4; ++cy) {
        for (int cx = 0; cx < 4; ++cx) {
            if ((cx + cy) % 2 != 0) {
                continue;
            }
            if (seen++ == condition) {
                return {-2.0 + cx, -2.0 + cy};
            }
        }
    }
    fail(ErrorKind::index, "checkerboard cell index out of range");
}

namespace {

std::array<double, 2> draw_target(const ProblemSpec& spec, RngStream& stream, int condition) {
    switch (spec.kind) {
        case ProblemKind::single_point: return spec.point;
        case ProblemKind::eight_gaussians: {
            const auto c = gaussian_center(spec, condition);
            const double dx = stream.next_normal();
            const double dy = stream.next_normal();
            return {c[0] + spec.gaussian_sigma * dx, c[1] + spec.gaussian_sigma * dy};
        }
        case ProblemKind::two_moons: {
            const double theta = std::numbers::pi * stream.next_uniform();
            double x = 0.0;
            double y = 0.0;
            if (condition == 0) {
                x = std::cos(theta);
                y = std::sin(theta);
            } else {
                x = 1.0 - std::cos(theta);
                y = 0.5 - std::sin(theta);
            }
            const double nx = stream.next_normal();
            const double ny = stream.next_normal();
            return {spec.moon_scale * (x - 0.5) + spec.moon_noise * nx,
                    spec.moon_scale * (y - 0.25) + spec.moon_noise * ny};
        }
        case ProblemKind::checkerboard: {
            const auto corner = checkerboard_cell(condition);
            const double u = stream.next_uniform();
            const double v = stream.next_uniform();
            return {corner[0] + u, corner[1] + v};
        }
    }
    fail(ErrorKind::contract, "unknown problem kind");
}

}  // namespace

PairBatch sample_pairs(const ProblemSpec& spec, RngStream& stream, std::size_t batch_size) {
    require(batch_size > 0, ErrorKind::config, "batch size must be positive");
    PairBatch batch;
    batch.x0 = sample_standard_normal(stream, {batch_size, 2});
    batch.x1 = Tensor({batch_size, 2});
    batch.condition.resize(batch_size);
    const auto conditions = static_cast<std::uint64_t>(spec.num_conditions());
    for (std::size_t r = 0; r < batch_size; ++r) {
        const int c = static_cast<int>(stream.next_below(conditions));
        const auto p = draw_target(spec, stream, c);
        batch.condition[r] = c;
        batch.x1[2 * r] = p[0];
        batch.x1[2 * r + 1] = p[1];
    }
    return batch;
}

Tensor sample_target(const ProblemSpec& spec, RngStream& stream, int condition, std::size_t n) {
    require(condition >= 0 && condition < spec.num_conditions(), ErrorKind::index, "condition out of range");
    require(n > 0, ErrorKind::config, "sample count must be positive");
    Tensor out({n, 2});
    for (std::size_t r = 0; r < n; ++r) {
        const auto p = draw_target(spec, stream, condition);
        out[2 * r] = p[0];
        out[2 * r + 1] = p[1];
    }
    return out;
}

}  // namespace cfm
