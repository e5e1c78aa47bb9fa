#pragma once

#include <cstddef>
#include <vector>

#include "cfm/rng.hpp"

namespace cfm {

enum class DeltaMode { linear_step, exponential_step };

/// Piecewise-constant delta_t over K equal bins of the stage-2 epochs.
struct DeltaSchedule {
    double start = 0.1;
    double end = 0.001;
    int bins = 8;
    int total_epochs = 50;
    DeltaMode mode = DeltaMode::linear_step;

    void validate() const;
    [[nodiscard]] int bin_of(int epoch) const;
    [[nodiscard]] double value_of_bin(int bin) const;
};

double delta_at(const DeltaSchedule& schedule, int epoch);

struct TimeSample {
    std::vector<double> t;
    std::vector<int> segment;
};

/// Draws (t, i) with i uniform over segments and t uniform on
/// [i/S, (i+1)/S - delta_t], so t and t + delta_t share a segment.
class TimeSampler {
public:
    TimeSampler(int segments, double delta_t);

    [[nodiscard]] TimeSample sample(RngStream& stream, std::size_t batch_size) const;

    [[nodiscard]] int segments() const noexcept { return segments_; }
    [[nodiscard]] double delta_t() const noexcept { return delta_t_; }

private:
    int segments_;
    double delta_t_;
};

}  // namespace cfm
