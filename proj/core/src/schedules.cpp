#include "cfm/schedules.hpp"

#include <algorithm>
#include <cmath>

#include "cfm/errors.hpp"

namespace cfm {

void DeltaSchedule::validate() const {
    require(bins >= 1, ErrorKind::config, "delta schedule needs at least one bin");
    require(total_epochs >= 1, ErrorKind::config, "delta schedule needs at least one epoch");
    require(start > 0.0 && end > 0.0, ErrorKind::config, "delta schedule endpoints must be positive");
    require(bins == 1 || start > end, ErrorKind::config, "delta schedule must decrease from start to end");
}

int DeltaSchedule::bin_of(int epoch) const {
    // floor(epoch / (N / K)) computed in integers.
    const long long k = static_cast<long long>(epoch) * bins / total_epochs;
    return static_cast<int>(std::min<long long>(k, bins - 1));
}

double DeltaSchedule::value_of_bin(int bin) const {
    if (bins == 1) {
        return start;
    }
    const double frac = static_cast<double>(bin) / static_cast<double>(bins - 1);
    if (bin == bins - 1) {
        return end;
    }
    switch (mode) {
        case DeltaMode::linear_step: return start - static_cast<double>(bin) * (start - end) / (bins - 1);
        case DeltaMode::exponential_step: return start * std::pow(end / start, frac);
    }
    fail(ErrorKind::contract, "unknown delta mode");
}

double delta_at(const DeltaSchedule& schedule, int epoch) {
    schedule.validate();
    require(epoch >= 0 && epoch < schedule.total_epochs, ErrorKind::domain,
            "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(schedule.total_epochs) + ")");
    return schedule.value_of_bin(schedule.bin_of(epoch));
}

TimeSampler::TimeSampler(int segments, double delta_t) : segments_(segments), delta_t_(delta_t) {
    require(segments >= 1, ErrorKind::config, "segment count must be at least 1");
    require(delta_t >= 0.0, ErrorKind::config, "delta_t must be nonnegative");
    require(delta_t < 1.0 / segments, ErrorKind::config,
            "delta_t " + std::to_string(delta_t) + " does not fit inside a segment of width 1/" +
                std::to_string(segments));
}

TimeSample TimeSampler::sample(RngStream& stream, std::size_t batch_size) const {
    TimeSample out;
    out.t.resize(batch_size);
    out.segment.resize(batch_size);
    const double width = 1.0 / segments_;
    for (std::size_t r = 0; r < batch_size; ++r) {
        const int i = static_cast<int>(stream.next_below(static_cast<std::uint64_t>(segments_)));
        const double lo = static_cast<double>(i) / segments_;
        out.segment[r] = i;
        out.t[r] = lo + stream.next_uniform() * (width - delta_t_);
    }
    return out;
}

}  // namespace cfm
