#include "cfm/sampler.hpp"

#include <cmath>

#include "cfm/errors.hpp"

namespace cfm {

SampleResult euler_sample(const VelocityFn& velocity, const Tensor& x0, int nfe) {
    require(nfe >= 1, ErrorKind::config, "nfe must be at least 1");
    const double h = 1.0 / nfe;
    SampleResult result;
    result.record.nfe = nfe;
    result.record.times.push_back(0.0);
    result.record.states.push_back(x0);
    Tensor x = x0;
    for (int k = 0; k < nfe; ++k) {
        const double t = static_cast<double>(k) / nfe;
        const Tensor v = velocity(t, x);
        require(v.shape() == x.shape(), ErrorKind::dimension, "velocity field changed the state shape");
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += h * v[i];
        }
        require(x.all_finite(), ErrorKind::numeric, "non-finite state after Euler step " + std::to_string(k));
        result.record.times.push_back(k + 1 == nfe ? 1.0 : static_cast<double>(k + 1) / nfe);
        result.record.states.push_back(x);
    }
    result.x1_hat = std::move(x);
    return result;
}

SampleResult euler_sample(const FlowModel& model, const Tensor& x0, std::span<const int> conditions, int nfe) {
    require(conditions.size() == x0.rows(), ErrorKind::dimension, "one condition per noise row required");
    return euler_sample(
        [&](double t, const Tensor& x) {
            const std::vector<double> times(x.rows(), t);
            return model.velocity(times, Var(x), conditions, nullptr).value();
        },
        x0, nfe);
}

double straightness(const TrajectoryRecord& record) {
    require(record.nfe >= 2, ErrorKind::contract, "straightness needs at least two steps");
    require(record.states.size() == static_cast<std::size_t>(record.nfe) + 1, ErrorKind::contract,
            "trajectory record has the wrong number of states");
    const Tensor& first = record.states.front();
    const std::size_t n = first.rows();
    const std::size_t d = first.cols();
    const auto steps = static_cast<std::size_t>(record.nfe);

    double total = 0.0;
    std::vector<double> mean(d);
    for (std::size_t r = 0; r < n; ++r) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t k = 0; k < steps; ++k) {
            for (std::size_t c = 0; c < d; ++c) {
                mean[c] += (record.states[k + 1][r * d + c] - record.states[k][r * d + c]) * record.nfe;
            }
        }
        for (double& m : mean) {
            m /= static_cast<double>(steps);
        }
        for (std::size_t k = 0; k < steps; ++k) {
            double sq = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double u = (record.states[k + 1][r * d + c] - record.states[k][r * d + c]) * record.nfe;
                sq += (u - mean[c]) * (u - mean[c]);
            }
            total += std::sqrt(sq);
        }
    }
    return total / static_cast<double>(n * steps);
}

}  // namespace cfm
