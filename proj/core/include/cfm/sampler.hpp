#pragma once

#include <functional>
#include <span>
#include <vector>

#include "cfm/nets.hpp"
#include "cfm/tensor.hpp"

namespace cfm {

/// States of the discrete flow at each Euler grid point.
struct TrajectoryRecord {
    std::vector<double> times;
    std::vector<Tensor> states;
    int nfe = 0;
};

struct SampleResult {
    Tensor x1_hat;
    TrajectoryRecord record;
};

// v(t, x) for a whole batch at a shared time.
using VelocityFn = std::function<Tensor(double t, const Tensor& x)>;

/// x_{k+1} = x_k + v(t_k, x_k) / nfe on the uniform grid t_k = k / nfe.
SampleResult euler_sample(const VelocityFn& velocity, const Tensor& x0, int nfe);

/// Euler integration of a trained model: dropout off, no gradient tracking.
SampleResult euler_sample(const FlowModel& model, const Tensor& x0, std::span<const int> conditions, int nfe);

/// Mean over steps and rows of |u_k - mean_k(u_k)|_2, where u_k is step k's
/// displacement times nfe. Zero iff every row moves along a straight line
/// at constant speed.
double straightness(const TrajectoryRecord& record);

}  // namespace cfm
