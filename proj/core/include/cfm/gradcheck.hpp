#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cfm/autodiff.hpp"

namespace cfm {

struct GradcheckOptions {
    int instances = 20;
    double step = 1e-5;
    double tolerance = 1e-4;
    std::uint64_t seed = 20240917;
};

struct GradcheckResult {
    std::string name;
    int instances = 0;
    double max_relative_error = 0.0;
    bool passed = false;
};

/// |a - n|_2 / max(|a|_2, |n|_2, 1e-12) between an autodiff gradient and a
/// central finite-difference estimate.
double relative_gradient_error(const Tensor& analytic, const Tensor& numeric);

/// Central differences of a scalar function of one tensor.
Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double step);

/// Central differences with respect to a parameter, perturbed in place and restored.
Tensor finite_difference(const std::function<double()>& f, Parameter& param, double step);

/// Every differentiable op plus the composite losses (stage 1, stage 2 with
/// alpha = 1e-5 in both metrics, adversarial generator and discriminator
/// objectives, baseline flow matching), each on `instances` random draws
/// with inputs in [-2, 2].
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace cfm
