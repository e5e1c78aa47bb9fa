#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfm/autodiff.hpp"

namespace cfm {

struct AdamOptions {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Global gradient-norm clip; <= 0 disables clipping.
    double clip_norm = 1.0;
};

/// Adam with bias correction and optional global-norm clipping. Moment
/// buffers are keyed by parameter name so they survive checkpointing.
class Adam {
public:
    explicit Adam(AdamOptions options = {});

    // Updates every non-frozen parameter that has a gradient in `grads`.
    // Returns the pre-clip global gradient norm.
    double step(const std::vector<Parameter*>& params, const Gradients& grads);

    [[nodiscard]] const AdamOptions& options() const noexcept { return options_; }
    [[nodiscard]] std::int64_t steps() const noexcept { return steps_; }
    void set_steps(std::int64_t steps) { steps_ = steps; }

    struct Moments {
        Tensor first;
        Tensor second;
    };
    [[nodiscard]] const std::map<std::string, Moments>& moments() const noexcept { return moments_; }
    void set_moments(std::map<std::string, Moments> moments) { moments_ = std::move(moments); }

private:
    AdamOptions options_;
    std::int64_t steps_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace cfm
