#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cfm/autodiff.hpp"
#include "cfm/nets.hpp"

namespace cfm {

enum class Metric { squared_l2, pseudo_huber };

/// Knobs of the multi-segment consistency objective.
struct CfmLossConfig {
    int segments = 2;
    double alpha = 1e-5;
    Metric metric = Metric::squared_l2;
    double huber_c = 0.0;
    double delta_t = 0.0;

    void validate() const;
};

/// c = 0.00054 * sqrt(d) for a per-sample feature count d.
double default_huber_c(std::size_t data_dim);

/// One training step's worth of paired samples. Row r of x0/x1 pairs with
/// t[r], segment[r] and condition[r].
struct TrajectoryBatch {
    Tensor x0;
    Tensor x1;
    std::vector<double> t;
    std::vector<int> segment;
    double delta_t = 0.0;
    std::vector<int> condition;

    [[nodiscard]] std::size_t size() const noexcept { return t.size(); }
    // Checks alignment and that [t, t + delta_t] stays inside each row's segment.
    void validate(int segments) const;
};

// Linear interpolant t * x1 + (1 - t) * x0.
Tensor interpolate(const Tensor& x0, const Tensor& x1, double t);
// Row-wise interpolant with one time per row.
Tensor interpolate(const Tensor& x0, const Tensor& x1, std::span<const double> t);

// Ground-truth interpolant at the end of segment i, time (i + 1) / S.
Tensor segment_endpoint(int segment, int segments, const Tensor& x0, const Tensor& x1);
Tensor segment_endpoint(std::span<const int> segment, int segments, const Tensor& x0, const Tensor& x1);

// One-jump extrapolation x_t + ((i + 1) / S - t) * v to the end of segment i.
Tensor endpoint_map(double t, const Tensor& x_t, const Tensor& v, int segment, int segments);
Var endpoint_map(std::span<const double> t, const Var& x_t, const Var& v, std::span<const int> segment,
                 int segments);

// Distances are computed per row, then averaged over the batch. The squared
// L2 metric averages squared differences over the row's features; the
// pseudo-Huber metric is sqrt(|x - y|^2 + c^2) - c on the row's Euclidean norm.
Var squared_l2_distance(const Var& x, const Var& y);
Var pseudo_huber(const Var& x, const Var& y, double c);
Var metric_distance(const Var& x, const Var& y, Metric metric, double huber_c);

/// Straight-flow regression onto the ground-truth segment endpoint.
Var loss_stage1(const FlowModel& model, const TrajectoryBatch& batch, const CfmLossConfig& config, Tape* tape,
                const DropoutMaskSet* masks = nullptr);

struct Stage2Terms {
    Var total;
    Var straight_flow;
    Var velocity_consistency;
    // f_theta(t, x_t), kept for the adversarial stage.
    Var endpoint_estimate;
};

/// Optional knobs of the two forward passes of the consistency loss.
struct Stage2Passes {
    // Masks of the tracked pass.
    const DropoutMaskSet* online_masks = nullptr;
    // Masks of the stop-gradient pass; null reuses `online_masks`.
    const DropoutMaskSet* target_masks = nullptr;
    MaskProbe* online_probe = nullptr;
    MaskProbe* target_probe = nullptr;
    // Network for the stop-gradient pass; null means the online model.
    const FlowModel* target_model = nullptr;
};

/// L_sf + alpha * L_vc. The target passes at (t + dt, x_{t + dt}) run with
/// stop-gradient parameters.
Stage2Terms loss_stage2(const FlowModel& model, const TrajectoryBatch& batch, const CfmLossConfig& config, Tape* tape,
                        const Stage2Passes& passes = {});

/// Conditional flow matching against the linear-path velocity x1 - x0.
Var loss_fm_baseline(const FlowModel& model, const TrajectoryBatch& batch, Tape* tape);

struct AdversarialTerms {
    Var discriminator;     // mean D(x_hat)^2 + (1 - D(x))^2
    Var generator;         // mean (1 - D(x_hat))^2
    Var feature_matching;  // sum over layers of mean |D^l(x_hat) - D^l(x)|
};

/// The discriminator term is tracked on `discriminator_tape` with x_hat held
/// constant; the generator and feature terms differentiate only through
/// x_hat, treating discriminator weights as constants.
AdversarialTerms loss_adversarial(const Discriminator& disc, const Var& x_hat, const Tensor& x_real,
                                  Tape* discriminator_tape);

}  // namespace cfm
