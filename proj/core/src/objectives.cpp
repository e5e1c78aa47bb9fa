#include "cfm/objectives.hpp"

#include <cmath>

#include "cfm/errors.hpp"
#include "cfm/ops.hpp"

namespace cfm {

namespace {

// Tolerance for floating-point round-off in segment boundary checks.
constexpr double boundary_slack = 1e-12;

void require_aligned(const Tensor& a, const Tensor& b, const char* what) {
    require(a.shape() == b.shape(), ErrorKind::dimension,
            std::string(what) + ": shapes differ, " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

double segment_end(int segment, int segments) {
    return static_cast<double>(segment + 1) / static_cast<double>(segments);
}

Tensor column(std::span<const double> values) {
    return Tensor({values.size(), 1}, std::vector<double>(values.begin(), values.end()));
}

}  // namespace

void CfmLossConfig::validate() const {
    require(segments >= 1, ErrorKind::config, "segment count must be at least 1");
    require(alpha >= 0.0, ErrorKind::config, "alpha must be nonnegative");
    require(delta_t >= 0.0, ErrorKind::config, "delta_t must be nonnegative");
    if (metric == Metric::pseudo_huber) {
        require(huber_c > 0.0, ErrorKind::config, "pseudo-Huber constant c must be positive");
    }
}

double default_huber_c(std::size_t data_dim) {
    return 0.00054 * std::sqrt(static_cast<double>(data_dim));
}

void TrajectoryBatch::validate(int segments) const {
    require(segments >= 1, ErrorKind::config, "segment count must be at least 1");
    require_aligned(x0, x1, "trajectory batch");
    require(x0.rank() == 2, ErrorKind::dimension, "trajectory batch samples must be [batch, d]");
    const std::size_t n = x0.dim(0);
    require(t.size() == n && segment.size() == n && condition.size() == n, ErrorKind::dimension,
            "trajectory batch fields are not batch-aligned");
    require(delta_t >= 0.0, ErrorKind::domain, "delta_t must be nonnegative");
    for (std::size_t r = 0; r < n; ++r) {
        require(segment[r] >= 0 && segment[r] < segments, ErrorKind::index, "segment index out of range");
        const double lo = static_cast<double>(segment[r]) / segments;
        const double hi = segment_end(segment[r], segments);
        require(t[r] >= lo - boundary_slack && t[r] + delta_t <= hi + boundary_slack, ErrorKind::domain,
                "time " + std::to_string(t[r]) + " with delta " + std::to_string(delta_t) + " leaves segment " +
                    std::to_string(segment[r]));
    }
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
    require_aligned(x0, x1, "interpolate");
    require(t >= 0.0 && t <= 1.0, ErrorKind::domain, "interpolate: t must lie in [0, 1]");
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = t * x1[i] + (1.0 - t) * x0[i];
    }
    return out;
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, std::span<const double> t) {
    require_aligned(x0, x1, "interpolate");
    const std::size_t n = x0.rows();
    const std::size_t d = x0.cols();
    require(t.size() == n, ErrorKind::dimension, "interpolate: one time per row required");
    Tensor out(x0.shape());
    for (std::size_t r = 0; r < n; ++r) {
        require(t[r] >= 0.0 && t[r] <= 1.0, ErrorKind::domain, "interpolate: t must lie in [0, 1]");
        for (std::size_t c = 0; c < d; ++c) {
            out[r * d + c] = t[r] * x1[r * d + c] + (1.0 - t[r]) * x0[r * d + c];
        }
    }
    return out;
}

Tensor segment_endpoint(int segment, int segments, const Tensor& x0, const Tensor& x1) {
    require(segments >= 1, ErrorKind::config, "segment count must be at least 1");
    require(segment >= 0 && segment < segments, ErrorKind::index,
            "segment index " + std::to_string(segment) + " out of range for S = " + std::to_string(segments));
    return interpolate(x0, x1, segment_end(segment, segments));
}

Tensor segment_endpoint(std::span<const int> segment, int segments, const Tensor& x0, const Tensor& x1) {
    require(segments >= 1, ErrorKind::config, "segment count must be at least 1");
    std::vector<double> ends(segment.size());
    for (std::size_t r = 0; r < segment.size(); ++r) {
        require(segment[r] >= 0 && segment[r] < segments, ErrorKind::index, "segment index out of range");
        ends[r] = segment_end(segment[r], segments);
    }
    return interpolate(x0, x1, ends);
}

Tensor endpoint_map(double t, const Tensor& x_t, const Tensor& v, int segment, int segments) {
    require_aligned(x_t, v, "endpoint_map");
    require(segment >= 0 && segment < segments, ErrorKind::index, "segment index out of range");
    const double remaining = segment_end(segment, segments) - t;
    require(remaining >= -boundary_slack, ErrorKind::domain, "endpoint_map: t lies beyond the segment end");
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x_t[i] + remaining * v[i];
    }
    return out;
}

Var endpoint_map(std::span<const double> t, const Var& x_t, const Var& v, std::span<const int> segment,
                 int segments) {
    require(x_t.shape() == v.shape(), ErrorKind::dimension, "endpoint_map: x_t and v differ in shape");
    const std::size_t n = x_t.value().rows();
    require(t.size() == n && segment.size() == n, ErrorKind::dimension, "endpoint_map: batch misaligned");
    std::vector<double> remaining(n);
    for (std::size_t r = 0; r < n; ++r) {
        require(segment[r] >= 0 && segment[r] < segments, ErrorKind::index, "segment index out of range");
        remaining[r] = segment_end(segment[r], segments) - t[r];
        require(remaining[r] >= -boundary_slack, ErrorKind::domain, "endpoint_map: t lies beyond the segment end");
    }
    return ops::add(x_t, ops::multiply(v, Var(column(remaining))));
}

Var squared_l2_distance(const Var& x, const Var& y) {
    // Mean over rows of per-row feature means equals the mean over all entries.
    return ops::mean(ops::square(ops::subtract(x, y)));
}

Var pseudo_huber(const Var& x, const Var& y, double c) {
    require(c > 0.0, ErrorKind::config, "pseudo-Huber constant c must be positive");
    const Var sq_norm = ops::row_sum(ops::square(ops::subtract(x, y)));
    return ops::mean(ops::add_scalar(ops::sqrt(ops::add_scalar(sq_norm, c * c)), -c));
}

Var metric_distance(const Var& x, const Var& y, Metric metric, double huber_c) {
    switch (metric) {
        case Metric::squared_l2: return squared_l2_distance(x, y);
        case Metric::pseudo_huber: return pseudo_huber(x, y, huber_c);
    }
    fail(ErrorKind::contract, "unknown metric");
}

Var loss_stage1(const FlowModel& model, const TrajectoryBatch& batch, const CfmLossConfig& config, Tape* tape,
                const DropoutMaskSet* masks) {
    config.validate();
    batch.validate(config.segments);
    const Var x_t(interpolate(batch.x0, batch.x1, batch.t));
    const Var v = model.velocity(batch.t, x_t, batch.condition, tape, masks);
    const Var f = endpoint_map(batch.t, x_t, v, batch.segment, config.segments);
    const Var target(segment_endpoint(batch.segment, config.segments, batch.x0, batch.x1));
    return metric_distance(f, target, config.metric, config.huber_c);
}

Stage2Terms loss_stage2(const FlowModel& model, const TrajectoryBatch& batch, const CfmLossConfig& config, Tape* tape,
                        const Stage2Passes& passes) {
    config.validate();
    batch.validate(config.segments);
    require(std::abs(batch.delta_t - config.delta_t) <= boundary_slack, ErrorKind::contract,
            "batch delta_t differs from the loss configuration");

    std::vector<double> t_next(batch.t);
    for (double& t : t_next) {
        t += batch.delta_t;
    }
    const Var x_t(interpolate(batch.x0, batch.x1, batch.t));
    const Var x_next(interpolate(batch.x0, batch.x1, t_next));

    const FlowModel& target_net = passes.target_model != nullptr ? *passes.target_model : model;
    const DropoutMaskSet* target_masks = passes.target_masks != nullptr ? passes.target_masks : passes.online_masks;
    const Var v = model.velocity(batch.t, x_t, batch.condition, tape, passes.online_masks, passes.online_probe);
    const Var v_target =
        target_net.velocity(t_next, x_next, batch.condition, nullptr, target_masks, passes.target_probe);

    const Var f = endpoint_map(batch.t, x_t, v, batch.segment, config.segments);
    const Var f_target = endpoint_map(t_next, x_next, v_target, batch.segment, config.segments);

    Stage2Terms terms;
    terms.straight_flow = metric_distance(f, f_target, config.metric, config.huber_c);
    terms.velocity_consistency = metric_distance(v, v_target, config.metric, config.huber_c);
    terms.total = ops::add(terms.straight_flow, ops::scale(terms.velocity_consistency, config.alpha));
    terms.endpoint_estimate = f;
    return terms;
}

Var loss_fm_baseline(const FlowModel& model, const TrajectoryBatch& batch, Tape* tape) {
    require_aligned(batch.x0, batch.x1, "fm baseline");
    const Var x_t(interpolate(batch.x0, batch.x1, batch.t));
    Tensor target(batch.x0.shape());
    for (std::size_t i = 0; i < target.size(); ++i) {
        target[i] = batch.x1[i] - batch.x0[i];
    }
    const Var v = model.velocity(batch.t, x_t, batch.condition, tape);
    return squared_l2_distance(v, Var(std::move(target)));
}

AdversarialTerms loss_adversarial(const Discriminator& disc, const Var& x_hat, const Tensor& x_real,
                                  Tape* discriminator_tape) {
    require(x_hat.shape() == x_real.shape(), ErrorKind::dimension, "adversarial: fake and real batches differ in shape");
    AdversarialTerms terms;

    // Discriminator side: gradients reach D only.
    {
        const auto fake = disc.evaluate(Var(x_hat.value()), discriminator_tape);
        const auto real = disc.evaluate(Var(x_real), discriminator_tape);
        const Var fake_term = ops::square(fake.score);
        const Var real_term = ops::square(ops::add_scalar(ops::scale(real.score, -1.0), 1.0));
        terms.discriminator = ops::mean(ops::add(fake_term, real_term));
    }

    // Generator side: D is a constant function of x_hat.
    const auto fake = disc.evaluate(x_hat, nullptr);
    const auto real = disc.evaluate(Var(x_real), nullptr);
    terms.generator = ops::mean(ops::square(ops::add_scalar(ops::scale(fake.score, -1.0), 1.0)));
    Var fm;
    for (std::size_t l = 0; l < fake.features.size(); ++l) {
        const Var gap = ops::mean(ops::abs(ops::subtract(fake.features[l], real.features[l])));
        fm = l == 0 ? gap : ops::add(fm, gap);
    }
    terms.feature_matching = fm;
    return terms;
}

}  // namespace cfm
