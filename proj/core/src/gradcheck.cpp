#include "cfm/gradcheck.hpp"

#include <cmath>

#include "cfm/errors.hpp"
#include "cfm/nets.hpp"
#include "cfm/objectives.hpp"
#include "cfm/ops.hpp"
#include "cfm/rng.hpp"

namespace cfm {

namespace {

using Builder = std::function<Var(const std::vector<Var>&)>;

// Checks d(builder(inputs))/d(inputs) for tensors drawn uniformly in [-2, 2].
struct OpCase {
    std::string name;
    std::vector<Shape> shapes;
    Builder build;
    // Optional transform of the raw inputs, e.g. to keep sqrt's argument positive.
    std::function<void(std::vector<Tensor>&)> prepare;
};

double check_op_instance(const OpCase& op, RngStream& rng, double step) {
    std::vector<Tensor> inputs;
    for (const auto& shape : op.shapes) {
        inputs.push_back(sample_uniform(rng, shape, -2.0, 2.0));
    }
    if (op.prepare) {
        op.prepare(inputs);
    }
    // A random projection turns any output into a scalar without symmetric cancellation.
    Tensor probe;
    {
        std::vector<Var> constants;
        for (const auto& t : inputs) {
            constants.emplace_back(t);
        }
        probe = sample_uniform(rng, op.build(constants).shape(), -1.0, 1.0);
    }
    auto scalar = [&](const std::vector<Var>& vars) { return ops::sum(ops::multiply(op.build(vars), Var(probe))); };

    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) {
        leaves.push_back(tape.leaf(t));
    }
    const Gradients grads = tape.backward(scalar(leaves));

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto f = [&](const Tensor& xk) {
            std::vector<Var> vars;
            for (std::size_t j = 0; j < inputs.size(); ++j) {
                vars.emplace_back(j == k ? xk : inputs[j]);
            }
            return scalar(vars).value().item();
        };
        worst = std::max(worst, relative_gradient_error(grads.wrt(leaves[k]), finite_difference(f, inputs[k], step)));
    }
    return worst;
}

std::vector<OpCase> op_cases() {
    const std::vector<int> ids = {2, 0, 1, 2, 2};
    return {
        {"op.add", {{3, 4}, {3, 4}}, [](const auto& v) { return ops::add(v[0], v[1]); }, {}},
        {"op.subtract", {{3, 4}, {3, 4}}, [](const auto& v) { return ops::subtract(v[0], v[1]); }, {}},
        {"op.multiply", {{3, 4}, {3, 4}}, [](const auto& v) { return ops::multiply(v[0], v[1]); }, {}},
        {"op.multiply_column", {{3, 4}, {3, 1}}, [](const auto& v) { return ops::multiply(v[0], v[1]); }, {}},
        {"op.matmul", {{3, 4}, {4, 5}}, [](const auto& v) { return ops::matmul(v[0], v[1]); }, {}},
        {"op.affine", {{3, 4}, {4, 5}, {5}}, [](const auto& v) { return ops::affine(v[0], v[1], v[2]); }, {}},
        {"op.gelu", {{3, 4}}, [](const auto& v) { return ops::gelu(v[0]); }, {}},
        {"op.tanh", {{3, 4}}, [](const auto& v) { return ops::tanh(v[0]); }, {}},
        {"op.leaky_relu", {{3, 4}}, [](const auto& v) { return ops::leaky_relu(v[0], 0.2); }, {}},
        {"op.square", {{3, 4}}, [](const auto& v) { return ops::square(v[0]); }, {}},
        {"op.sqrt",
         {{3, 4}},
         [](const auto& v) { return ops::sqrt(v[0]); },
         [](std::vector<Tensor>& in) {
             for (double& x : in[0].values()) {
                 x = 0.5 + std::fabs(x);
             }
         }},
        {"op.abs", {{3, 4}}, [](const auto& v) { return ops::abs(v[0]); }, {}},
        {"op.scale", {{3, 4}}, [](const auto& v) { return ops::scale(v[0], -1.7); }, {}},
        {"op.add_scalar", {{3, 4}}, [](const auto& v) { return ops::add_scalar(v[0], 0.3); }, {}},
        {"op.sum", {{3, 4}}, [](const auto& v) { return ops::sum(v[0]); }, {}},
        {"op.mean", {{3, 4}}, [](const auto& v) { return ops::mean(v[0]); }, {}},
        {"op.l2_norm_squared", {{3, 4}}, [](const auto& v) { return ops::l2_norm_squared(v[0]); }, {}},
        {"op.row_sum", {{3, 4}}, [](const auto& v) { return ops::row_sum(v[0]); }, {}},
        {"op.concatenate", {{3, 2}, {3, 4}}, [](const auto& v) { return ops::concatenate({v[0], v[1]}); }, {}},
        {"op.gather_rows", {{3, 4}}, [ids](const auto& v) { return ops::gather_rows(v[0], ids); }, {}},
        {"op.dropout",
         {{3, 4}},
         [](const auto& v) {
             RngStream s(7);
             return ops::dropout(v[0], make_dropout_mask(s, {3, 4}, 0.3));
         },
         {}},
    };
}

VectorFieldConfig small_field(std::size_t conditions) {
    VectorFieldConfig cfg;
    cfg.data_dim = 2;
    cfg.hidden_width = 8;
    cfg.hidden_layers = 2;
    cfg.time_features = 4;
    cfg.condition_dim = 3;
    cfg.num_conditions = conditions;
    return cfg;
}

TrajectoryBatch random_batch(RngStream& rng, std::size_t n, int segments, double delta_t, int conditions) {
    TrajectoryBatch b;
    b.x0 = sample_uniform(rng, {n, 2}, -2.0, 2.0);
    b.x1 = sample_uniform(rng, {n, 2}, -2.0, 2.0);
    b.delta_t = delta_t;
    for (std::size_t r = 0; r < n; ++r) {
        const int i = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(segments)));
        b.segment.push_back(i);
        b.t.push_back(static_cast<double>(i) / segments + rng.next_uniform() * (1.0 / segments - delta_t));
        b.condition.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(conditions))));
    }
    return b;
}

// Worst relative error over every parameter of `params` for a loss builder
// that tracks parameters when handed a tape and treats them as constants otherwise.
double check_parameters(const std::vector<Parameter*>& params, const std::function<Var(Tape*)>& loss, double step) {
    Tape tape;
    const Gradients grads = tape.backward(loss(&tape));
    double worst = 0.0;
    for (Parameter* p : params) {
        if (p->frozen) {
            continue;
        }
        const Tensor* g = grads.find(*p);
        const Tensor analytic = g != nullptr ? *g : Tensor(p->value.shape());
        const Tensor numeric = finite_difference([&] { return loss(nullptr).value().item(); }, *p, step);
        worst = std::max(worst, relative_gradient_error(analytic, numeric));
    }
    return worst;
}

using CompositeCase = std::pair<std::string, std::function<double(RngStream&, double)>>;

std::vector<CompositeCase> composite_cases() {
    std::vector<CompositeCase> cases;

    cases.emplace_back("net.velocity_sq_norm_wrt_x", [](RngStream& rng, double step) {
        auto init = rng.split(1);
        const FlowModel model(small_field(3), init);
        const Tensor x = sample_uniform(rng, {4, 2}, -2.0, 2.0);
        const std::vector<double> t = {0.1, 0.4, 0.7, 0.95};
        const std::vector<int> cond = {0, 1, 2, 1};
        auto f = [&](const Var& xv, Tape* tape) {
            return ops::l2_norm_squared(model.velocity(t, xv, cond, tape));
        };
        Tape tape;
        const Var leaf = tape.leaf(x);
        const Gradients g = tape.backward(f(leaf, &tape));
        const Tensor numeric = finite_difference([&](const Tensor& xs) { return f(Var(xs), nullptr).value().item(); }, x, step);
        return relative_gradient_error(g.wrt(leaf), numeric);
    });

    cases.emplace_back("loss.stage1", [](RngStream& rng, double step) {
        auto init = rng.split(1);
        FlowModel model(small_field(2), init);
        const auto batch = random_batch(rng, 5, 2, 0.0, 2);
        CfmLossConfig cfg;
        cfg.segments = 2;
        return check_parameters(model.parameters(), [&](Tape* tape) { return loss_stage1(model, batch, cfg, tape); }, step);
    });

    for (const Metric metric : {Metric::squared_l2, Metric::pseudo_huber}) {
        const std::string name = metric == Metric::squared_l2 ? "loss.stage2_l2" : "loss.stage2_pseudo_huber";
        cases.emplace_back(name, [metric](RngStream& rng, double step) {
            auto init = rng.split(1);
            FlowModel model(small_field(2), init);
            CfmLossConfig cfg;
            cfg.segments = 2;
            cfg.alpha = 1e-5;
            cfg.metric = metric;
            cfg.huber_c = default_huber_c(2);
            cfg.delta_t = 0.05;
            const auto batch = random_batch(rng, 5, 2, cfg.delta_t, 2);
            const auto masks = model.field().draw_masks(rng, 5, 0.05);
            const FlowModel target = model;
            return check_parameters(
                model.parameters(),
                [&](Tape* tape) { return loss_stage2(model, batch, cfg, tape, {.online_masks = &masks, .target_model = &target}).total; },
                step);
        });
    }

    cases.emplace_back("loss.fm_baseline", [](RngStream& rng, double step) {
        auto init = rng.split(1);
        FlowModel model(small_field(2), init);
        const auto batch = random_batch(rng, 5, 1, 0.0, 2);
        return check_parameters(model.parameters(), [&](Tape* tape) { return loss_fm_baseline(model, batch, tape); },
                                step);
    });

    cases.emplace_back("loss.adversarial_generator", [](RngStream& rng, double step) {
        auto init = rng.split(1);
        FlowModel model(small_field(2), init);
        auto disc_init = rng.split(2);
        const Discriminator disc({.data_dim = 2, .hidden_width = 6, .hidden_layers = 2}, disc_init);
        CfmLossConfig cfg;
        cfg.segments = 2;
        cfg.alpha = 1e-5;
        cfg.delta_t = 0.05;
        const auto batch = random_batch(rng, 5, 2, cfg.delta_t, 2);
        const auto masks = model.field().draw_masks(rng, 5, 0.05);
        const Tensor real = segment_endpoint(batch.segment, cfg.segments, batch.x0, batch.x1);
        const FlowModel target = model;
        return check_parameters(
            model.parameters(),
            [&](Tape* tape) {
                const auto terms = loss_stage2(model, batch, cfg, tape, {.online_masks = &masks, .target_model = &target});
                const auto adv = loss_adversarial(disc, terms.endpoint_estimate, real, nullptr);
                return ops::add(ops::add(ops::scale(terms.total, 3.0), adv.generator),
                                ops::scale(adv.feature_matching, 2.0));
            },
            step);
    });

    cases.emplace_back("loss.adversarial_discriminator", [](RngStream& rng, double step) {
        auto disc_init = rng.split(2);
        Discriminator disc({.data_dim = 2, .hidden_width = 6, .hidden_layers = 2}, disc_init);
        const Tensor fake = sample_uniform(rng, {5, 2}, -2.0, 2.0);
        const Tensor real = sample_uniform(rng, {5, 2}, -2.0, 2.0);
        return check_parameters(
            disc.parameters(), [&](Tape* tape) { return loss_adversarial(disc, Var(fake), real, tape).discriminator; },
            step);
    });

    cases.emplace_back("net.discriminator_real_term", [](RngStream& rng, double step) {
        auto disc_init = rng.split(2);
        Discriminator disc({.data_dim = 2, .hidden_width = 6, .hidden_layers = 2}, disc_init);
        const Tensor x = sample_uniform(rng, {5, 2}, -2.0, 2.0);
        return check_parameters(
            disc.parameters(),
            [&](Tape* tape) {
                const auto out = disc.evaluate(Var(x), tape);
                return ops::l2_norm_squared(ops::add_scalar(ops::scale(out.score, -1.0), 1.0));
            },
            step);
    });

    return cases;
}

}  // namespace

double relative_gradient_error(const Tensor& analytic, const Tensor& numeric) {
    require(analytic.shape() == numeric.shape(), ErrorKind::dimension, "gradient shapes differ");
    double diff = 0.0;
    double na = 0.0;
    double nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double step) {
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double up = f(probe);
        probe[i] = x[i] - step;
        const double down = f(probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

Tensor finite_difference(const std::function<double()>& f, Parameter& param, double step) {
    Tensor grad(param.value.shape());
    for (std::size_t i = 0; i < param.value.size(); ++i) {
        const double original = param.value[i];
        param.value[i] = original + step;
        const double up = f();
        param.value[i] = original - step;
        const double down = f();
        param.value[i] = original;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options) {
    std::vector<GradcheckResult> results;
    RngStream root(options.seed);
    for (const auto& op : op_cases()) {
        GradcheckResult r{.name = op.name};
        RngStream rng = root.split(results.size());
        for (int k = 0; k < options.instances; ++k) {
            r.max_relative_error = std::max(r.max_relative_error, check_op_instance(op, rng, options.step));
            ++r.instances;
        }
        r.passed = r.max_relative_error < options.tolerance;
        results.push_back(r);
    }
    for (const auto& [name, check] : composite_cases()) {
        GradcheckResult r{.name = name};
        RngStream rng = root.split(results.size());
        for (int k = 0; k < options.instances; ++k) {
            r.max_relative_error = std::max(r.max_relative_error, check(rng, options.step));
            ++r.instances;
        }
        r.passed = r.max_relative_error < options.tolerance;
        results.push_back(r);
    }
    return results;
}

}  // namespace cfm
