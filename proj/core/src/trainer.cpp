#include "cfm/trainer.hpp"

#include <chrono>
#include <fstream>
#include <iostream>

#include "cfm/errors.hpp"
#include "cfm/objectives.hpp"
#include "cfm/ops.hpp"
#include "cfm/schedules.hpp"

namespace cfm {

namespace {

constexpr std::uint64_t init_stream_tag = 1;
constexpr std::uint64_t disc_stream_tag = 2;
constexpr std::uint64_t train_stream_tag = 3;

constexpr double collapse_threshold = 1e-6;
constexpr int collapse_patience = 100;

AdamOptions generator_options(const RunConfig& c) {
    return {.learning_rate = c.learning_rate, .clip_norm = c.grad_clip};
}

AdamOptions discriminator_options(const RunConfig& c) {
    return {.learning_rate = c.disc_learning_rate, .clip_norm = c.grad_clip};
}

// Distinct tags give independent children regardless of call order.
RngStream child(std::uint64_t seed, std::uint64_t tag) {
    return RngStream(seed).split(tag);
}

void restore(const std::vector<Parameter*>& params, const Checkpoint& ck) {
    for (Parameter* p : params) {
        const Tensor* t = ck.find(p->name);
        require(t != nullptr, ErrorKind::format, "checkpoint lacks tensor '" + p->name + "'");
        require(t->shape() == p->value.shape(), ErrorKind::format,
                "checkpoint tensor '" + p->name + "' has shape " + shape_string(t->shape()) + ", expected " +
                    shape_string(p->value.shape()));
        p->value = *t;
    }
}

void store_moments(const Adam& opt, const std::string& prefix, Checkpoint& ck) {
    for (const auto& [name, m] : opt.moments()) {
        ck.tensors.emplace_back(prefix + ".m." + name, m.first);
        ck.tensors.emplace_back(prefix + ".v." + name, m.second);
    }
}

std::map<std::string, Adam::Moments> load_moments(const std::string& prefix, const Checkpoint& ck) {
    std::map<std::string, Adam::Moments> out;
    const std::string m_prefix = prefix + ".m.";
    for (const auto& [name, tensor] : ck.tensors) {
        if (name.rfind(m_prefix, 0) != 0) {
            continue;
        }
        const std::string param = name.substr(m_prefix.size());
        const Tensor* second = ck.find(prefix + ".v." + param);
        require(second != nullptr, ErrorKind::format, "checkpoint lacks second moment for " + param);
        out.emplace(param, Adam::Moments{tensor, *second});
    }
    return out;
}

TrajectoryBatch make_batch(PairBatch pairs, TimeSample times, double delta_t) {
    TrajectoryBatch batch;
    batch.x0 = std::move(pairs.x0);
    batch.x1 = std::move(pairs.x1);
    batch.condition = std::move(pairs.condition);
    batch.t = std::move(times.t);
    batch.segment = std::move(times.segment);
    batch.delta_t = delta_t;
    return batch;
}

// Dropout masks for one step. The stop-gradient pass reuses the online masks
// when sharing is on and draws its own otherwise.
struct StepMasks {
    DropoutMaskSet online;
    DropoutMaskSet target;
    bool active = false;
    bool shared = true;

    [[nodiscard]] Stage2Passes passes(MaskProbe* online_probe = nullptr, MaskProbe* target_probe = nullptr) const {
        if (!active) {
            return {.online_probe = online_probe, .target_probe = target_probe};
        }
        return {.online_masks = &online,
                .target_masks = shared ? nullptr : &target,
                .online_probe = online_probe,
                .target_probe = target_probe};
    }
};

StepMasks draw_step_masks(const FlowModel& model, const RunConfig& config, RngStream& rng, std::size_t batch) {
    StepMasks m;
    m.active = config.dropout_rate > 0.0;
    m.shared = config.shared_dropout;
    if (m.active) {
        m.online = model.field().draw_masks(rng, batch, config.dropout_rate);
        if (!m.shared) {
            m.target = model.field().draw_masks(rng, batch, config.dropout_rate);
        }
    }
    return m;
}

class EpochClock {
public:
    EpochClock() : start_(std::chrono::steady_clock::now()) {}
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

template <class Fn>
void with_stage_context(const std::string& stage, int epoch, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::numeric) {
            throw Error(ErrorKind::numeric, "training diverged in " + stage + " at epoch " + std::to_string(epoch) +
                                                ": " + e.what());
        }
        throw;
    }
}

}  // namespace

std::string metrics_csv_header() {
    return "epoch,stage,loss_total,loss_sf,loss_vc,delta_t,wall_seconds";
}

std::string to_csv_line(const MetricsRow& row) {
    return std::to_string(row.epoch) + "," + row.stage + "," + format_real(row.loss_total) + "," +
           format_real(row.loss_sf) + "," + format_real(row.loss_vc) + "," + format_real(row.delta_t) + "," +
           format_real(row.wall_seconds);
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot open '" + path + "' for writing");
    out << metrics_csv_header() << '\n';
    for (const auto& row : rows) {
        out << to_csv_line(row) << '\n';
    }
    require(out.good(), ErrorKind::io, "failed writing '" + path + "'");
}

Trainer::Trainer(const RunConfig& config) : Trainer(config, config.problem_spec()) {}

Trainer::Trainer(const RunConfig& config, const ProblemSpec& spec)
    : config_(config),
      spec_(spec),
      generator_opt_(generator_options(config)),
      discriminator_opt_(discriminator_options(config)),
      rng_(child(config.seed, train_stream_tag)) {
    config_.validate();
    auto init = child(config_.seed, init_stream_tag);
    auto vf = config_.vector_field_config();
    vf.num_conditions = static_cast<std::size_t>(spec_.num_conditions());
    model_ = std::make_unique<FlowModel>(vf, init);
    auto disc_init = child(config_.seed, disc_stream_tag);
    disc_ = std::make_unique<Discriminator>(config_.discriminator_config(), disc_init);
}

Trainer::Trainer(const Checkpoint& ck) : Trainer(ck.config) {
    restore(model_->parameters(), ck);
    restore(disc_->parameters(), ck);
    generator_opt_.set_moments(load_moments("adam.generator", ck));
    generator_opt_.set_steps(ck.generator_steps);
    discriminator_opt_.set_moments(load_moments("adam.discriminator", ck));
    discriminator_opt_.set_steps(ck.discriminator_steps);
    rng_ = RngStream(ck.rng_seed, ck.rng_position);
    stage_ = ck.stage;
    epoch_ = ck.epoch;
    provenance_ = ck.provenance;
}

PairBatch Trainer::draw_pairs() {
    return sample_pairs(spec_, rng_, static_cast<std::size_t>(config_.batch_size));
}

void Trainer::finish_stage(const std::string& stage, int epochs) {
    stage_ = stage;
    epoch_ += epochs;
    if (!provenance_.empty()) {
        provenance_ += ",";
    }
    provenance_ += stage + ":" + std::to_string(epochs);
}

void Trainer::run_stage1() {
    const int epochs = config_.stage1_epochs;
    const int steps = config_.steps_per_epoch();
    auto loss_cfg = config_.loss_config();
    loss_cfg.delta_t = 0.0;
    const TimeSampler sampler(loss_cfg.segments, 0.0);
    model_->embedder().set_frozen(false);
    auto params = model_->parameters();

    for (int epoch = 0; epoch < epochs; ++epoch) {
        EpochClock clock;
        double total = 0.0;
        with_stage_context("stage1", epoch, [&] {
            for (int step = 0; step < steps; ++step) {
                auto pairs = draw_pairs();
                auto times = sampler.sample(rng_, pairs.condition.size());
                const auto batch = make_batch(std::move(pairs), std::move(times), 0.0);
                const auto masks = draw_step_masks(*model_, config_, rng_, batch.size());
                Tape tape;
                const Var loss = loss_stage1(*model_, batch, loss_cfg, &tape, masks.active ? &masks.online : nullptr);
                const double value = loss.value().item();
                generator_opt_.step(params, tape.backward(loss));
                total += value;
                if (observer_) {
                    observer_({.stage = "stage1", .epoch = epoch, .step = step, .loss = value});
                }
            }
        });
        const double mean = total / steps;
        metrics_.push_back({epoch, "stage1", mean, mean, 0.0, 0.0, clock.seconds()});
    }
    finish_stage("stage1", epochs);
}

void Trainer::run_stage2() {
    const int epochs = config_.stage2_epochs;
    const int steps = config_.steps_per_epoch();
    auto loss_cfg = config_.loss_config();
    model_->embedder().set_frozen(config_.freeze_encoder);
    auto params = model_->parameters();

    for (int epoch = 0; epoch < epochs; ++epoch) {
        EpochClock clock;
        loss_cfg.delta_t = config_.delta_for_epoch(epoch);
        const TimeSampler sampler(loss_cfg.segments, loss_cfg.delta_t);
        double total = 0.0;
        double sf = 0.0;
        double vc = 0.0;
        with_stage_context("stage2", epoch, [&] {
            for (int step = 0; step < steps; ++step) {
                auto pairs = draw_pairs();
                auto times = sampler.sample(rng_, pairs.condition.size());
                const auto batch = make_batch(std::move(pairs), std::move(times), loss_cfg.delta_t);
                const auto masks = draw_step_masks(*model_, config_, rng_, batch.size());
                MaskProbe online;
                MaskProbe target;
                Tape tape;
                const auto terms = loss_stage2(*model_, batch, loss_cfg, &tape, masks.passes(&online, &target));
                const double value = terms.total.value().item();
                sf += terms.straight_flow.value().item();
                vc += terms.velocity_consistency.value().item();
                generator_opt_.step(params, tape.backward(terms.total));
                total += value;
                if (observer_) {
                    observer_({.stage = "stage2",
                               .epoch = epoch,
                               .step = step,
                               .delta_t = loss_cfg.delta_t,
                               .loss = value,
                               .online_masks = &online,
                               .target_masks = &target});
                }
            }
        });
        metrics_.push_back({epoch, "stage2", total / steps, sf / steps, vc / steps, loss_cfg.delta_t, clock.seconds()});
    }
    finish_stage("stage2", epochs);
}

void Trainer::run_adversarial() {
    const int epochs = config_.adversarial_epochs;
    const int steps = config_.steps_per_epoch();
    auto loss_cfg = config_.loss_config();
    // Fine-tuning continues at the final delta of the consistency stage.
    loss_cfg.delta_t = config_.delta_scheduling ? config_.delta_end : config_.delta_t;
    const TimeSampler sampler(loss_cfg.segments, loss_cfg.delta_t);
    model_->embedder().set_frozen(config_.freeze_encoder);
    auto gen_params = model_->parameters();
    auto disc_params = disc_->parameters();
    int collapsed_steps = 0;
    bool warned = false;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        EpochClock clock;
        double total = 0.0;
        double sf = 0.0;
        double vc = 0.0;
        with_stage_context("adversarial", epoch, [&] {
            for (int step = 0; step < steps; ++step) {
                auto pairs = draw_pairs();
                auto times = sampler.sample(rng_, pairs.condition.size());
                const auto batch = make_batch(std::move(pairs), std::move(times), loss_cfg.delta_t);
                const auto masks = draw_step_masks(*model_, config_, rng_, batch.size());
                const Tensor real = segment_endpoint(batch.segment, loss_cfg.segments, batch.x0, batch.x1);

                Tape gen_tape;
                Tape disc_tape;
                MaskProbe online;
                MaskProbe target;
                const auto terms = loss_stage2(*model_, batch, loss_cfg, &gen_tape, masks.passes(&online, &target));
                const auto adv = loss_adversarial(*disc_, terms.endpoint_estimate, real, &disc_tape);
                const Var objective =
                    ops::add(ops::add(ops::scale(terms.total, config_.weight_cfm), ops::scale(adv.generator, config_.weight_adv)),
                             ops::scale(adv.feature_matching, config_.weight_fm));
                const double value = objective.value().item();
                const double disc_value = adv.discriminator.value().item();
                generator_opt_.step(gen_params, gen_tape.backward(objective));
                discriminator_opt_.step(disc_params, disc_tape.backward(adv.discriminator));

                total += value;
                sf += terms.straight_flow.value().item();
                vc += terms.velocity_consistency.value().item();
                collapsed_steps = disc_value < collapse_threshold ? collapsed_steps + 1 : 0;
                if (collapsed_steps >= collapse_patience && !warned) {
                    warned = true;
                    warnings_.push_back("discriminator loss below 1e-6 for " + std::to_string(collapse_patience) +
                                        " consecutive steps (epoch " + std::to_string(epoch) + ")");
                    std::cerr << "warning: " << warnings_.back() << '\n';
                }
                if (observer_) {
                    observer_({.stage = "adversarial",
                               .epoch = epoch,
                               .step = step,
                               .delta_t = loss_cfg.delta_t,
                               .loss = value,
                               .discriminator_loss = disc_value,
                               .online_masks = &online,
                               .target_masks = &target});
                }
            }
        });
        metrics_.push_back(
            {epoch, "adversarial", total / steps, sf / steps, vc / steps, loss_cfg.delta_t, clock.seconds()});
    }
    finish_stage("adversarial", epochs);
}

void Trainer::run_fm_baseline(int epochs) {
    require(epochs >= 0, ErrorKind::config, "epoch count must be nonnegative");
    const int steps = config_.steps_per_epoch();
    const TimeSampler sampler(1, 0.0);
    model_->embedder().set_frozen(false);
    auto params = model_->parameters();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        EpochClock clock;
        double total = 0.0;
        with_stage_context("fm-baseline", epoch, [&] {
            for (int step = 0; step < steps; ++step) {
                auto pairs = draw_pairs();
                auto times = sampler.sample(rng_, pairs.condition.size());
                const auto batch = make_batch(std::move(pairs), std::move(times), 0.0);
                Tape tape;
                const Var loss = loss_fm_baseline(*model_, batch, &tape);
                const double value = loss.value().item();
                generator_opt_.step(params, tape.backward(loss));
                total += value;
                if (observer_) {
                    observer_({.stage = "fm-baseline", .epoch = epoch, .step = step, .loss = value});
                }
            }
        });
        metrics_.push_back({epoch, "fm-baseline", total / steps, 0.0, 0.0, 0.0, clock.seconds()});
    }
    finish_stage("fm-baseline", epochs);
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.config = config_;
    ck.stage = stage_;
    ck.epoch = epoch_;
    ck.provenance = provenance_;
    ck.rng_seed = rng_.seed();
    ck.rng_position = rng_.position();
    ck.generator_steps = generator_opt_.steps();
    ck.discriminator_steps = discriminator_opt_.steps();
    for (const Parameter* p : model_->parameters()) {
        ck.tensors.emplace_back(p->name, p->value);
    }
    for (const Parameter* p : static_cast<const Discriminator&>(*disc_).parameters()) {
        ck.tensors.emplace_back(p->name, p->value);
    }
    store_moments(generator_opt_, "adam.generator", ck);
    store_moments(discriminator_opt_, "adam.discriminator", ck);
    return ck;
}

Checkpoint train_stage1(const RunConfig& config, const ProblemSpec& spec) {
    Trainer trainer(config, spec);
    trainer.run_stage1();
    return trainer.checkpoint();
}

Checkpoint train_stage2(const RunConfig& config, const ProblemSpec& spec, const Checkpoint& init) {
    Checkpoint start = init;
    start.config = config;
    Trainer trainer(start);
    require(trainer.problem().kind == spec.kind, ErrorKind::config, "problem differs from the configuration");
    trainer.run_stage2();
    return trainer.checkpoint();
}

Checkpoint train_adversarial(const RunConfig& config, const ProblemSpec& spec, const Checkpoint& init) {
    Checkpoint start = init;
    start.config = config;
    Trainer trainer(start);
    require(trainer.problem().kind == spec.kind, ErrorKind::config, "problem differs from the configuration");
    trainer.run_adversarial();
    return trainer.checkpoint();
}

FlowModel model_from_checkpoint(const Checkpoint& checkpoint) {
    auto vf = checkpoint.config.vector_field_config();
    vf.num_conditions = static_cast<std::size_t>(checkpoint.config.problem_spec().num_conditions());
    RngStream init(0);
    FlowModel model(vf, init);
    restore(model.parameters(), checkpoint);
    return model;
}

}  // namespace cfm
