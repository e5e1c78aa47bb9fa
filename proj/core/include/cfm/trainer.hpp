#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cfm/checkpoint.hpp"
#include "cfm/config.hpp"
#include "cfm/data.hpp"
#include "cfm/nets.hpp"
#include "cfm/optimizer.hpp"
#include "cfm/rng.hpp"

namespace cfm {

/// One row of the metrics log (one per epoch).
struct MetricsRow {
    int epoch = 0;
    std::string stage;
    double loss_total = 0.0;
    double loss_sf = 0.0;
    double loss_vc = 0.0;
    double delta_t = 0.0;
    double wall_seconds = 0.0;
};

std::string metrics_csv_header();
std::string to_csv_line(const MetricsRow& row);
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);

/// Per-step view handed to an observer, mostly for tests.
struct StepInfo {
    std::string stage;
    int epoch = 0;
    int step = 0;
    double delta_t = 0.0;
    double loss = 0.0;
    double discriminator_loss = 0.0;
    const MaskProbe* online_masks = nullptr;
    const MaskProbe* target_masks = nullptr;
};
using StepObserver = std::function<void(const StepInfo&)>;

/// Owns the networks, optimizers and the training stream, and runs the
/// stages in order: straight flow, consistency, adversarial fine-tuning.
class Trainer {
public:
    Trainer(const RunConfig& config, const ProblemSpec& spec);
    explicit Trainer(const RunConfig& config);
    explicit Trainer(const Checkpoint& checkpoint);

    // Straight-flow regression onto segment endpoints.
    void run_stage1();
    // L_sf + alpha * L_vc with delta_t per epoch, optional encoder freeze and
    // shared dropout between the tracked and stop-gradient passes.
    void run_stage2();
    // Generator: w_cfm * L_cfm + w_adv * L_gen + w_fm * L_fm on segment
    // endpoints; discriminator updated once per generator step.
    void run_adversarial();
    // Plain flow matching, used as the comparison baseline.
    void run_fm_baseline(int epochs);

    [[nodiscard]] Checkpoint checkpoint() const;

    [[nodiscard]] const RunConfig& config() const noexcept { return config_; }
    [[nodiscard]] const ProblemSpec& problem() const noexcept { return spec_; }
    FlowModel& model() noexcept { return *model_; }
    [[nodiscard]] const FlowModel& model() const noexcept { return *model_; }
    Discriminator& discriminator() noexcept { return *disc_; }
    [[nodiscard]] const std::vector<MetricsRow>& metrics() const noexcept { return metrics_; }
    [[nodiscard]] const std::vector<std::string>& warnings() const noexcept { return warnings_; }
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

    void set_step_observer(StepObserver observer) { observer_ = std::move(observer); }

private:
    void finish_stage(const std::string& stage, int epochs);
    PairBatch draw_pairs();

    RunConfig config_;
    ProblemSpec spec_;
    std::unique_ptr<FlowModel> model_;
    std::unique_ptr<Discriminator> disc_;
    Adam generator_opt_;
    Adam discriminator_opt_;
    RngStream rng_;
    std::string stage_ = "init";
    int epoch_ = 0;
    std::string provenance_;
    std::vector<MetricsRow> metrics_;
    std::vector<std::string> warnings_;
    StepObserver observer_;
};

Checkpoint train_stage1(const RunConfig& config, const ProblemSpec& spec);
Checkpoint train_stage2(const RunConfig& config, const ProblemSpec& spec, const Checkpoint& init);
Checkpoint train_adversarial(const RunConfig& config, const ProblemSpec& spec, const Checkpoint& init);

/// Rebuilds the flow model stored in a checkpoint.
FlowModel model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace cfm
