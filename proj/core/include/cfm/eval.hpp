#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cfm/checkpoint.hpp"
#include "cfm/config.hpp"
#include "cfm/data.hpp"
#include "cfm/nets.hpp"
#include "cfm/tensor.hpp"

namespace cfm {

/// Energy distance 2 E|A - B| - E|A - A'| - E|B - B'| between two sample
/// sets (rows are points), using all pairs including the diagonal so the
/// value is nonnegative and exactly zero for identical multisets.
double energy_distance(const Tensor& a, const Tensor& b);

/// Sliced 2-Wasserstein distance over `projections` random unit directions
/// drawn from `seed`. Unequal set sizes are matched by quantiles.
double sliced_wasserstein(const Tensor& a, const Tensor& b, int projections, std::uint64_t seed);

struct EvalRow {
    std::string model_id;
    int nfe = 0;
    std::uint64_t seed = 0;
    double energy_distance = 0.0;
    double sliced_w2 = 0.0;
    double straightness = 0.0;
    std::size_t samples = 0;
    double wall_seconds = 0.0;
};

/// Rows keyed uniquely by (model_id, nfe, seed).
class EvalReport {
public:
    void add(EvalRow row);
    [[nodiscard]] const std::vector<EvalRow>& rows() const noexcept { return rows_; }
    [[nodiscard]] const EvalRow* find(const std::string& model_id, int nfe, std::uint64_t seed) const;
    [[nodiscard]] std::vector<double> energy_distances(const std::string& model_id, int nfe) const;
    void merge(const EvalReport& other);

    [[nodiscard]] std::string to_csv() const;
    static EvalReport from_csv(std::string_view text);
    void write_csv(const std::string& path) const;

private:
    std::vector<EvalRow> rows_;
};

std::string eval_csv_header();

struct EvalOptions {
    int samples_per_condition = 2048;
    int projections = 64;
    std::uint64_t projection_seed = 0x51CED;
};

/// Generated and reference samples for one evaluation seed.
struct GeneratedSet {
    std::vector<int> condition;
    Tensor generated;  // [n, 2]
    Tensor target;     // [n, 2], same condition layout
    double straightness = 0.0;
};

GeneratedSet generate_for_eval(const FlowModel& model, const ProblemSpec& spec, int nfe, std::uint64_t seed,
                               int samples_per_condition);

/// Metrics are computed per condition and averaged over conditions.
EvalRow evaluate_model(const FlowModel& model, const ProblemSpec& spec, const std::string& model_id, int nfe,
                       std::uint64_t seed, const EvalOptions& options);

EvalReport nfe_sweep(const Checkpoint& checkpoint, const ProblemSpec& spec, std::span<const int> nfe_list,
                     std::span<const std::uint64_t> seeds, const EvalOptions& options,
                     const std::string& model_id = "model");

/// One row of the ablation ladder: which techniques a preset turns on.
struct AblationPreset {
    std::string id;
    std::string description;
    bool consistency = false;
    bool freeze_encoder = false;
    bool shared_dropout = false;
    bool huber = false;
    bool delta_scheduling = false;
    bool exponential_schedule = false;
    bool adversarial = false;

    [[nodiscard]] RunConfig apply(RunConfig base) const;
};

/// A, B, C, D, E, F, F-exp, G, H.
std::vector<AblationPreset> ablation_presets();

using ProgressFn = std::function<void(const std::string&)>;

/// Trains every preset per seed (stage 1 shared by all presets of a seed) and
/// evaluates at `base.eval_nfe`.
EvalReport ablation_ladder(const RunConfig& base, std::span<const std::uint64_t> seeds, const EvalOptions& options,
                           const ProgressFn& progress = {});

double median(std::vector<double> values);

}  // namespace cfm
