#pragma once

#include <cstdint>
#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cfm/data.hpp"
#include "cfm/nets.hpp"
#include "cfm/objectives.hpp"
#include "cfm/schedules.hpp"

namespace cfm {

/// Everything that determines a run. Serialised as sectioned `key = value`
/// text; the canonical form lists every key so a snapshot reproduces the run.
struct RunConfig {
    // [run]
    std::uint64_t seed = 0;
    int batch_size = 16;
    double learning_rate = 1e-4;
    double grad_clip = 1.0;

    // [data]
    std::string problem = "two-moons";
    int samples_per_epoch = 1024;
    double point_x = 1.5;
    double point_y = -0.5;
    double ring_radius = 2.0;
    double gaussian_sigma = 0.1;
    double moon_scale = 2.0;
    double moon_noise = 0.1;

    // [stages]
    int stage1_epochs = 50;
    int stage2_epochs = 50;
    int adversarial_epochs = 10;

    // [model]
    int hidden_width = 128;
    int hidden_layers = 3;
    int time_features = 16;
    int condition_dim = 8;
    std::string activation = "gelu";
    bool zero_output_head = false;

    // [objective]
    int segments = 2;
    double alpha = 1e-5;
    std::string metric = "squared-l2";
    // 0 selects 0.00054 * sqrt(d).
    double huber_c = 0.0;
    bool freeze_encoder = true;
    double dropout_rate = 0.05;
    bool shared_dropout = true;

    // [schedule]
    bool delta_scheduling = false;
    double delta_t = 0.01;
    double delta_start = 0.1;
    double delta_end = 0.001;
    int delta_bins = 8;
    std::string delta_mode = "linear";

    // [adversarial]
    int disc_hidden_width = 64;
    int disc_hidden_layers = 3;
    double disc_learning_rate = 1e-4;
    bool disc_zero_output_head = false;
    double weight_cfm = 3.0;
    double weight_adv = 1.0;
    double weight_fm = 2.0;

    // [eval]
    int eval_nfe = 2;
    int eval_samples_per_condition = 2048;
    int eval_projections = 64;

    void validate() const;

    [[nodiscard]] int steps_per_epoch() const;
    [[nodiscard]] ProblemSpec problem_spec() const;
    [[nodiscard]] VectorFieldConfig vector_field_config() const;
    [[nodiscard]] DiscriminatorConfig discriminator_config() const;
    [[nodiscard]] CfmLossConfig loss_config() const;
    [[nodiscard]] DeltaSchedule delta_schedule() const;
    // delta_t used during a stage-2 epoch (scheduled or fixed).
    [[nodiscard]] double delta_for_epoch(int epoch) const;

    [[nodiscard]] std::string canonical_text() const;
};

enum class ValueType { integer, unsigned_integer, real, boolean, text };
std::string_view to_string(ValueType type);

struct ConfigKeyInfo {
    std::string key;  // "section.name"
    ValueType type;
    std::string default_value;
    std::string description;
};

/// All keys with defaults and descriptions, in canonical order.
const std::vector<ConfigKeyInfo>& config_schema();

/// Applies one dotted override, e.g. "objective.alpha=1e-4". Unknown keys
/// and ill-typed values raise config errors.
void apply_override(RunConfig& config, std::string_view assignment);
void set_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_value(const RunConfig& config, std::string_view key);

/// Parsed `[section]` / `key = value` text, keys flattened to "section.key".
/// Syntax errors raise format errors.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

/// Parses config text. When `extra` is given, keys of a `[checkpoint]`
/// section are collected there instead of being rejected.
RunConfig parse_config(std::string_view text, std::map<std::string, std::string>* extra = nullptr);
RunConfig load_config(const std::string& path);

std::string format_real(double value);

}  // namespace cfm
