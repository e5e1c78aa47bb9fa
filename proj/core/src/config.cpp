#include "cfm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "cfm/errors.hpp"

namespace cfm {

namespace {

struct Field {
    ConfigKeyInfo info;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, ValueType type) {
    fail(ErrorKind::config, "key '" + std::string(key) + "' expects " + std::string(to_string(type)) + ", got '" +
                                std::string(value) + "'");
}

template <class T>
T parse_number(std::string_view key, std::string_view value, ValueType type) {
    T out{};
    const auto* begin = value.data();
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc{} || ptr != end || value.empty()) {
        bad_value(key, value, type);
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
    if (value == "true") return true;
    if (value == "false") return false;
    bad_value(key, value, ValueType::boolean);
}

Field int_field(std::string key, int RunConfig::*member, std::string description) {
    const RunConfig defaults;
    return {{key, ValueType::integer, std::to_string(defaults.*member), std::move(description)},
            [member](const RunConfig& c) { return std::to_string(c.*member); },
            [member, key](RunConfig& c, std::string_view v) { c.*member = parse_number<int>(key, v, ValueType::integer); }};
}

Field u64_field(std::string key, std::uint64_t RunConfig::*member, std::string description) {
    const RunConfig defaults;
    return {{key, ValueType::unsigned_integer, std::to_string(defaults.*member), std::move(description)},
            [member](const RunConfig& c) { return std::to_string(c.*member); },
            [member, key](RunConfig& c, std::string_view v) {
                c.*member = parse_number<std::uint64_t>(key, v, ValueType::unsigned_integer);
            }};
}

Field real_field(std::string key, double RunConfig::*member, std::string description) {
    const RunConfig defaults;
    return {{key, ValueType::real, format_real(defaults.*member), std::move(description)},
            [member](const RunConfig& c) { return format_real(c.*member); },
            [member, key](RunConfig& c, std::string_view v) { c.*member = parse_number<double>(key, v, ValueType::real); }};
}

Field bool_field(std::string key, bool RunConfig::*member, std::string description) {
    const RunConfig defaults;
    return {{key, ValueType::boolean, defaults.*member ? "true" : "false", std::move(description)},
            [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); },
            [member, key](RunConfig& c, std::string_view v) { c.*member = parse_bool(key, v); }};
}

Field text_field(std::string key, std::string RunConfig::*member, std::string description) {
    const RunConfig defaults;
    return {{key, ValueType::text, defaults.*member, std::move(description)},
            [member](const RunConfig& c) { return c.*member; },
            [member](RunConfig& c, std::string_view v) { c.*member = std::string(v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        u64_field("run.seed", &RunConfig::seed, "master seed for initialisation, data and dropout"),
        int_field("run.batch_size", &RunConfig::batch_size, "samples per optimisation step"),
        real_field("run.learning_rate", &RunConfig::learning_rate, "Adam learning rate for the flow model"),
        real_field("run.grad_clip", &RunConfig::grad_clip, "global gradient-norm clip (0 disables)"),

        text_field("data.problem", &RunConfig::problem,
                   "target: single-point, eight-gaussians, two-moons or checkerboard"),
        int_field("data.samples_per_epoch", &RunConfig::samples_per_epoch, "training pairs drawn per epoch"),
        real_field("data.point_x", &RunConfig::point_x, "single-point target, x coordinate"),
        real_field("data.point_y", &RunConfig::point_y, "single-point target, y coordinate"),
        real_field("data.ring_radius", &RunConfig::ring_radius, "eight-gaussians ring radius"),
        real_field("data.gaussian_sigma", &RunConfig::gaussian_sigma, "eight-gaussians component std-dev"),
        real_field("data.moon_scale", &RunConfig::moon_scale, "two-moons scale factor"),
        real_field("data.moon_noise", &RunConfig::moon_noise, "two-moons jitter std-dev"),

        int_field("stages.stage1_epochs", &RunConfig::stage1_epochs, "straight-flow epochs"),
        int_field("stages.stage2_epochs", &RunConfig::stage2_epochs, "consistency epochs (N for delta bins)"),
        int_field("stages.adversarial_epochs", &RunConfig::adversarial_epochs, "adversarial fine-tuning epochs"),

        int_field("model.hidden_width", &RunConfig::hidden_width, "vector-field hidden units per layer"),
        int_field("model.hidden_layers", &RunConfig::hidden_layers, "vector-field hidden layers"),
        int_field("model.time_features", &RunConfig::time_features, "sinusoidal time feature width (even)"),
        int_field("model.condition_dim", &RunConfig::condition_dim, "condition embedding width"),
        text_field("model.activation", &RunConfig::activation, "hidden activation: gelu or tanh"),
        bool_field("model.zero_output_head", &RunConfig::zero_output_head, "zero-initialise the output layer"),

        int_field("objective.segments", &RunConfig::segments, "segment count S"),
        real_field("objective.alpha", &RunConfig::alpha, "velocity-consistency weight"),
        text_field("objective.metric", &RunConfig::metric, "distance: squared-l2 or pseudo-huber"),
        real_field("objective.huber_c", &RunConfig::huber_c, "pseudo-Huber c (0 = 0.00054*sqrt(d))"),
        bool_field("objective.freeze_encoder", &RunConfig::freeze_encoder, "freeze the condition embedder after stage 1"),
        real_field("objective.dropout_rate", &RunConfig::dropout_rate, "dropout rate of the vector field during training"),
        bool_field("objective.shared_dropout", &RunConfig::shared_dropout,
                   "apply one dropout mask to both consistency passes"),

        bool_field("schedule.delta_scheduling", &RunConfig::delta_scheduling, "anneal delta_t over bins"),
        real_field("schedule.delta_t", &RunConfig::delta_t, "fixed delta_t when scheduling is off"),
        real_field("schedule.delta_start", &RunConfig::delta_start, "first-bin delta_t"),
        real_field("schedule.delta_end", &RunConfig::delta_end, "last-bin delta_t"),
        int_field("schedule.delta_bins", &RunConfig::delta_bins, "bin count K"),
        text_field("schedule.delta_mode", &RunConfig::delta_mode, "bin spacing: linear or exponential"),

        int_field("adversarial.disc_hidden_width", &RunConfig::disc_hidden_width, "discriminator hidden units"),
        int_field("adversarial.disc_hidden_layers", &RunConfig::disc_hidden_layers,
                  "discriminator hidden layers (feature maps)"),
        real_field("adversarial.disc_learning_rate", &RunConfig::disc_learning_rate, "discriminator learning rate"),
        bool_field("adversarial.disc_zero_output_head", &RunConfig::disc_zero_output_head,
                   "zero-initialise the discriminator score layer"),
        real_field("adversarial.weight_cfm", &RunConfig::weight_cfm, "generator weight on the consistency loss"),
        real_field("adversarial.weight_adv", &RunConfig::weight_adv, "generator weight on the adversarial loss"),
        real_field("adversarial.weight_fm", &RunConfig::weight_fm, "generator weight on feature matching"),

        int_field("eval.nfe", &RunConfig::eval_nfe, "Euler steps used by eval"),
        int_field("eval.samples_per_condition", &RunConfig::eval_samples_per_condition,
                  "generated samples per condition"),
        int_field("eval.projections", &RunConfig::eval_projections, "sliced Wasserstein projections"),
    };
    return table;
}

const Field& field_for(std::string_view key) {
    for (const Field& f : fields()) {
        if (f.info.key == key) {
            return f;
        }
    }
    fail(ErrorKind::config, "unknown configuration key '" + std::string(key) + "'");
}

}  // namespace

std::string format_real(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    require(ec == std::errc{}, ErrorKind::contract, "failed to format real");
    return std::string(buf, ptr);
}

std::string_view to_string(ValueType type) {
    switch (type) {
        case ValueType::integer: return "integer";
        case ValueType::unsigned_integer: return "unsigned integer";
        case ValueType::real: return "real";
        case ValueType::boolean: return "boolean";
        case ValueType::text: return "text";
    }
    return "unknown";
}

const std::vector<ConfigKeyInfo>& config_schema() {
    static const std::vector<ConfigKeyInfo> infos = [] {
        std::vector<ConfigKeyInfo> out;
        for (const Field& f : fields()) {
            out.push_back(f.info);
        }
        return out;
    }();
    return infos;
}

void set_value(RunConfig& config, std::string_view key, std::string_view value) {
    field_for(key).set(config, trim(value));
}

std::string get_value(const RunConfig& config, std::string_view key) {
    return field_for(key).get(config);
}

void apply_override(RunConfig& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string_view::npos, ErrorKind::config,
            "override '" + std::string(assignment) + "' is not of the form section.key=value");
    set_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::string section;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#' || line.front() == ';') {
            continue;
        }
        if (line.front() == '[') {
            require(line.back() == ']' && line.size() > 2, ErrorKind::format,
                    "line " + std::to_string(line_no) + ": malformed section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string_view::npos, ErrorKind::format,
                "line " + std::to_string(line_no) + ": expected key = value");
        require(!section.empty(), ErrorKind::format, "line " + std::to_string(line_no) + ": key outside a section");
        const auto key = trim(line.substr(0, eq));
        require(!key.empty(), ErrorKind::format, "line " + std::to_string(line_no) + ": empty key");
        out.emplace_back(section + "." + std::string(key), std::string(trim(line.substr(eq + 1))));
    }
    return out;
}

RunConfig parse_config(std::string_view text, std::map<std::string, std::string>* extra) {
    RunConfig config;
    for (const auto& [key, value] : parse_key_values(text)) {
        if (extra != nullptr && key.rfind("checkpoint.", 0) == 0) {
            (*extra)[key] = value;
            continue;
        }
        set_value(config, key, value);
    }
    config.validate();
    return config;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void RunConfig::validate() const {
    require(batch_size > 0, ErrorKind::config, "run.batch_size must be positive");
    require(learning_rate > 0.0 && disc_learning_rate > 0.0, ErrorKind::config, "learning rates must be positive");
    require(grad_clip >= 0.0, ErrorKind::config, "run.grad_clip must be nonnegative");
    parse_problem_kind(problem);
    require(samples_per_epoch > 0, ErrorKind::config, "data.samples_per_epoch must be positive");
    require(stage1_epochs >= 0 && stage2_epochs >= 0 && adversarial_epochs >= 0, ErrorKind::config,
            "epoch counts must be nonnegative");
    require(hidden_width > 0 && hidden_layers > 0 && condition_dim > 0, ErrorKind::config,
            "model sizes must be positive");
    require(time_features >= 2 && time_features % 2 == 0, ErrorKind::config,
            "model.time_features must be a positive even number");
    require(activation == "gelu" || activation == "tanh", ErrorKind::config, "model.activation must be gelu or tanh");
    require(segments >= 1, ErrorKind::config, "objective.segments must be at least 1");
    require(alpha >= 0.0, ErrorKind::config, "objective.alpha must be nonnegative");
    require(metric == "squared-l2" || metric == "pseudo-huber", ErrorKind::config,
            "objective.metric must be squared-l2 or pseudo-huber");
    require(huber_c >= 0.0, ErrorKind::config, "objective.huber_c must be nonnegative");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorKind::config, "objective.dropout_rate must lie in [0, 1)");
    require(delta_t >= 0.0 && delta_t < 1.0 / segments, ErrorKind::config,
            "schedule.delta_t must lie in [0, 1/segments)");
    require(delta_mode == "linear" || delta_mode == "exponential", ErrorKind::config,
            "schedule.delta_mode must be linear or exponential");
    require(delta_bins >= 1, ErrorKind::config, "schedule.delta_bins must be positive");
    require(delta_start > 0.0 && delta_end > 0.0 && delta_start < 1.0 / segments, ErrorKind::config,
            "schedule delta values must be positive and fit inside a segment");
    require(delta_bins == 1 || delta_start > delta_end, ErrorKind::config,
            "schedule.delta_start must exceed schedule.delta_end");
    require(disc_hidden_width > 0 && disc_hidden_layers > 0, ErrorKind::config, "discriminator sizes must be positive");
    require(weight_cfm >= 0.0 && weight_adv >= 0.0 && weight_fm >= 0.0, ErrorKind::config,
            "loss weights must be nonnegative");
    require(eval_nfe >= 1 && eval_samples_per_condition > 0 && eval_projections > 0, ErrorKind::config,
            "eval settings must be positive");
}

int RunConfig::steps_per_epoch() const {
    return (samples_per_epoch + batch_size - 1) / batch_size;
}

ProblemSpec RunConfig::problem_spec() const {
    ProblemSpec spec = ProblemSpec::named(problem);
    spec.point = {point_x, point_y};
    spec.ring_radius = ring_radius;
    spec.gaussian_sigma = gaussian_sigma;
    spec.moon_scale = moon_scale;
    spec.moon_noise = moon_noise;
    spec.samples_per_epoch = static_cast<std::size_t>(samples_per_epoch);
    return spec;
}

VectorFieldConfig RunConfig::vector_field_config() const {
    VectorFieldConfig cfg;
    cfg.data_dim = 2;
    cfg.hidden_width = static_cast<std::size_t>(hidden_width);
    cfg.hidden_layers = static_cast<std::size_t>(hidden_layers);
    cfg.time_features = static_cast<std::size_t>(time_features);
    cfg.condition_dim = static_cast<std::size_t>(condition_dim);
    cfg.num_conditions = static_cast<std::size_t>(problem_spec().num_conditions());
    cfg.activation = activation == "tanh" ? ops::Activation::tanh : ops::Activation::gelu;
    cfg.zero_output_head = zero_output_head;
    return cfg;
}

DiscriminatorConfig RunConfig::discriminator_config() const {
    DiscriminatorConfig cfg;
    cfg.data_dim = 2;
    cfg.hidden_width = static_cast<std::size_t>(disc_hidden_width);
    cfg.hidden_layers = static_cast<std::size_t>(disc_hidden_layers);
    cfg.zero_output_head = disc_zero_output_head;
    return cfg;
}

CfmLossConfig RunConfig::loss_config() const {
    CfmLossConfig cfg;
    cfg.segments = segments;
    cfg.alpha = alpha;
    cfg.metric = metric == "pseudo-huber" ? Metric::pseudo_huber : Metric::squared_l2;
    cfg.huber_c = huber_c > 0.0 ? huber_c : default_huber_c(2);
    cfg.delta_t = delta_t;
    return cfg;
}

DeltaSchedule RunConfig::delta_schedule() const {
    DeltaSchedule schedule;
    schedule.start = delta_start;
    schedule.end = delta_end;
    schedule.bins = delta_bins;
    schedule.total_epochs = std::max(stage2_epochs, 1);
    schedule.mode = delta_mode == "exponential" ? DeltaMode::exponential_step : DeltaMode::linear_step;
    return schedule;
}

double RunConfig::delta_for_epoch(int epoch) const {
    return delta_scheduling ? delta_at(delta_schedule(), epoch) : delta_t;
}

std::string RunConfig::canonical_text() const {
    std::ostringstream out;
    std::string section;
    for (const Field& f : fields()) {
        const auto dot = f.info.key.find('.');
        const std::string sec = f.info.key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) {
                out << '\n';
            }
            out << '[' << sec << "]\n";
            section = sec;
        }
        out << f.info.key.substr(dot + 1) << " = " << f.get(*this) << '\n';
    }
    return out.str();
}

}  // namespace cfm
