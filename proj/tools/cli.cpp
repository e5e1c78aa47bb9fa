#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "cfm/checkpoint.hpp"
#include "cfm/config.hpp"
#include "cfm/errors.hpp"
#include "cfm/eval.hpp"
#include "cfm/gradcheck.hpp"
#include "cfm/rng.hpp"
#include "cfm/sampler.hpp"
#include "cfm/trainer.hpp"

namespace fs = std::filesystem;

namespace cfm::cli {

namespace {

// Raised by the front end itself; carries the exit code directly.
struct Failure {
    int code;
    std::string message;
};

struct Options {
    std::string config_path;
    std::string output_dir;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string checkpoint;
    int nfe = 0;
    std::vector<int> nfe_list = {1, 2, 4, 10};
    std::vector<std::uint64_t> seeds = {0};
    std::string stages = "stage1,stage2,adversarial";
    int baseline_epochs = -1;
    int samples = 256;
    std::string model_id = "model";
    int instances = 20;
};

std::string code_name(int code) {
    switch (code) {
        case exit_ok: return "ok";
        case exit_usage: return "usage";
        case exit_config_not_found: return "config-not-found";
        case exit_config_parse: return "config-parse";
        case exit_config_schema: return "config-schema";
        case exit_io: return "io";
        case exit_checkpoint: return "checkpoint";
        case exit_numeric: return "numeric";
        case exit_gradcheck: return "gradcheck";
        default: return "internal";
    }
}

int code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return exit_config_schema;
        case ErrorKind::io: return exit_io;
        case ErrorKind::format:
        case ErrorKind::checksum: return exit_checkpoint;
        case ErrorKind::numeric: return exit_numeric;
        default: return exit_internal;
    }
}

void print_error(std::ostream& err, int code, const std::string& message) {
    std::string escaped;
    for (char c : message) {
        if (c == '"' || c == '\\') {
            escaped += '\\';
        }
        escaped += c == '\n' ? ' ' : c;
    }
    err << "error: code=" << code_name(code) << " exit=" << code << " message=\"" << escaped << "\"\n";
}

RunConfig resolve_config(const Options& o) {
    RunConfig config;
    if (!o.config_path.empty()) {
        if (!fs::exists(o.config_path)) {
            throw Failure{exit_config_not_found, "config file '" + o.config_path + "' not found"};
        }
        try {
            config = load_config(o.config_path);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::format) {
                throw Failure{exit_config_parse, e.what()};
            }
            if (e.kind() == ErrorKind::io) {
                throw Failure{exit_io, e.what()};
            }
            throw Failure{exit_config_schema, e.what()};
        }
    }
    try {
        for (const auto& assignment : o.overrides) {
            apply_override(config, assignment);
        }
        if (o.seed_given) {
            config.seed = o.seed;
        }
        config.validate();
    } catch (const Error& e) {
        throw Failure{exit_config_schema, e.what()};
    }
    return config;
}

fs::path output_dir(const Options& o) {
    fs::path dir = o.output_dir;
    if (dir.empty()) {
        const char* root = std::getenv(output_root_env);
        dir = root != nullptr && *root != '\0' ? fs::path(root) : fs::path("cfm-output");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec && fs::is_directory(dir), ErrorKind::io, "cannot create output directory '" + dir.string() + "'");
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out << text;
    require(out.good(), ErrorKind::io, "failed writing '" + path.string() + "'");
}

void write_snapshot(const fs::path& dir, const RunConfig& config) {
    write_text(dir / "resolved.cfg", config.canonical_text());
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::string default_checkpoint(const Options& o, const fs::path& dir) {
    return o.checkpoint.empty() ? (dir / "model.ckpt").string() : o.checkpoint;
}

// Checkpoint weights with the run settings taken from the resolved config.
Checkpoint checkpoint_for(const Options& o, const fs::path& dir, const RunConfig& config) {
    Checkpoint ck = load_checkpoint(default_checkpoint(o, dir));
    const RunConfig& stored = ck.config;
    require(stored.problem == config.problem && stored.hidden_width == config.hidden_width &&
                stored.hidden_layers == config.hidden_layers && stored.time_features == config.time_features &&
                stored.condition_dim == config.condition_dim && stored.activation == config.activation,
            ErrorKind::config, "checkpoint architecture or problem differs from the resolved config");
    return ck;
}

int cmd_train(const Options& o, std::ostream& out) {
    const RunConfig config = resolve_config(o);
    const fs::path dir = output_dir(o);
    write_snapshot(dir, config);
    std::unique_ptr<Trainer> trainer;
    if (o.checkpoint.empty()) {
        trainer = std::make_unique<Trainer>(config);
    } else {
        Checkpoint start = load_checkpoint(o.checkpoint);
        start.config = config;
        trainer = std::make_unique<Trainer>(start);
    }
    for (const auto& stage : split_list(o.stages)) {
        if (stage == "stage1") {
            trainer->run_stage1();
        } else if (stage == "stage2") {
            trainer->run_stage2();
        } else if (stage == "adversarial") {
            trainer->run_adversarial();
        } else if (stage == "fm-baseline") {
            trainer->run_fm_baseline(o.baseline_epochs >= 0 ? o.baseline_epochs
                                                            : config.stage1_epochs + config.stage2_epochs);
        } else {
            throw Failure{exit_usage, "unknown stage '" + stage + "'"};
        }
        save_checkpoint(trainer->checkpoint(), (dir / (stage + ".ckpt")).string());
        out << "stage " << stage << " done, epoch " << trainer->checkpoint().epoch << '\n';
    }
    save_checkpoint(trainer->checkpoint(), (dir / "model.ckpt").string());
    write_metrics_csv(trainer->metrics(), (dir / "metrics.csv").string());
    for (const auto& w : trainer->warnings()) {
        out << "warning: " << w << '\n';
    }
    out << "wrote " << (dir / "model.ckpt").string() << '\n';
    return exit_ok;
}

std::string samples_svg(const Tensor& x, const std::vector<int>& condition) {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    double lo = -1.0;
    double hi = 1.0;
    for (double v : x.values()) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const double size = 480.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const auto px = [&](double v) { return (v - lo) / (hi - lo) * size; };
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << std::fixed << std::setprecision(2);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        svg << "<circle cx=\"" << px(x[i * 2]) << "\" cy=\"" << size - px(x[i * 2 + 1]) << "\" r=\"1.5\" fill=\""
            << palette[static_cast<std::size_t>(condition[i]) % 8] << "\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

int cmd_sample(const Options& o, std::ostream& out) {
    const RunConfig config = resolve_config(o);
    const fs::path dir = output_dir(o);
    const FlowModel model = model_from_checkpoint(checkpoint_for(o, dir, config));
    const int nfe = o.nfe > 0 ? o.nfe : config.eval_nfe;
    require(o.samples > 0, ErrorKind::config, "--samples must be positive");
    const ProblemSpec spec = config.problem_spec();
    const auto per = static_cast<std::size_t>(o.samples);
    std::vector<int> condition;
    for (int c = 0; c < spec.num_conditions(); ++c) {
        condition.insert(condition.end(), per, c);
    }
    RngStream noise = RngStream(mix64(config.seed ^ 0x5A3BULL)).split(1);
    const Tensor x0 = sample_standard_normal(noise, {condition.size(), 2});
    const auto result = euler_sample(model, x0, condition, nfe);
    std::ostringstream csv;
    csv << "condition,x,y\n";
    for (std::size_t i = 0; i < condition.size(); ++i) {
        csv << condition[i] << ',' << format_real(result.x1_hat[i * 2]) << ',' << format_real(result.x1_hat[i * 2 + 1])
            << '\n';
    }
    write_snapshot(dir, config);
    write_text(dir / "samples.csv", csv.str());
    write_text(dir / "samples.svg", samples_svg(result.x1_hat, condition));
    out << "wrote " << condition.size() << " samples at nfe " << nfe << " to " << (dir / "samples.csv").string()
        << '\n';
    return exit_ok;
}

EvalOptions eval_options(const RunConfig& config) {
    return {.samples_per_condition = config.eval_samples_per_condition, .projections = config.eval_projections};
}

void print_rows(std::ostream& out, const EvalReport& report) {
    for (const auto& r : report.rows()) {
        out << r.model_id << " nfe " << r.nfe << " seed " << r.seed << " energy_distance "
            << format_real(r.energy_distance) << " sliced_w2 " << format_real(r.sliced_w2) << '\n';
    }
}

int cmd_eval(const Options& o, std::ostream& out, bool sweep) {
    const RunConfig config = resolve_config(o);
    const fs::path dir = output_dir(o);
    const Checkpoint ck = checkpoint_for(o, dir, config);
    std::vector<int> nfes = sweep ? o.nfe_list : std::vector<int>{o.nfe > 0 ? o.nfe : config.eval_nfe};
    const EvalReport report = nfe_sweep(ck, config.problem_spec(), nfes, o.seeds, eval_options(config), o.model_id);
    write_snapshot(dir, config);
    report.write_csv((dir / (sweep ? "sweep.csv" : "eval.csv")).string());
    print_rows(out, report);
    return exit_ok;
}

int cmd_ablate(const Options& o, std::ostream& out, std::ostream& err) {
    const RunConfig config = resolve_config(o);
    const fs::path dir = output_dir(o);
    write_snapshot(dir, config);
    const EvalReport report =
        ablation_ladder(config, o.seeds, eval_options(config), [&err](const std::string& line) { err << line << '\n'; });
    report.write_csv((dir / "ablation.csv").string());
    for (const auto& preset : ablation_presets()) {
        out << std::left << std::setw(6) << preset.id << " median energy_distance "
            << format_real(median(report.energy_distances(preset.id, config.eval_nfe))) << "  (" << preset.description
            << ")\n";
    }
    return exit_ok;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
    GradcheckOptions options;
    options.instances = o.instances;
    if (o.seed_given) {
        options.seed = o.seed;
    }
    require(options.instances > 0, ErrorKind::config, "--instances must be positive");
    const auto results = run_gradcheck_suite(options);
    bool all = true;
    out << std::left << std::setw(34) << "check" << std::setw(10) << "instances" << std::setw(16) << "max_rel_error"
        << "status\n";
    for (const auto& r : results) {
        std::ostringstream err;
        err << std::scientific << std::setprecision(3) << r.max_relative_error;
        out << std::left << std::setw(34) << r.name << std::setw(10) << r.instances << std::setw(16) << err.str()
            << (r.passed ? "PASS" : "FAIL") << '\n';
        all = all && r.passed;
    }
    out << results.size() << " checks, " << (all ? "all passed" : "FAILURES") << '\n';
    if (!all) {
        throw Failure{exit_gradcheck, "finite-difference checks failed"};
    }
    return exit_ok;
}

void add_common(CLI::App* sub, Options& o) {
    sub->add_option("-c,--config", o.config_path, "config file (sectioned key = value)");
    sub->add_option("-o,--output", o.output_dir, std::string("output directory (default $") + output_root_env + ")");
    sub->add_option("-s,--set", o.overrides, "override, e.g. --set objective.alpha=1e-4 (repeatable)");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&o](const std::uint64_t& s) { o.seed = s; o.seed_given = true; }, "run seed");
}

}  // namespace

std::string help_footer() {
    std::ostringstream text;
    text << "\nExit codes:\n";
    for (int code = exit_ok; code <= exit_gradcheck; ++code) {
        text << "  " << code << "  " << code_name(code) << '\n';
    }
    text << "\nConfig keys (defaults):\n";
    for (const auto& key : config_schema()) {
        text << "  " << std::left << std::setw(36) << key.key << std::setw(18) << to_string(key.type)
             << std::setw(14) << key.default_value << key.description << '\n';
    }
    text << "\nOutput directory defaults to $" << output_root_env << ", else ./cfm-output.\n";
    return text.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Consistency flow matching on 2-D toy problems", "cfm"};
    app.footer(help_footer());
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "train a model; writes checkpoints, metrics.csv, resolved.cfg");
    add_common(train, o);
    train->add_option("--checkpoint", o.checkpoint, "initialise from this checkpoint");
    train->add_option("--stages", o.stages, "comma list of stage1, stage2, adversarial, fm-baseline")
        ->capture_default_str();
    train->add_option("--baseline-epochs", o.baseline_epochs, "fm-baseline epochs (default stage1 + stage2)");

    auto* sample = app.add_subcommand("sample", "draw samples; writes samples.csv and samples.svg");
    add_common(sample, o);
    sample->add_option("--checkpoint", o.checkpoint, "model checkpoint (default <output>/model.ckpt)");
    sample->add_option("--nfe", o.nfe, "Euler steps (default eval.nfe)");
    sample->add_option("--samples", o.samples, "samples per condition")->capture_default_str();

    auto* eval = app.add_subcommand("eval", "energy distance and sliced W2; writes eval.csv");
    add_common(eval, o);
    eval->add_option("--checkpoint", o.checkpoint, "model checkpoint (default <output>/model.ckpt)");
    eval->add_option("--nfe", o.nfe, "Euler steps (default eval.nfe)");
    eval->add_option("--seeds", o.seeds, "evaluation seeds")->delimiter(',')->capture_default_str();
    eval->add_option("--model-id", o.model_id, "model id in the report")->capture_default_str();

    auto* sweep = app.add_subcommand("sweep", "evaluate over several NFE values; writes sweep.csv");
    add_common(sweep, o);
    sweep->add_option("--checkpoint", o.checkpoint, "model checkpoint (default <output>/model.ckpt)");
    sweep->add_option("--nfe-list", o.nfe_list, "NFE values")->delimiter(',')->capture_default_str();
    sweep->add_option("--seeds", o.seeds, "evaluation seeds")->delimiter(',')->capture_default_str();
    sweep->add_option("--model-id", o.model_id, "model id in the report")->capture_default_str();

    auto* ablate = app.add_subcommand("ablate", "train and evaluate presets A..H; writes ablation.csv");
    add_common(ablate, o);
    ablate->add_option("--seeds", o.seeds, "training seeds")->delimiter(',')->capture_default_str();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every op and loss");
    gradcheck->add_option("--instances", o.instances, "random instances per check")->capture_default_str();
    gradcheck->add_option_function<std::uint64_t>(
        "--seed", [&o](const std::uint64_t& s) { o.seed = s; o.seed_given = true; }, "instance seed");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        print_error(err, exit_usage, e.what());
        return exit_usage;
    }

    try {
        if (train->parsed()) return cmd_train(o, out);
        if (sample->parsed()) return cmd_sample(o, out);
        if (eval->parsed()) return cmd_eval(o, out, false);
        if (sweep->parsed()) return cmd_eval(o, out, true);
        if (ablate->parsed()) return cmd_ablate(o, out, err);
        if (gradcheck->parsed()) return cmd_gradcheck(o, out);
        return exit_usage;
    } catch (const Failure& f) {
        print_error(err, f.code, f.message);
        return f.code;
    } catch (const Error& e) {
        const int code = code_for(e.kind());
        print_error(err, code, e.what());
        return code;
    } catch (const std::exception& e) {
        print_error(err, exit_internal, e.what());
        return exit_internal;
    }
}

}  // namespace cfm::cli
