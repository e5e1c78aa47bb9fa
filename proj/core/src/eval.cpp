#include "cfm/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cfm/errors.hpp"
#include "cfm/rng.hpp"
#include "cfm/sampler.hpp"
#include "cfm/trainer.hpp"

namespace cfm {

namespace {

double mean_pairwise_distance(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows();
    const std::size_t m = b.rows();
    const std::size_t d = a.cols();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.values().data() + i * d;
        double row = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.values().data() + j * d;
            double sq = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = ai[c] - bj[c];
                sq += diff * diff;
            }
            row += std::sqrt(sq);
        }
        total += row;
    }
    return total / (static_cast<double>(n) * static_cast<double>(m));
}

std::vector<double> sorted_projection(const Tensor& x, std::span<const double> direction) {
    const std::size_t d = x.cols();
    std::vector<double> out(x.rows());
    for (std::size_t r = 0; r < out.size(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            acc += x[r * d + c] * direction[c];
        }
        out[r] = acc;
    }
    std::sort(out.begin(), out.end());
    return out;
}

double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double w = pos - static_cast<double>(lo);
    return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

Tensor rows_of(const Tensor& x, std::size_t begin, std::size_t count) {
    const std::size_t d = x.cols();
    std::vector<double> values(x.values().begin() + static_cast<std::ptrdiff_t>(begin * d),
                               x.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * d));
    return Tensor({count, d}, std::move(values));
}

std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

template <class T>
T parse_field(const std::string& s, const char* what) {
    T value{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    require(ec == std::errc{} && ptr == s.data() + s.size(), ErrorKind::format,
            std::string("bad ") + what + " field '" + s + "' in report CSV");
    return value;
}

}  // namespace

double energy_distance(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, ErrorKind::dimension, "energy_distance expects [n, d] sample sets");
    require(a.rows() > 0 && b.rows() > 0, ErrorKind::contract, "energy_distance of an empty sample set");
    require(a.cols() == b.cols(), ErrorKind::dimension, "energy_distance: sample dimensions differ");
    const double cross = mean_pairwise_distance(a, b);
    const double within_a = mean_pairwise_distance(a, a);
    const double within_b = mean_pairwise_distance(b, b);
    return std::max(0.0, 2.0 * cross - within_a - within_b);
}

double sliced_wasserstein(const Tensor& a, const Tensor& b, int projections, std::uint64_t seed) {
    require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(), ErrorKind::dimension,
            "sliced_wasserstein: sample dimensions differ");
    require(a.rows() > 0 && b.rows() > 0, ErrorKind::contract, "sliced_wasserstein of an empty sample set");
    require(projections > 0, ErrorKind::config, "projection count must be positive");
    const std::size_t d = a.cols();
    RngStream stream(seed);
    double total = 0.0;
    std::vector<double> direction(d);
    for (int p = 0; p < projections; ++p) {
        double norm = 0.0;
        for (double& c : direction) {
            c = stream.next_normal();
            norm += c * c;
        }
        norm = std::sqrt(norm);
        for (double& c : direction) {
            c /= norm;
        }
        const auto pa = sorted_projection(a, direction);
        const auto pb = sorted_projection(b, direction);
        double acc = 0.0;
        if (pa.size() == pb.size()) {
            for (std::size_t i = 0; i < pa.size(); ++i) {
                acc += (pa[i] - pb[i]) * (pa[i] - pb[i]);
            }
            acc /= static_cast<double>(pa.size());
        } else {
            const std::size_t k = std::min(pa.size(), pb.size());
            for (std::size_t i = 0; i < k; ++i) {
                const double q = k == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(k - 1);
                const double diff = quantile(pa, q) - quantile(pb, q);
                acc += diff * diff;
            }
            acc /= static_cast<double>(k);
        }
        total += acc;
    }
    return std::sqrt(total / projections);
}

void EvalReport::add(EvalRow row) {
    require(find(row.model_id, row.nfe, row.seed) == nullptr, ErrorKind::contract,
            "duplicate report row for model " + row.model_id + ", nfe " + std::to_string(row.nfe) + ", seed " +
                std::to_string(row.seed));
    rows_.push_back(std::move(row));
}

const EvalRow* EvalReport::find(const std::string& model_id, int nfe, std::uint64_t seed) const {
    for (const auto& row : rows_) {
        if (row.model_id == model_id && row.nfe == nfe && row.seed == seed) {
            return &row;
        }
    }
    return nullptr;
}

std::vector<double> EvalReport::energy_distances(const std::string& model_id, int nfe) const {
    std::vector<double> out;
    for (const auto& row : rows_) {
        if (row.model_id == model_id && row.nfe == nfe) {
            out.push_back(row.energy_distance);
        }
    }
    return out;
}

void EvalReport::merge(const EvalReport& other) {
    for (const auto& row : other.rows_) {
        add(row);
    }
}

std::string eval_csv_header() {
    return "model_id,nfe,seed,energy_distance,sliced_w2,straightness,samples,wall_seconds";
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << eval_csv_header() << '\n';
    for (const auto& r : rows_) {
        out << r.model_id << ',' << r.nfe << ',' << r.seed << ',' << format_real(r.energy_distance) << ','
            << format_real(r.sliced_w2) << ',' << format_real(r.straightness) << ',' << r.samples << ','
            << format_real(r.wall_seconds) << '\n';
    }
    return out.str();
}

EvalReport EvalReport::from_csv(std::string_view text) {
    EvalReport report;
    bool header = true;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (line.empty()) {
            continue;
        }
        if (header) {
            require(line == eval_csv_header(), ErrorKind::format, "unexpected report CSV header");
            header = false;
            continue;
        }
        const auto f = split_csv(line);
        require(f.size() == 8, ErrorKind::format, "report CSV row has " + std::to_string(f.size()) + " fields");
        EvalRow row;
        row.model_id = f[0];
        row.nfe = parse_field<int>(f[1], "nfe");
        row.seed = parse_field<std::uint64_t>(f[2], "seed");
        row.energy_distance = parse_field<double>(f[3], "energy_distance");
        row.sliced_w2 = parse_field<double>(f[4], "sliced_w2");
        row.straightness = parse_field<double>(f[5], "straightness");
        row.samples = parse_field<std::size_t>(f[6], "samples");
        row.wall_seconds = parse_field<double>(f[7], "wall_seconds");
        report.add(std::move(row));
    }
    require(!header, ErrorKind::format, "report CSV is empty");
    return report;
}

void EvalReport::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot open '" + path + "' for writing");
    out << to_csv();
    require(out.good(), ErrorKind::io, "failed writing '" + path + "'");
}

GeneratedSet generate_for_eval(const FlowModel& model, const ProblemSpec& spec, int nfe, std::uint64_t seed,
                               int samples_per_condition) {
    require(samples_per_condition > 0, ErrorKind::config, "samples per condition must be positive");
    const auto per = static_cast<std::size_t>(samples_per_condition);
    const auto conditions = static_cast<std::size_t>(spec.num_conditions());
    RngStream root(mix64(seed ^ 0xE7A1ULL));
    RngStream noise_stream = root.split(1);
    RngStream target_stream = root.split(2);

    GeneratedSet out;
    out.condition.resize(per * conditions);
    for (std::size_t c = 0; c < conditions; ++c) {
        std::fill_n(out.condition.begin() + static_cast<std::ptrdiff_t>(c * per), per, static_cast<int>(c));
    }
    const Tensor x0 = sample_standard_normal(noise_stream, {per * conditions, 2});
    const auto result = euler_sample(model, x0, out.condition, nfe);
    out.generated = result.x1_hat;
    out.straightness = nfe >= 2 ? straightness(result.record) : 0.0;

    out.target = Tensor({per * conditions, 2});
    for (std::size_t c = 0; c < conditions; ++c) {
        const Tensor t = sample_target(spec, target_stream, static_cast<int>(c), per);
        std::copy(t.values().begin(), t.values().end(), out.target.values().begin() + static_cast<std::ptrdiff_t>(c * per * 2));
    }
    return out;
}

EvalRow evaluate_model(const FlowModel& model, const ProblemSpec& spec, const std::string& model_id, int nfe,
                       std::uint64_t seed, const EvalOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const auto set = generate_for_eval(model, spec, nfe, seed, options.samples_per_condition);
    const auto per = static_cast<std::size_t>(options.samples_per_condition);
    const int conditions = spec.num_conditions();
    double ed = 0.0;
    double sw = 0.0;
    for (int c = 0; c < conditions; ++c) {
        const Tensor gen = rows_of(set.generated, static_cast<std::size_t>(c) * per, per);
        const Tensor tgt = rows_of(set.target, static_cast<std::size_t>(c) * per, per);
        ed += energy_distance(gen, tgt);
        sw += sliced_wasserstein(gen, tgt, options.projections, options.projection_seed);
    }
    EvalRow row;
    row.model_id = model_id;
    row.nfe = nfe;
    row.seed = seed;
    row.energy_distance = ed / conditions;
    row.sliced_w2 = sw / conditions;
    row.straightness = set.straightness;
    row.samples = set.generated.rows();
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
}

EvalReport nfe_sweep(const Checkpoint& checkpoint, const ProblemSpec& spec, std::span<const int> nfe_list,
                     std::span<const std::uint64_t> seeds, const EvalOptions& options, const std::string& model_id) {
    const FlowModel model = model_from_checkpoint(checkpoint);
    EvalReport report;
    for (int nfe : nfe_list) {
        for (std::uint64_t seed : seeds) {
            report.add(evaluate_model(model, spec, model_id, nfe, seed, options));
        }
    }
    return report;
}

RunConfig AblationPreset::apply(RunConfig base) const {
    base.freeze_encoder = freeze_encoder;
    base.shared_dropout = shared_dropout;
    base.metric = huber ? "pseudo-huber" : "squared-l2";
    base.delta_scheduling = delta_scheduling;
    base.delta_mode = exponential_schedule ? "exponential" : "linear";
    if (!consistency) {
        base.stage2_epochs = 0;
    }
    if (!adversarial) {
        base.adversarial_epochs = 0;
    }
    return base;
}

std::vector<AblationPreset> ablation_presets() {
    AblationPreset a{.id = "A", .description = "straight flow (stage 1)"};
    AblationPreset b = a;
    b.id = "B";
    b.description = "A + consistency";
    b.consistency = true;
    AblationPreset c = b;
    c.id = "C";
    c.description = "B + encoder freeze";
    c.freeze_encoder = true;
    AblationPreset d = c;
    d.id = "D";
    d.description = "C + shared dropout";
    d.shared_dropout = true;
    AblationPreset e = d;
    e.id = "E";
    e.description = "D + pseudo-Huber";
    e.huber = true;
    AblationPreset f = d;
    f.id = "F";
    f.description = "D + delta scheduling (linear)";
    f.delta_scheduling = true;
    AblationPreset f_exp = f;
    f_exp.id = "F-exp";
    f_exp.description = "D + delta scheduling (exponential)";
    f_exp.exponential_schedule = true;
    AblationPreset g = d;
    g.id = "G";
    g.description = "D + adversarial";
    g.adversarial = true;
    AblationPreset h = d;
    h.id = "H";
    h.description = "all techniques";
    h.huber = true;
    h.delta_scheduling = true;
    h.adversarial = true;
    return {a, b, c, d, e, f, f_exp, g, h};
}

EvalReport ablation_ladder(const RunConfig& base, std::span<const std::uint64_t> seeds, const EvalOptions& options,
                           const ProgressFn& progress) {
    EvalReport report;
    const auto presets = ablation_presets();
    for (std::uint64_t seed : seeds) {
        RunConfig seeded = base;
        seeded.seed = seed;
        const ProblemSpec spec = seeded.problem_spec();
        Trainer stage1(seeded);
        stage1.run_stage1();
        const Checkpoint after_stage1 = stage1.checkpoint();
        for (const auto& preset : presets) {
            const RunConfig config = preset.apply(seeded);
            Checkpoint start = after_stage1;
            start.config = config;
            Trainer trainer(start);
            if (preset.consistency) {
                trainer.run_stage2();
            }
            if (preset.adversarial) {
                trainer.run_adversarial();
            }
            report.add(evaluate_model(trainer.model(), spec, preset.id, base.eval_nfe, seed, options));
            if (progress) {
                const auto* row = report.find(preset.id, base.eval_nfe, seed);
                progress("seed " + std::to_string(seed) + " preset " + preset.id + " energy_distance " +
                         format_real(row->energy_distance));
            }
        }
    }
    return report;
}

double median(std::vector<double> values) {
    require(!values.empty(), ErrorKind::contract, "median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace cfm
