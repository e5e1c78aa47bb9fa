#include "cfm/nets.hpp"

#include <cmath>

#include "cfm/errors.hpp"

namespace cfm {

namespace {

DenseLayer make_dense(const std::string& prefix, std::size_t in, std::size_t out, RngStream& init, bool zero) {
    DenseLayer layer;
    layer.weight.name = prefix + ".weight";
    layer.bias.name = prefix + ".bias";
    layer.weight.value = Tensor({in, out});
    layer.bias.value = Tensor({out});
    if (!zero) {
        const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& w : layer.weight.value.values()) {
            w = stddev * init.next_normal();
        }
    }
    return layer;
}

Var apply_dense(const DenseLayer& layer, const Var& x, Tape* tape) {
    if (tape == nullptr) {
        return ops::affine(x, Var(layer.weight.value), Var(layer.bias.value));
    }
    return ops::affine(x, tape->param(layer.weight), tape->param(layer.bias));
}

void append(std::vector<Parameter*>& out, DenseLayer& layer) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
}

void append(std::vector<const Parameter*>& out, const DenseLayer& layer) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
}

}  // namespace

Tensor time_features(std::span<const double> t, std::size_t width) {
    require(width >= 2 && width % 2 == 0, ErrorKind::config, "time feature width must be a positive even number");
    const std::size_t half = width / 2;
    Tensor out({t.size(), width});
    for (std::size_t k = 0; k < half; ++k) {
        const double exponent = half > 1 ? static_cast<double>(k) / static_cast<double>(half - 1) : 0.0;
        const double freq = std::pow(100.0, exponent);
        for (std::size_t r = 0; r < t.size(); ++r) {
            out[r * width + k] = std::sin(freq * t[r]);
            out[r * width + half + k] = std::cos(freq * t[r]);
        }
    }
    return out;
}

ConditionEmbedder::ConditionEmbedder(std::size_t num_conditions, std::size_t dim, RngStream& init) {
    require(num_conditions > 0 && dim > 0, ErrorKind::config, "condition embedder needs positive sizes");
    table_.name = "embedder.table";
    table_.value = sample_standard_normal(init, {num_conditions, dim});
}

Var ConditionEmbedder::embed(std::span<const int> conditions, Tape* tape) const {
    const Var table = tape != nullptr ? tape->param(table_) : Var(table_.value);
    return ops::gather_rows(table, conditions);
}

VectorFieldNet::VectorFieldNet(const VectorFieldConfig& config, RngStream& init) : config_(config) {
    require(config.data_dim > 0 && config.hidden_width > 0 && config.hidden_layers > 0, ErrorKind::config,
            "vector field sizes must be positive");
    std::size_t in = config.data_dim + config.time_features + config.condition_dim;
    for (std::size_t l = 0; l < config.hidden_layers; ++l) {
        hidden_.push_back(make_dense("field.hidden" + std::to_string(l), in, config.hidden_width, init, false));
        in = config.hidden_width;
    }
    head_ = make_dense("field.head", in, config.data_dim, init, config.zero_output_head);
}

Var VectorFieldNet::velocity(std::span<const double> t, const Var& x, const Var& condition, Tape* tape,
                             const DropoutMaskSet* masks, MaskProbe* probe) const {
    const std::size_t n = x.value().rows();
    require(x.value().rank() == 2 && x.value().dim(1) == config_.data_dim, ErrorKind::dimension,
            "velocity: x must be [batch, " + std::to_string(config_.data_dim) + "], got " + shape_string(x.shape()));
    require(t.size() == n, ErrorKind::dimension, "velocity: time batch does not match x");
    require(condition.value().rank() == 2 && condition.value().dim(0) == n &&
                condition.value().dim(1) == config_.condition_dim,
            ErrorKind::dimension, "velocity: condition embedding does not match batch");
    if (masks != nullptr) {
        require(masks->masks.size() == hidden_.size(), ErrorKind::dimension,
                "velocity: expected one dropout mask per hidden layer");
    }

    Var h = ops::concatenate({x, Var(time_features(t, config_.time_features)), condition});
    for (std::size_t l = 0; l < hidden_.size(); ++l) {
        h = ops::activate(apply_dense(hidden_[l], h, tape), config_.activation);
        if (masks != nullptr) {
            const DropoutMask& mask = masks->masks[l];
            if (probe != nullptr) {
                probe->used.push_back(&mask);
                probe->fingerprints.push_back(mask.fingerprint);
            }
            h = ops::dropout(h, mask);
        }
    }
    return apply_dense(head_, h, tape);
}

DropoutMaskSet VectorFieldNet::draw_masks(RngStream& stream, std::size_t batch, double rate) const {
    DropoutMaskSet set;
    for (std::size_t l = 0; l < hidden_.size(); ++l) {
        set.masks.push_back(make_dropout_mask(stream, {batch, config_.hidden_width}, rate));
    }
    return set;
}

std::vector<Parameter*> VectorFieldNet::parameters() {
    std::vector<Parameter*> out;
    for (auto& layer : hidden_) {
        append(out, layer);
    }
    append(out, head_);
    return out;
}

std::vector<const Parameter*> VectorFieldNet::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& layer : hidden_) {
        append(out, layer);
    }
    append(out, head_);
    return out;
}

FlowModel::FlowModel(const VectorFieldConfig& config, RngStream& init)
    : embedder_(config.num_conditions, config.condition_dim, init), field_(config, init) {}

Var FlowModel::velocity(std::span<const double> t, const Var& x, std::span<const int> conditions, Tape* tape,
                        const DropoutMaskSet* masks, MaskProbe* probe) const {
    return field_.velocity(t, x, embedder_.embed(conditions, tape), tape, masks, probe);
}

std::vector<Parameter*> FlowModel::parameters() {
    auto out = embedder_.parameters();
    for (Parameter* p : field_.parameters()) {
        out.push_back(p);
    }
    return out;
}

std::vector<const Parameter*> FlowModel::parameters() const {
    auto out = embedder_.parameters();
    for (const Parameter* p : field_.parameters()) {
        out.push_back(p);
    }
    return out;
}

std::size_t FlowModel::parameter_count() const {
    return count_parameters(parameters());
}

Discriminator::Discriminator(const DiscriminatorConfig& config, RngStream& init) : config_(config) {
    require(config.data_dim > 0 && config.hidden_width > 0 && config.hidden_layers > 0, ErrorKind::config,
            "discriminator sizes must be positive");
    std::size_t in = config.data_dim;
    for (std::size_t l = 0; l < config.hidden_layers; ++l) {
        hidden_.push_back(make_dense("disc.hidden" + std::to_string(l), in, config.hidden_width, init, false));
        in = config.hidden_width;
    }
    head_ = make_dense("disc.head", in, 1, init, config.zero_output_head);
}

DiscriminatorOutput Discriminator::evaluate(const Var& x, Tape* tape) const {
    require(x.value().rank() == 2 && x.value().dim(1) == config_.data_dim, ErrorKind::dimension,
            "discriminator: input must be [batch, " + std::to_string(config_.data_dim) + "], got " +
                shape_string(x.shape()));
    DiscriminatorOutput out;
    Var h = x;
    for (const auto& layer : hidden_) {
        h = ops::leaky_relu(apply_dense(layer, h, tape), config_.leaky_slope);
        out.features.push_back(h);
    }
    out.score = apply_dense(head_, h, tape);
    return out;
}

std::vector<Parameter*> Discriminator::parameters() {
    std::vector<Parameter*> out;
    for (auto& layer : hidden_) {
        append(out, layer);
    }
    append(out, head_);
    return out;
}

std::vector<const Parameter*> Discriminator::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& layer : hidden_) {
        append(out, layer);
    }
    append(out, head_);
    return out;
}

std::size_t count_parameters(const std::vector<const Parameter*>& params) {
    std::size_t total = 0;
    for (const Parameter* p : params) {
        total += p->value.size();
    }
    return total;
}

}  // namespace cfm
