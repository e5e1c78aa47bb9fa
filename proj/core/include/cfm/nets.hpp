#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cfm/autodiff.hpp"
#include "cfm/ops.hpp"
#include "cfm/rng.hpp"

namespace cfm {

struct DenseLayer {
    Parameter weight;  // [in, out]
    Parameter bias;    // [out]
};

struct VectorFieldConfig {
    std::size_t data_dim = 2;
    std::size_t hidden_width = 128;
    std::size_t hidden_layers = 3;
    std::size_t time_features = 16;
    std::size_t condition_dim = 8;
    std::size_t num_conditions = 1;
    ops::Activation activation = ops::Activation::gelu;
    bool zero_output_head = false;
};

struct DiscriminatorConfig {
    std::size_t data_dim = 2;
    std::size_t hidden_width = 64;
    std::size_t hidden_layers = 3;
    double leaky_slope = 0.2;
    bool zero_output_head = false;
};

/// One dropout mask per hidden layer of a vector-field network, drawn once per
/// training step and reused by every forward pass that should share it.
struct DropoutMaskSet {
    std::vector<DropoutMask> masks;
};

/// Records which masks a forward pass consumed, for identity assertions.
struct MaskProbe {
    std::vector<const DropoutMask*> used;
    std::vector<std::uint64_t> fingerprints;
};

/// Sinusoidal features [sin(w_k t), cos(w_k t)] with frequencies spaced
/// geometrically from 1 to 100 rad per unit time. Returns [n, width].
Tensor time_features(std::span<const double> t, std::size_t width);

/// Lookup table mapping a condition id to the embedding fed to the decoder.
class ConditionEmbedder {
public:
    ConditionEmbedder(std::size_t num_conditions, std::size_t dim, RngStream& init);

    [[nodiscard]] Var embed(std::span<const int> conditions, Tape* tape) const;

    void set_frozen(bool frozen) { table_.frozen = frozen; }
    [[nodiscard]] bool frozen() const noexcept { return table_.frozen; }
    [[nodiscard]] std::size_t dim() const { return table_.value.dim(1); }
    [[nodiscard]] std::size_t num_conditions() const { return table_.value.dim(0); }

    std::vector<Parameter*> parameters() { return {&table_}; }
    [[nodiscard]] std::vector<const Parameter*> parameters() const { return {&table_}; }

private:
    Parameter table_;
};

/// MLP velocity field v(t, x, mu) over the concatenation [x, time features, mu].
class VectorFieldNet {
public:
    VectorFieldNet(const VectorFieldConfig& config, RngStream& init);

    /// Passing `tape == nullptr` evaluates with stop-gradient parameters and
    /// leaves every tape untouched. `masks`, when given, must hold one mask per
    /// hidden layer of shape [batch, hidden_width].
    [[nodiscard]] Var velocity(std::span<const double> t, const Var& x, const Var& condition, Tape* tape,
                               const DropoutMaskSet* masks = nullptr, MaskProbe* probe = nullptr) const;

    [[nodiscard]] DropoutMaskSet draw_masks(RngStream& stream, std::size_t batch, double rate) const;

    [[nodiscard]] const VectorFieldConfig& config() const noexcept { return config_; }
    std::vector<Parameter*> parameters();
    [[nodiscard]] std::vector<const Parameter*> parameters() const;

private:
    VectorFieldConfig config_;
    std::vector<DenseLayer> hidden_;
    DenseLayer head_;
};

/// The generator under training: condition embedder plus vector field.
class FlowModel {
public:
    FlowModel(const VectorFieldConfig& config, RngStream& init);

    [[nodiscard]] Var velocity(std::span<const double> t, const Var& x, std::span<const int> conditions, Tape* tape,
                               const DropoutMaskSet* masks = nullptr, MaskProbe* probe = nullptr) const;

    ConditionEmbedder& embedder() noexcept { return embedder_; }
    [[nodiscard]] const ConditionEmbedder& embedder() const noexcept { return embedder_; }
    VectorFieldNet& field() noexcept { return field_; }
    [[nodiscard]] const VectorFieldNet& field() const noexcept { return field_; }

    std::vector<Parameter*> parameters();
    [[nodiscard]] std::vector<const Parameter*> parameters() const;
    [[nodiscard]] std::size_t parameter_count() const;

private:
    ConditionEmbedder embedder_;
    VectorFieldNet field_;
};

struct DiscriminatorOutput {
    Var score;                   // [n, 1], unbounded
    std::vector<Var> features;   // hidden activations D^1..D^L
};

/// Dense least-squares GAN critic with leaky activations.
class Discriminator {
public:
    Discriminator(const DiscriminatorConfig& config, RngStream& init);

    [[nodiscard]] DiscriminatorOutput evaluate(const Var& x, Tape* tape) const;

    [[nodiscard]] const DiscriminatorConfig& config() const noexcept { return config_; }
    std::vector<Parameter*> parameters();
    [[nodiscard]] std::vector<const Parameter*> parameters() const;

private:
    DiscriminatorConfig config_;
    std::vector<DenseLayer> hidden_;
    DenseLayer head_;
};

std::size_t count_parameters(const std::vector<const Parameter*>& params);

}  // namespace cfm
