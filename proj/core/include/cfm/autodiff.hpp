#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfm/tensor.hpp"

namespace cfm {

class Tape;

/// Named learnable tensor owned by a network. Frozen parameters enter a tape
/// as constants, so they never receive gradient.
struct Parameter {
    std::string name;
    Tensor value;
    bool frozen = false;
};

/// Handle to a value that may be tracked on a tape. Untracked handles are
/// plain constants; every op on constants is evaluated eagerly and records
/// nothing, which is how stop-gradient evaluation is realised.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value);

    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] const Shape& shape() const { return value().shape(); }
    [[nodiscard]] bool tracked() const noexcept { return tape_ != nullptr; }
    [[nodiscard]] Tape* tape() const noexcept { return tape_; }
    [[nodiscard]] std::size_t node() const noexcept { return node_; }

private:
    friend class Tape;
    Var(std::shared_ptr<const Tensor> value, Tape* tape, std::size_t node);

    std::shared_ptr<const Tensor> value_;
    Tape* tape_ = nullptr;
    std::size_t node_ = 0;
};

/// Gradient buffers handed to a node's backward rule: one per input, null
/// when that input does not need a gradient.
using GradSlots = std::span<std::vector<double>* const>;
using BackwardRule = std::function<void(std::span<const double> out_grad, GradSlots in_grads)>;

/// Result of a backward pass: gradients for tracked leaves and parameters.
class Gradients {
public:
    [[nodiscard]] const Tensor& wrt(const Var& leaf) const;
    [[nodiscard]] const Tensor* find(const Parameter& param) const;
    [[nodiscard]] std::vector<std::string> parameter_names() const;
    [[nodiscard]] const std::vector<std::pair<const Parameter*, Tensor>>& parameters() const noexcept {
        return params_;
    }

private:
    friend class Tape;
    std::unordered_map<std::size_t, Tensor> leaves_;
    std::vector<std::pair<const Parameter*, Tensor>> params_;
};

/// Linear record of operations for reverse-mode differentiation. A tape is
/// single-use: backward() consumes it.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf that requires gradient.
    Var leaf(Tensor value);
    // Leaf bound to a parameter; returns a constant when the parameter is frozen.
    // Repeated calls for the same parameter return the same node.
    Var param(const Parameter& parameter);

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] bool consumed() const noexcept { return consumed_; }

    Gradients backward(const Var& loss);

    // Used by op implementations. Records a node if any input is tracked on
    // this tape, otherwise returns a constant.
    static Var record(Tensor value, std::vector<Var> inputs, BackwardRule rule);

private:
    struct Node {
        std::shared_ptr<const Tensor> value;
        std::vector<std::size_t> inputs;
        BackwardRule rule;
        const Parameter* parameter = nullptr;
        bool is_leaf = false;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
    bool consumed_ = false;
};

}  // namespace cfm
