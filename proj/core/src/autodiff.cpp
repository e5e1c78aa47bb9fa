#include "cfm/autodiff.hpp"

#include <algorithm>

#include "cfm/errors.hpp"

namespace cfm {

Var::Var(Tensor value) : value_(std::make_shared<const Tensor>(std::move(value))) {}

Var::Var(std::shared_ptr<const Tensor> value, Tape* tape, std::size_t node)
    : value_(std::move(value)), tape_(tape), node_(node) {}

const Tensor& Var::value() const {
    require(value_ != nullptr, ErrorKind::contract, "use of an empty Var");
    return *value_;
}

const Tensor& Gradients::wrt(const Var& leaf) const {
    require(leaf.tracked(), ErrorKind::contract, "gradient requested for an untracked value");
    auto it = leaves_.find(leaf.node());
    require(it != leaves_.end(), ErrorKind::contract, "no gradient recorded for this leaf");
    return it->second;
}

const Tensor* Gradients::find(const Parameter& param) const {
    for (const auto& [p, g] : params_) {
        if (p == &param) {
            return &g;
        }
    }
    return nullptr;
}

std::vector<std::string> Gradients::parameter_names() const {
    std::vector<std::string> names;
    names.reserve(params_.size());
    for (const auto& entry : params_) {
        names.push_back(entry.first->name);
    }
    return names;
}

Var Tape::push(Node node) {
    require(!consumed_, ErrorKind::contract, "tape has already been consumed by backward()");
    auto value = node.value;
    nodes_.push_back(std::move(node));
    return Var(std::move(value), this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
    require(value.all_finite(), ErrorKind::numeric, "non-finite leaf value");
    Node node;
    node.value = std::make_shared<const Tensor>(std::move(value));
    node.is_leaf = true;
    return push(std::move(node));
}

Var Tape::param(const Parameter& parameter) {
    if (parameter.frozen) {
        return Var(parameter.value);
    }
    if (auto it = param_nodes_.find(&parameter); it != param_nodes_.end()) {
        return Var(nodes_[it->second].value, this, it->second);
    }
    Node node;
    node.value = std::make_shared<const Tensor>(parameter.value);
    node.is_leaf = true;
    node.parameter = &parameter;
    Var v = push(std::move(node));
    param_nodes_.emplace(&parameter, v.node());
    return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardRule rule) {
    require(value.all_finite(), ErrorKind::numeric, "operation produced a non-finite value");
    Tape* tape = nullptr;
    for (const Var& in : inputs) {
        if (!in.tracked()) {
            continue;
        }
        require(tape == nullptr || tape == in.tape(), ErrorKind::contract, "operation mixes values from different tapes");
        tape = in.tape();
    }
    if (tape == nullptr) {
        return Var(std::move(value));
    }
    Node node;
    node.value = std::make_shared<const Tensor>(std::move(value));
    node.rule = std::move(rule);
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
        // Constants are marked with an out-of-range index.
        node.inputs.push_back(in.tracked() ? in.node() : static_cast<std::size_t>(-1));
    }
    return tape->push(std::move(node));
}

Gradients Tape::backward(const Var& loss) {
    require(!consumed_, ErrorKind::contract, "tape has already been consumed by backward()");
    require(loss.value().size() == 1, ErrorKind::contract,
            "backward() requires a scalar loss, got shape " + shape_string(loss.shape()));
    Gradients result;
    if (!loss.tracked()) {
        // Constant loss: nothing on the tape influences it.
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            if (n.is_leaf) {
                Tensor zero(n.value->shape());
                if (n.parameter != nullptr) {
                    result.params_.emplace_back(n.parameter, zero);
                }
                result.leaves_.emplace(i, std::move(zero));
            }
        }
        consumed_ = true;
        nodes_.clear();
        return result;
    }
    require(loss.tape() == this, ErrorKind::contract, "loss was recorded on a different tape");

    const std::size_t count = loss.node() + 1;
    std::vector<std::vector<double>> grads(count);
    grads[loss.node()].assign(1, 1.0);

    std::vector<std::vector<double>*> slots;
    for (std::size_t idx = count; idx-- > 0;) {
        Node& n = nodes_[idx];
        if (n.is_leaf || grads[idx].empty()) {
            continue;
        }
        slots.assign(n.inputs.size(), nullptr);
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t in = n.inputs[k];
            if (in >= count) {
                continue;
            }
            if (grads[in].empty()) {
                grads[in].assign(nodes_[in].value->size(), 0.0);
            }
            slots[k] = &grads[in];
        }
        n.rule(grads[idx], GradSlots(slots.data(), slots.size()));
        // Intermediate gradients are no longer needed once propagated.
        std::vector<double>().swap(grads[idx]);
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (!n.is_leaf) {
            continue;
        }
        Tensor g(n.value->shape());
        if (i < count && !grads[i].empty()) {
            g = Tensor(n.value->shape(), std::move(grads[i]));
        }
        require(g.all_finite(), ErrorKind::numeric, "non-finite gradient");
        if (n.parameter != nullptr) {
            result.params_.emplace_back(n.parameter, g);
        }
        result.leaves_.emplace(i, std::move(g));
    }
    consumed_ = true;
    nodes_.clear();
    param_nodes_.clear();
    return result;
}

}  // namespace cfm
