#include "cfm/optimizer.hpp"

#include <cmath>

#include "cfm/errors.hpp"

namespace cfm {

Adam::Adam(AdamOptions options) : options_(options) {
    require(options_.learning_rate > 0.0, ErrorKind::config, "learning rate must be positive");
}

double Adam::step(const std::vector<Parameter*>& params, const Gradients& grads) {
    std::vector<std::pair<Parameter*, const Tensor*>> live;
    double sq_norm = 0.0;
    for (Parameter* p : params) {
        if (p->frozen) {
            continue;
        }
        const Tensor* g = grads.find(*p);
        if (g == nullptr) {
            continue;
        }
        live.emplace_back(p, g);
        for (double v : g->values()) {
            sq_norm += v * v;
        }
    }
    const double norm = std::sqrt(sq_norm);
    require(std::isfinite(norm), ErrorKind::numeric, "non-finite gradient norm");
    const double clip = options_.clip_norm > 0.0 && norm > options_.clip_norm ? options_.clip_norm / norm : 1.0;

    ++steps_;
    const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (auto [p, g] : live) {
        auto it = moments_.find(p->name);
        if (it == moments_.end()) {
            it = moments_.emplace(p->name, Moments{Tensor(p->value.shape()), Tensor(p->value.shape())}).first;
        }
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        require(m.shape() == p->value.shape(), ErrorKind::contract, "optimizer state shape mismatch for " + p->name);
        auto values = p->value.values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double gi = (*g)[i] * clip;
            m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
            v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
            values[i] -= options_.learning_rate * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + options_.epsilon);
        }
    }
    return norm;
}

}  // namespace cfm
