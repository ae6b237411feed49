#include "imnav/numcore/adam.hpp"

#include <cmath>

#include "imnav/errors.hpp"

namespace imnav::nc {

void Adam::step(ParamStore& store, const std::map<Group, double>& group_lr) {
    for (auto& e : store.entries()) {
        auto it = group_lr.find(e.group);
        const double lr = it == group_lr.end() ? 0.0 : it->second;
        if (lr == 0.0 || !e.tensor.requires_grad) continue;
        if (!e.tensor.has_grad()) throw ContractError("adam_step: missing gradient for '" + e.name + "'");
        Slot& s = slots_[e.name];
        const std::size_t n = e.tensor.size();
        if (s.m.size() != n) {
            s.m.assign(n, 0.0f);
            s.v.assign(n, 0.0f);
        }
        ++s.steps;
        const double bc1 = 1.0 - std::pow(hyper_.beta1, s.steps);
        const double bc2 = 1.0 - std::pow(hyper_.beta2, s.steps);
        auto& w = e.tensor.values();
        const auto& g = e.tensor.grad();
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g[i];
            const double m = hyper_.beta1 * s.m[i] + (1.0 - hyper_.beta1) * gi;
            const double v = hyper_.beta2 * s.v[i] + (1.0 - hyper_.beta2) * gi * gi;
            s.m[i] = static_cast<float>(m);
            s.v[i] = static_cast<float>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + hyper_.eps));
        }
    }
}

}  // namespace imnav::nc
