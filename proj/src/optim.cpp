#include "prosma/optim.hpp"

#include <cmath>

namespace prosma {

AdamState adam_init(const std::vector<std::pair<std::string, Tensor>>& params) {
    AdamState s;
    for (const auto& [name, t] : params) {
        s.m.emplace_back(static_cast<size_t>(t.size()), 0.0);
        s.v.emplace_back(static_cast<size_t>(t.size()), 0.0);
    }
    return s;
}

void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               const AdamConfig& cfg) {
    if (state.m.size() != params.size()) {
        throw ContractError("adam_step: state does not match parameter list");
    }
    state.t += 1;
    double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k].second;
        const double* g = p.grad();
        if (g == nullptr) {
            throw ContractError("adam_step: parameter \"" + params[k].first + "\" has no gradient");
        }
        if (state.m[k].size() != static_cast<size_t>(p.size())) {
            throw ContractError("adam_step: moment shape mismatch for \"" + params[k].first + "\"");
        }
        double* mv = state.m[k].data();
        double* vv = state.v[k].data();
        double* pv = p.data();
        int64_t n = p.size();
        for (int64_t i = 0; i < n; ++i) {
            mv[i] = cfg.beta1 * mv[i] + (1.0 - cfg.beta1) * g[i];
            vv[i] = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            double mhat = mv[i] / c1;
            double vhat = vv[i] / c2;
            pv[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace prosma
