#include "prosma/verify.hpp"

#include <cmath>
#include <vector>

#include "prosma/gate.hpp"
#include "prosma/rng.hpp"
#include "prosma/tensor.hpp"

namespace prosma {

namespace {

long double frob_norm(const Tensor& a, const Tensor* b = nullptr) {
    long double acc = 0.0L;
    const double* av = a.data();
    const double* bv = b ? b->data() : nullptr;
    for (int64_t i = 0; i < a.size(); ++i) {
        long double d = bv ? static_cast<long double>(av[i]) - bv[i] : av[i];
        acc += d * d;
    }
    return sqrtl(acc);
}

}  // namespace

TheoremReport theorem_check(int trials, uint64_t seed, const std::string& sabotage) {
    if (!sabotage.empty() && sabotage != "shrink-off") {
        throw ContractError("unknown sabotage mode \"" + sabotage + "\"");
    }
    bool broken = sabotage == "shrink-off";
    auto prox = [broken](const Tensor& u, const Tensor& lam) {
        Tensor z = soft_threshold(u, lam);
        if (broken) {  // leaks a fraction of the input past the threshold
            double* zv = z.data();
            const double* uv = u.data();
            for (int64_t i = 0; i < z.size(); ++i) {
                zv[i] += 0.1 * uv[i];
            }
        }
        return z;
    };

    NoGradGuard no_grad;
    Rng rng(seed);
    TheoremReport report;
    report.trials = trials;

    for (int t = 0; t < trials; ++t) {
        int64_t n = 1 + rng.uniform_int(2);
        int64_t c = 1 + rng.uniform_int(4);
        int64_t h = 2 + rng.uniform_int(5);
        int64_t w = 2 + rng.uniform_int(5);
        double u_scale = std::pow(10.0, rng.uniform(-1.0, 0.7));
        double lam_scale = std::pow(10.0, rng.uniform(-1.5, 0.3));
        double v_scale = std::pow(10.0, rng.uniform(-3.0, 0.5));

        Tensor u = Tensor::zeros({n, c, h, w});
        Tensor v = Tensor::zeros({n, c, h, w});
        for (int64_t i = 0; i < u.size(); ++i) {
            u.data()[i] = u_scale * rng.normal();
            v.data()[i] = u.data()[i] + v_scale * rng.normal();
        }
        Tensor lam = Tensor::zeros({c});
        Tensor lam_larger = Tensor::zeros({c});
        for (int64_t i = 0; i < c; ++i) {
            // every 7th trial zeroes one threshold (prox of no penalty)
            double base = (t % 7 == 0 && i == 0) ? 0.0 : lam_scale * std::abs(rng.normal());
            lam.data()[i] = base;
            lam_larger.data()[i] = base + lam_scale * std::abs(rng.normal());
        }

        Tensor z = prox(u, lam);
        Tensor z_larger = prox(u, lam_larger);
        Tensor z_v = prox(v, lam);

        bool exact_ok = true;
        int64_t hw = h * w;
        for (int64_t i = 0; i < u.size(); ++i) {
            double lc = lam.data()[(i / hw) % c];
            bool below = std::abs(u.data()[i]) <= lc;
            double zi = z.data()[i];
            if (below && !(zi == 0.0 && !std::signbit(zi))) {
                exact_ok = false;  // must be literal +0.0, not merely small
            }
            if (!below && u.data()[i] != 0.0 && zi == 0.0 && lc < std::abs(u.data()[i])) {
                exact_ok = false;  // strictly-above-threshold entries stay active
            }
        }
        report.exact_zero_pass += exact_ok;

        bool nest_ok = true;
        for (int64_t i = 0; i < u.size(); ++i) {
            if (z_larger.data()[i] != 0.0 && z.data()[i] == 0.0) {
                nest_ok = false;
            }
        }
        report.nesting_pass += nest_ok;

        long double lhs = frob_norm(z, &z_v);
        long double rhs = frob_norm(u, &v);
        report.nonexpansive_pass += (lhs <= rhs + 1e-12L);

        report.shrinkage_pass += (frob_norm(z) <= frob_norm(u));
    }
    return report;
}

}  // namespace prosma
