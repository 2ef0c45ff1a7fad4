#include "prosma/loss.hpp"

#include <cmath>
#include <string>

#include "prosma/ops.hpp"

namespace prosma {

namespace {

void check_binary(const Tensor& mask) {
    const double* mv = mask.data();
    for (int64_t i = 0; i < mask.size(); ++i) {
        if (mv[i] != 0.0 && mv[i] != 1.0) {
            throw ContractError("loss: mask must be binary (entry " + std::to_string(i) + " is " +
                                std::to_string(mv[i]) + ")");
        }
    }
}

}  // namespace

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& target) {
    if (logits.dims() != target.dims()) {
        throw ShapeError("bce: logits and target dims differ");
    }
    int64_t n = logits.size();
    const double* lv = logits.data();
    const double* tv = target.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        // softplus(l) - y*l  ==  -y*log(p) - (1-y)*log(1-p), stable form
        acc += stable_softplus(lv[i]) - tv[i] * lv[i];
    }
    Tensor out = Tensor::zeros({1});
    out.data()[0] = acc / static_cast<double>(n);

    if (detail::grad_enabled({&logits})) {
        detail::mark_output(out);
        auto ls = logits.storage();
        auto ts = target.storage();
        auto os = out.storage();
        Tape::active().record([ls, ts, os, n]() {
            if (!ls->requires_grad) return;
            detail::ensure_grad(*ls);
            double g = os->grad[0] / static_cast<double>(n);
            double* lg = ls->grad.data();
            const double* lvv = ls->value.data();
            const double* tvv = ts->value.data();
            for (int64_t i = 0; i < n; ++i) {
                lg[i] += g * (stable_sigmoid(lvv[i]) - tvv[i]);
            }
        });
    }
    return out;
}

Tensor dice_loss_mean(const Tensor& probs, const Tensor& target) {
    if (probs.rank() != 4 || probs.dims() != target.dims()) {
        throw ShapeError("dice: expects matching [N,1,H,W] tensors");
    }
    int64_t n = probs.dim(0);
    int64_t per = probs.size() / n;
    const double* pv = probs.data();
    const double* tv = target.data();

    double loss = 0.0;
    std::vector<double> numer(static_cast<size_t>(n)), denom(static_cast<size_t>(n));
    for (int64_t s = 0; s < n; ++s) {
        double sp = 0.0, sy = 0.0, spy = 0.0;
        const double* p = pv + s * per;
        const double* y = tv + s * per;
        for (int64_t i = 0; i < per; ++i) {
            sp += p[i];
            sy += y[i];
            spy += p[i] * y[i];
        }
        numer[static_cast<size_t>(s)] = 2.0 * spy + 1.0;
        denom[static_cast<size_t>(s)] = sp + sy + 1.0;
        loss += 1.0 - numer[static_cast<size_t>(s)] / denom[static_cast<size_t>(s)];
    }
    Tensor out = Tensor::zeros({1});
    out.data()[0] = loss / static_cast<double>(n);

    if (detail::grad_enabled({&probs})) {
        detail::mark_output(out);
        auto ps = probs.storage();
        auto ts = target.storage();
        auto os = out.storage();
        Tape::active().record([ps, ts, os, n, per, numer, denom]() {
            if (!ps->requires_grad) return;
            detail::ensure_grad(*ps);
            double g = os->grad[0] / static_cast<double>(n);
            double* pg = ps->grad.data();
            const double* yv = ts->value.data();
            for (int64_t s = 0; s < n; ++s) {
                double nu = numer[static_cast<size_t>(s)];
                double de = denom[static_cast<size_t>(s)];
                double* dst = pg + s * per;
                const double* y = yv + s * per;
                for (int64_t i = 0; i < per; ++i) {
                    // d/dp_i [ -nu/de ] = -(2*y_i*de - nu) / de^2
                    dst[i] += g * (-(2.0 * y[i] * de - nu) / (de * de));
                }
            }
        });
    }
    return out;
}

Tensor dice_bce_loss(const Tensor& logits, const Tensor& mask, double bce_weight,
                     double dice_weight) {
    check_binary(mask);
    Tensor bce = bce_with_logits_mean(logits, mask);
    Tensor dice = dice_loss_mean(sigmoid(logits), mask);
    return add(mul_scalar(bce, bce_weight), mul_scalar(dice, dice_weight));
}

}  // namespace prosma
