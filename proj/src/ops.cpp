#include "prosma/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>

namespace prosma {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace kink {
namespace {
thread_local bool g_armed = false;
thread_local double g_margin = std::numeric_limits<double>::infinity();
}  // namespace

void arm() {
    g_armed = true;
    g_margin = std::numeric_limits<double>::infinity();
}

double disarm() {
    g_armed = false;
    return g_margin;
}

bool armed() { return g_armed; }

void note(double margin) {
    if (margin < g_margin) {
        g_margin = margin;
    }
}
}  // namespace kink

double stable_sigmoid(double t) {
    if (t >= 0.0) {
        return 1.0 / (1.0 + std::exp(-t));
    }
    double e = std::exp(t);
    return e / (1.0 + e);
}

double stable_softplus(double t) {
    return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

namespace {

std::string dims_str(const std::vector<int64_t>& d) {
    std::string s = "[";
    for (size_t i = 0; i < d.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(d[i]);
    }
    return s + "]";
}

// How a small operand lines up against an [N,C,H,W] partner.
struct BroadcastPlan {
    enum Kind { Same, Channel, SampleChannel, Pixel } kind = Same;
    bool a_is_small = false;
    int64_t n = 0, c = 0, hw = 0;
};

BroadcastPlan make_plan(const Tensor& a, const Tensor& b) {
    if (a.dims() == b.dims()) {
        return {BroadcastPlan::Same, false, 0, 0, 0};
    }
    const Tensor* big = &a;
    const Tensor* small = &b;
    bool a_is_small = false;
    if (a.rank() < 4 || (b.rank() == 4 && a.rank() == 4 && a.dim(1) == 1)) {
        std::swap(big, small);
        a_is_small = true;
    }
    if (big->rank() != 4) {
        throw ShapeError("elementwise: incompatible dims " + dims_str(a.dims()) + " vs " +
                         dims_str(b.dims()));
    }
    int64_t n = big->dim(0), c = big->dim(1), hw = big->dim(2) * big->dim(3);
    BroadcastPlan p{BroadcastPlan::Same, a_is_small, n, c, hw};
    if (small->rank() == 1 && small->dim(0) == c) {
        p.kind = BroadcastPlan::Channel;
    } else if (small->rank() == 2 && small->dim(0) == n && small->dim(1) == c) {
        p.kind = BroadcastPlan::SampleChannel;
    } else if (small->rank() == 4 && small->dim(0) == n && small->dim(1) == 1 &&
               small->dim(2) == big->dim(2) && small->dim(3) == big->dim(3)) {
        p.kind = BroadcastPlan::Pixel;
    } else {
        throw ShapeError("elementwise: incompatible dims " + dims_str(a.dims()) + " vs " +
                         dims_str(b.dims()));
    }
    return p;
}

// Visits (big_index, small_index) pairs in row-major order of the big tensor.
template <typename F>
void for_each_pair(const BroadcastPlan& p, int64_t total, F&& f) {
    if (p.kind == BroadcastPlan::Same) {
        for (int64_t i = 0; i < total; ++i) {
            f(i, i);
        }
        return;
    }
    int64_t i = 0;
    for (int64_t n = 0; n < p.n; ++n) {
        for (int64_t c = 0; c < p.c; ++c) {
            int64_t base = p.kind == BroadcastPlan::Channel        ? c
                           : p.kind == BroadcastPlan::SampleChannel ? n * p.c + c
                                                                    : n * p.hw;
            for (int64_t k = 0; k < p.hw; ++k, ++i) {
                f(i, p.kind == BroadcastPlan::Pixel ? base + k : base);
            }
        }
    }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(BinOp op, const Tensor& a, const Tensor& b) {
    BroadcastPlan plan = make_plan(a, b);
    const Tensor& big = plan.a_is_small ? b : a;
    const Tensor& small = plan.a_is_small ? a : b;

    Tensor out = Tensor::zeros(big.dims());
    const double* bv = big.data();
    const double* sv = small.data();
    double* ov = out.data();
    bool swapped = plan.a_is_small;
    for_each_pair(plan, big.size(), [&](int64_t i, int64_t j) {
        double x = swapped ? sv[j] : bv[i];
        double y = swapped ? bv[i] : sv[j];
        ov[i] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
    });

    if (detail::grad_enabled({&a, &b})) {
        detail::mark_output(out);
        auto bs = big.storage();
        auto ss = small.storage();
        auto os = out.storage();
        int64_t total = big.size();
        Tape::active().record([op, plan, bs, ss, os, total, swapped]() {
            const double* og = os->grad.data();
            if (bs->requires_grad) {
                detail::ensure_grad(*bs);
                double* bg = bs->grad.data();
                const double* svv = ss->value.data();
                for_each_pair(plan, total, [&](int64_t i, int64_t j) {
                    switch (op) {
                        case BinOp::Add: bg[i] += og[i]; break;
                        case BinOp::Sub: bg[i] += swapped ? -og[i] : og[i]; break;
                        case BinOp::Mul: bg[i] += og[i] * svv[j]; break;
                    }
                });
            }
            if (ss->requires_grad) {
                detail::ensure_grad(*ss);
                double* sg = ss->grad.data();
                const double* bvv = bs->value.data();
                for_each_pair(plan, total, [&](int64_t i, int64_t j) {
                    switch (op) {
                        case BinOp::Add: sg[j] += og[i]; break;
                        case BinOp::Sub: sg[j] += swapped ? og[i] : -og[i]; break;
                        case BinOp::Mul: sg[j] += og[i] * bvv[i]; break;
                    }
                });
            }
        });
    }
    return out;
}

// Unary elementwise op: fwd maps a value, dmul gives dy/dx from (x, y),
// margin (optional) reports distance to the nearest kink.
template <typename Fwd, typename Dmul, typename Margin>
Tensor unary_op(const Tensor& x, Fwd fwd, Dmul dmul, Margin margin, bool differentiable = true) {
    Tensor out = Tensor::zeros(x.dims());
    const double* xv = x.data();
    double* ov = out.data();
    int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) {
        ov[i] = fwd(xv[i]);
    }
    if (kink::armed()) {
        for (int64_t i = 0; i < n; ++i) {
            kink::note(margin(xv[i]));
        }
    }
    if (differentiable && detail::grad_enabled({&x})) {
        detail::mark_output(out);
        auto xs = x.storage();
        auto os = out.storage();
        Tape::active().record([xs, os, n, dmul]() {
            if (!xs->requires_grad) return;
            detail::ensure_grad(*xs);
            const double* og = os->grad.data();
            const double* xvv = xs->value.data();
            const double* ovv = os->value.data();
            double* xg = xs->grad.data();
            for (int64_t i = 0; i < n; ++i) {
                xg[i] += og[i] * dmul(xvv[i], ovv[i]);
            }
        });
    }
    return out;
}

double no_margin(double) { return std::numeric_limits<double>::infinity(); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Mul, a, b); }

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(
        a, [s](double t) { return t + s; }, [](double, double) { return 1.0; }, no_margin);
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary_op(
        a, [s](double t) { return t * s; }, [s](double, double) { return s; }, no_margin);
}

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double t) { return t > 0.0 ? t : 0.0; },
        [](double t, double) { return t > 0.0 ? 1.0 : 0.0; },  // subgradient at 0 is 0
        [](double t) { return std::abs(t); });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, [](double t) { return stable_sigmoid(t); },
        [](double, double y) { return y * (1.0 - y); }, no_margin);
}

Tensor softplus(const Tensor& x) {
    return unary_op(
        x, [](double t) { return stable_softplus(t); },
        [](double t, double) { return stable_sigmoid(t); }, no_margin);
}

Tensor sign(const Tensor& x) {
    return unary_op(
        x, [](double t) { return t > 0.0 ? 1.0 : t < 0.0 ? -1.0 : 0.0; },
        [](double, double) { return 0.0; }, [](double t) { return std::abs(t); },
        /*differentiable=*/false);
}

Tensor abs(const Tensor& x) {
    return unary_op(
        x, [](double t) { return std::abs(t); },
        [](double t, double) { return t > 0.0 ? 1.0 : t < 0.0 ? -1.0 : 0.0; },
        [](double t) { return std::abs(t); });
}

Tensor max_scalar(const Tensor& x, double s) {
    return unary_op(
        x, [s](double t) { return t > s ? t : s; },
        [s](double t, double) { return t > s ? 1.0 : 0.0; },
        [s](double t) { return std::abs(t - s); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: expects rank-2 operands, got " + dims_str(a.dims()) + " and " +
                         dims_str(b.dims()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner extents differ, " + dims_str(a.dims()) + " x " +
                         dims_str(b.dims()));
    }
    int64_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    Tensor out = Tensor::zeros({m, p});
    CMapRM A(a.data(), m, k), B(b.data(), k, p);
    MapRM C(out.data(), m, p);
    C.noalias() = A * B;

    if (detail::grad_enabled({&a, &b})) {
        detail::mark_output(out);
        auto as = a.storage();
        auto bs = b.storage();
        auto os = out.storage();
        Tape::active().record([as, bs, os, m, k, p]() {
            CMapRM dC(os->grad.data(), m, p);
            if (as->requires_grad) {
                detail::ensure_grad(*as);
                MapRM dA(as->grad.data(), m, k);
                CMapRM B2(bs->value.data(), k, p);
                dA.noalias() += dC * B2.transpose();
            }
            if (bs->requires_grad) {
                detail::ensure_grad(*bs);
                MapRM dB(bs->grad.data(), k, p);
                CMapRM A2(as->value.data(), m, k);
                dB.noalias() += A2.transpose() * dC;
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
        throw ShapeError("linear: x " + dims_str(x.dims()) + " vs w " + dims_str(w.dims()));
    }
    int64_t n = x.dim(0), fin = x.dim(1), fout = w.dim(0);
    if (b.defined() && (b.rank() != 1 || b.dim(0) != fout)) {
        throw ShapeError("linear: bias " + dims_str(b.dims()) + " does not match out width " +
                         std::to_string(fout));
    }
    Tensor out = Tensor::zeros({n, fout});
    CMapRM X(x.data(), n, fin), W(w.data(), fout, fin);
    MapRM Y(out.data(), n, fout);
    Y.noalias() = X * W.transpose();
    if (b.defined()) {
        const double* bv = b.data();
        double* ov = out.data();
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < fout; ++j) {
                ov[i * fout + j] += bv[j];
            }
        }
    }

    bool rec = b.defined() ? detail::grad_enabled({&x, &w, &b}) : detail::grad_enabled({&x, &w});
    if (rec) {
        detail::mark_output(out);
        auto xs = x.storage();
        auto ws = w.storage();
        auto bs = b.defined() ? b.storage() : nullptr;
        auto os = out.storage();
        Tape::active().record([xs, ws, bs, os, n, fin, fout]() {
            CMapRM dY(os->grad.data(), n, fout);
            if (xs->requires_grad) {
                detail::ensure_grad(*xs);
                MapRM dX(xs->grad.data(), n, fin);
                CMapRM W2(ws->value.data(), fout, fin);
                dX.noalias() += dY * W2;
            }
            if (ws->requires_grad) {
                detail::ensure_grad(*ws);
                MapRM dW(ws->grad.data(), fout, fin);
                CMapRM X2(xs->value.data(), n, fin);
                dW.noalias() += dY.transpose() * X2;
            }
            if (bs && bs->requires_grad) {
                detail::ensure_grad(*bs);
                const double* og = os->grad.data();
                double* bg = bs->grad.data();
                for (int64_t i = 0; i < n; ++i) {
                    for (int64_t j = 0; j < fout; ++j) {
                        bg[j] += og[i * fout + j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    const double* xv = x.data();
    double acc = 0.0;
    int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) {
        acc += xv[i];
    }
    out.data()[0] = acc;

    if (detail::grad_enabled({&x})) {
        detail::mark_output(out);
        auto xs = x.storage();
        auto os = out.storage();
        Tape::active().record([xs, os, n]() {
            if (!xs->requires_grad) return;
            detail::ensure_grad(*xs);
            double g = os->grad[0];
            double* xg = xs->grad.data();
            for (int64_t i = 0; i < n; ++i) {
                xg[i] += g;
            }
        });
    }
    return out;
}

}  // namespace prosma
