#include "prosma/gate.hpp"

#include <cmath>
#include <string>

namespace prosma {

GateVariant parse_variant(const std::string& name) {
    if (name == "full") return GateVariant::Full;
    if (name == "ss-only") return GateVariant::SpatialOnly;
    if (name == "cg-only") return GateVariant::ChannelOnly;
    if (name == "plain") return GateVariant::Plain;
    if (name == "dense") return GateVariant::Dense;
    throw ContractError("unknown gate variant \"" + name +
                        "\" (expected full|ss-only|cg-only|plain|dense)");
}

std::string variant_name(GateVariant v) {
    switch (v) {
        case GateVariant::Full: return "full";
        case GateVariant::SpatialOnly: return "ss-only";
        case GateVariant::ChannelOnly: return "cg-only";
        case GateVariant::Plain: return "plain";
        case GateVariant::Dense: return "dense";
    }
    return "?";
}

Tensor soft_threshold(const Tensor& u, const Tensor& lambda) {
    if (!lambda.defined() || lambda.rank() != 1) {
        throw ShapeError("soft_threshold: lambda must be a rank-1 tensor");
    }
    int64_t nlam = lambda.dim(0);
    int64_t channels = u.rank() >= 2 ? u.dim(1) : 1;
    if (nlam != 1 && nlam != channels) {
        throw ShapeError("soft_threshold: lambda length " + std::to_string(nlam) +
                         " does not match " + std::to_string(channels) + " channels");
    }
    const double* lv = lambda.data();
    for (int64_t c = 0; c < nlam; ++c) {
        if (lv[c] < 0.0) {
            throw ContractError("soft_threshold: lambda must be non-negative");
        }
    }

    // inner = elements sharing one lambda entry (H*W for [N,C,H,W]).
    int64_t total = u.size();
    int64_t inner = 1;
    for (int i = 2; i < u.rank(); ++i) inner *= u.dim(i);
    int64_t lam_of_scale = nlam == 1 ? 0 : 1;  // 0 forces index 0 everywhere

    Tensor out = Tensor::zeros(u.dims());
    const double* uv = u.data();
    double* ov = out.data();
    for (int64_t i = 0; i < total; ++i) {
        double lam = lv[lam_of_scale * ((i / inner) % channels)];
        double a = std::abs(uv[i]);
        // sub-threshold entries are assigned literal 0.0, not a tiny residue
        ov[i] = a > lam ? (uv[i] > 0.0 ? a - lam : lam - a) : 0.0;
    }
    if (kink::armed()) {
        for (int64_t i = 0; i < total; ++i) {
            double lam = lv[lam_of_scale * ((i / inner) % channels)];
            kink::note(std::abs(std::abs(uv[i]) - lam));
        }
    }

    if (detail::grad_enabled({&u, &lambda})) {
        detail::mark_output(out);
        auto us = u.storage();
        auto ls = lambda.storage();
        auto os = out.storage();
        Tape::active().record([us, ls, os, total, inner, channels, lam_of_scale]() {
            const double* og = os->grad.data();
            const double* uvv = us->value.data();
            const double* lvv = ls->value.data();
            if (us->requires_grad) {
                detail::ensure_grad(*us);
                double* ug = us->grad.data();
                for (int64_t i = 0; i < total; ++i) {
                    double lam = lvv[lam_of_scale * ((i / inner) % channels)];
                    if (std::abs(uvv[i]) > lam) {
                        ug[i] += og[i];
                    }
                }
            }
            if (ls->requires_grad) {
                detail::ensure_grad(*ls);
                double* lg = ls->grad.data();
                for (int64_t i = 0; i < total; ++i) {
                    int64_t c = lam_of_scale * ((i / inner) % channels);
                    double uvi = uvv[i];
                    if (std::abs(uvi) > lvv[c]) {
                        lg[c] += (uvi > 0.0 ? -1.0 : 1.0) * og[i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor compatibility_field(const Tensor& x, const Tensor& g, const GateParams& p,
                           GateTrace* trace) {
    if (x.rank() != 4 || g.rank() != 4 || x.dim(0) != g.dim(0) || x.dim(2) != g.dim(2) ||
        x.dim(3) != g.dim(3)) {
        throw ShapeError("compatibility_field: x and g must share batch and spatial dims");
    }
    Tensor q = conv2d(x, {p.wx, Tensor(), 1, 0, 1});
    Tensor k = conv2d(g, {p.wg, Tensor(), 1, 0, 1});
    Tensor v = relu(add(q, k));
    Tensor cat;
    for (size_t i = 0; i < p.dw.size(); ++i) {
        Tensor branch = depthwise_dilated_conv(v, p.dw[i], p.dilations[i]);
        cat = cat.defined() ? concat_channels(cat, branch) : branch;
    }
    Tensor u = conv2d(cat, {p.fuse, Tensor(), 1, 0, 1});
    if (trace) {
        trace->q = q;
        trace->k = k;
        trace->v = v;
        trace->u = u;
    }
    return u;
}

Tensor spatial_mask(const Tensor& z_star, const GateParams& p) {
    return sigmoid(conv2d(z_star, {p.psi_w, p.psi_b, 1, 0, 1}));
}

Tensor channel_gate(const Tensor& g, const GateParams& p) {
    Tensor pooled = gap(g);
    Tensor hidden = relu(linear(pooled, p.mlp_w1, p.mlp_b1));
    return sigmoid(linear(hidden, p.mlp_w2, p.mlp_b2));
}

std::vector<double> zero_fraction_per_channel(const Tensor& z_star) {
    int64_t n = z_star.dim(0), c = z_star.dim(1), hw = z_star.dim(2) * z_star.dim(3);
    std::vector<double> frac(static_cast<size_t>(c), 0.0);
    const double* zv = z_star.data();
    for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t ci = 0; ci < c; ++ci) {
            const double* plane = zv + (ni * c + ci) * hw;
            int64_t zeros = 0;
            for (int64_t i = 0; i < hw; ++i) {
                if (plane[i] == 0.0) ++zeros;
            }
            frac[static_cast<size_t>(ci)] += static_cast<double>(zeros);
        }
    }
    for (double& f : frac) {
        f /= static_cast<double>(n * hw);
    }
    return frac;
}

Tensor prosma_gate(const Tensor& x, const Tensor& g, const GateParams& p, GateVariant variant,
                   GateTrace* trace) {
    int64_t n = x.dim(0);
    Tensor out;
    Tensor psi, cgate;

    switch (variant) {
        case GateVariant::Plain:
            out = x;
            break;
        case GateVariant::Dense: {
            // attention-gate-style dense mask: no prox, no multi-scale field
            Tensor q = conv2d(x, {p.wx, Tensor(), 1, 0, 1});
            Tensor k = conv2d(g, {p.wg, Tensor(), 1, 0, 1});
            Tensor v = relu(add(q, k));
            psi = sigmoid(conv2d(v, {p.psi_w, p.psi_b, 1, 0, 1}));
            out = mul(x, psi);
            if (trace) {
                trace->q = q;
                trace->k = k;
                trace->v = v;
            }
            break;
        }
        case GateVariant::ChannelOnly:
            cgate = channel_gate(g, p);
            out = mul(x, cgate);
            break;
        case GateVariant::SpatialOnly:
        case GateVariant::Full: {
            Tensor u = compatibility_field(x, g, p, trace);
            Tensor lambda = softplus(p.theta);
            Tensor z = soft_threshold(u, lambda);
            psi = spatial_mask(z, p);
            if (trace) {
                trace->lambda = lambda;
                trace->z_star = z;
                trace->zero_fraction_per_channel = zero_fraction_per_channel(z);
            }
            if (variant == GateVariant::Full) {
                cgate = channel_gate(g, p);
                out = mul(mul(x, cgate), psi);
            } else {
                out = mul(x, psi);
            }
            break;
        }
    }

    if (trace) {
        // variants that skip a mask report the identity sentinel for it
        trace->psi_mask = psi.defined() ? psi : Tensor::full({n, 1, x.dim(2), x.dim(3)}, 1.0);
        trace->channel_gate = cgate.defined() ? cgate : Tensor::full({n, x.dim(1)}, 1.0);
        trace->output = out;
    }
    return out;
}

}  // namespace prosma
