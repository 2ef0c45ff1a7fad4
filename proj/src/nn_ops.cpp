#include "prosma/nn_ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

namespace prosma {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace {

struct ConvDims {
    int64_t n, cin, h, w;
    int64_t cout, cg, kh, kw;  // cg = input channels per group
    int64_t pad, dil, groups;
    int64_t ho, wo;
};

ConvDims check_conv(const Tensor& x, const Conv2dParams& p) {
    if (x.rank() != 4) {
        throw ShapeError("conv2d: input must be [N,C,H,W]");
    }
    if (!p.weight.defined() || p.weight.rank() != 4) {
        throw ShapeError("conv2d: weight must be [C_out,C_in/groups,kH,kW]");
    }
    ConvDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = p.weight.dim(0);
    d.cg = p.weight.dim(1);
    d.kh = p.weight.dim(2);
    d.kw = p.weight.dim(3);
    d.pad = p.padding;
    d.dil = p.dilation;
    d.groups = p.groups;
    if (d.groups < 1 || d.dil < 1 || d.pad < 0) {
        throw ContractError("conv2d: groups/dilation must be >= 1 and padding >= 0");
    }
    if (d.cin % d.groups != 0 || d.cout % d.groups != 0 || d.cg != d.cin / d.groups) {
        throw ShapeError("conv2d: channel/group arithmetic is inconsistent (C_in=" +
                         std::to_string(d.cin) + ", C_out=" + std::to_string(d.cout) +
                         ", groups=" + std::to_string(d.groups) + ", weight C_in/g=" +
                         std::to_string(d.cg) + ")");
    }
    if (p.bias.defined() && (p.bias.rank() != 1 || p.bias.dim(0) != d.cout)) {
        throw ShapeError("conv2d: bias must be [C_out]");
    }
    d.ho = d.h + 2 * d.pad - d.dil * (d.kh - 1);
    d.wo = d.w + 2 * d.pad - d.dil * (d.kw - 1);
    if (d.ho < 1 || d.wo < 1) {
        throw ShapeError("conv2d: kernel does not fit the padded input");
    }
    return d;
}

// Unpacks one group slice [cg,H,W] into a [cg*kh*kw, ho*wo] patch matrix.
void im2col(const double* x, const ConvDims& d, double* col) {
    int64_t pcount = d.ho * d.wo;
    for (int64_t c = 0; c < d.cg; ++c) {
        for (int64_t ky = 0; ky < d.kh; ++ky) {
            for (int64_t kx = 0; kx < d.kw; ++kx) {
                double* dst = col + ((c * d.kh + ky) * d.kw + kx) * pcount;
                int64_t dy = ky * d.dil - d.pad;
                int64_t dx = kx * d.dil - d.pad;
                for (int64_t oy = 0; oy < d.ho; ++oy) {
                    int64_t iy = oy + dy;
                    double* row = dst + oy * d.wo;
                    if (iy < 0 || iy >= d.h) {
                        std::memset(row, 0, sizeof(double) * static_cast<size_t>(d.wo));
                        continue;
                    }
                    const double* src = x + (c * d.h + iy) * d.w;
                    int64_t ox0 = std::max<int64_t>(0, -dx);
                    int64_t ox1 = std::min(d.wo, d.w - dx);
                    for (int64_t ox = 0; ox < ox0; ++ox) row[ox] = 0.0;
                    for (int64_t ox = ox0; ox < ox1; ++ox) row[ox] = src[ox + dx];
                    for (int64_t ox = ox1; ox < d.wo; ++ox) row[ox] = 0.0;
                }
            }
        }
    }
}

// Transpose of im2col: scatters patch-matrix gradients back onto the input.
void col2im_acc(const double* col, const ConvDims& d, double* dx) {
    int64_t pcount = d.ho * d.wo;
    for (int64_t c = 0; c < d.cg; ++c) {
        for (int64_t ky = 0; ky < d.kh; ++ky) {
            for (int64_t kx = 0; kx < d.kw; ++kx) {
                const double* src = col + ((c * d.kh + ky) * d.kw + kx) * pcount;
                int64_t dy = ky * d.dil - d.pad;
                int64_t dx_off = kx * d.dil - d.pad;
                for (int64_t oy = 0; oy < d.ho; ++oy) {
                    int64_t iy = oy + dy;
                    if (iy < 0 || iy >= d.h) continue;
                    double* row = dx + (c * d.h + iy) * d.w;
                    const double* s = src + oy * d.wo;
                    int64_t ox0 = std::max<int64_t>(0, -dx_off);
                    int64_t ox1 = std::min(d.wo, d.w - dx_off);
                    for (int64_t ox = ox0; ox < ox1; ++ox) {
                        row[ox + dx_off] += s[ox];
                    }
                }
            }
        }
    }
}

bool is_pointwise(const ConvDims& d) {
    return d.kh == 1 && d.kw == 1 && d.pad == 0 && d.groups == 1;
}

void conv_forward(const double* xv, const double* wv, const double* bv, double* ov,
                  const ConvDims& d, std::vector<double>& col) {
    int64_t pcount = d.ho * d.wo;
    int64_t kg = d.cg * d.kh * d.kw;
    int64_t cog = d.cout / d.groups;
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t g = 0; g < d.groups; ++g) {
            const double* xg = xv + (n * d.cin + g * d.cg) * d.h * d.w;
            double* og = ov + (n * d.cout + g * cog) * pcount;
            CMapRM W(wv + g * cog * kg, cog, kg);
            MapRM O(og, cog, pcount);
            if (is_pointwise(d)) {
                CMapRM X(xg, kg, pcount);
                O.noalias() = W * X;
            } else {
                im2col(xg, d, col.data());
                CMapRM X(col.data(), kg, pcount);
                O.noalias() = W * X;
            }
        }
        if (bv) {
            for (int64_t c = 0; c < d.cout; ++c) {
                double* row = ov + (n * d.cout + c) * pcount;
                double b = bv[c];
                for (int64_t i = 0; i < pcount; ++i) row[i] += b;
            }
        }
    }
}

// Direct kernels for the depthwise case (groups == C, one channel per group);
// the patch-matrix route degenerates there.
void depthwise_forward(const double* xv, const double* wv, double* ov, const ConvDims& d) {
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t c = 0; c < d.cin; ++c) {
            const double* xc = xv + (n * d.cin + c) * d.h * d.w;
            const double* wc = wv + c * d.kh * d.kw;
            double* oc = ov + (n * d.cin + c) * d.ho * d.wo;
            for (int64_t oy = 0; oy < d.ho; ++oy) {
                for (int64_t ox = 0; ox < d.wo; ++ox) {
                    double acc = 0.0;
                    for (int64_t ky = 0; ky < d.kh; ++ky) {
                        int64_t iy = oy + ky * d.dil - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        for (int64_t kx = 0; kx < d.kw; ++kx) {
                            int64_t ix = ox + kx * d.dil - d.pad;
                            if (ix < 0 || ix >= d.w) continue;
                            acc += wc[ky * d.kw + kx] * xc[iy * d.w + ix];
                        }
                    }
                    oc[oy * d.wo + ox] = acc;
                }
            }
        }
    }
}

void depthwise_backward(const double* xv, const double* wv, const double* og, double* dx,
                        double* dw, const ConvDims& d) {
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t c = 0; c < d.cin; ++c) {
            const double* xc = xv + (n * d.cin + c) * d.h * d.w;
            const double* wc = wv + c * d.kh * d.kw;
            const double* gc = og + (n * d.cin + c) * d.ho * d.wo;
            double* dxc = dx ? dx + (n * d.cin + c) * d.h * d.w : nullptr;
            double* dwc = dw ? dw + c * d.kh * d.kw : nullptr;
            for (int64_t oy = 0; oy < d.ho; ++oy) {
                for (int64_t ox = 0; ox < d.wo; ++ox) {
                    double g = gc[oy * d.wo + ox];
                    if (g == 0.0) continue;
                    for (int64_t ky = 0; ky < d.kh; ++ky) {
                        int64_t iy = oy + ky * d.dil - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        for (int64_t kx = 0; kx < d.kw; ++kx) {
                            int64_t ix = ox + kx * d.dil - d.pad;
                            if (ix < 0 || ix >= d.w) continue;
                            if (dxc) dxc[iy * d.w + ix] += wc[ky * d.kw + kx] * g;
                            if (dwc) dwc[ky * d.kw + kx] += xc[iy * d.w + ix] * g;
                        }
                    }
                }
            }
        }
    }
}

bool is_depthwise(const ConvDims& d) {
    return d.groups == d.cin && d.cg == 1 && d.cout == d.cin;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
    ConvDims d = check_conv(x, p);
    Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo});

    if (is_depthwise(d)) {
        depthwise_forward(x.data(), p.weight.data(), out.data(), d);
        if (p.bias.defined()) {
            int64_t pcount = d.ho * d.wo;
            const double* bv = p.bias.data();
            for (int64_t n = 0; n < d.n; ++n) {
                for (int64_t c = 0; c < d.cout; ++c) {
                    double* row = out.data() + (n * d.cout + c) * pcount;
                    for (int64_t i = 0; i < pcount; ++i) row[i] += bv[c];
                }
            }
        }
    } else {
        std::vector<double> col;
        if (!is_pointwise(d)) {
            col.resize(static_cast<size_t>(d.cg * d.kh * d.kw * d.ho * d.wo));
        }
        conv_forward(x.data(), p.weight.data(), p.bias.defined() ? p.bias.data() : nullptr,
                     out.data(), d, col);
    }

    bool rec = p.bias.defined() ? detail::grad_enabled({&x, &p.weight, &p.bias})
                                : detail::grad_enabled({&x, &p.weight});
    if (rec) {
        detail::mark_output(out);
        auto xs = x.storage();
        auto ws = p.weight.storage();
        auto bs = p.bias.defined() ? p.bias.storage() : nullptr;
        auto os = out.storage();
        Tape::active().record([xs, ws, bs, os, d]() {
            const double* og = os->grad.data();
            int64_t pcount = d.ho * d.wo;
            if (bs && bs->requires_grad) {
                detail::ensure_grad(*bs);
                double* bg = bs->grad.data();
                for (int64_t n = 0; n < d.n; ++n) {
                    for (int64_t c = 0; c < d.cout; ++c) {
                        const double* row = og + (n * d.cout + c) * pcount;
                        double acc = 0.0;
                        for (int64_t i = 0; i < pcount; ++i) acc += row[i];
                        bg[c] += acc;
                    }
                }
            }
            bool need_dx = xs->requires_grad;
            bool need_dw = ws->requires_grad;
            if (!need_dx && !need_dw) return;
            if (need_dx) detail::ensure_grad(*xs);
            if (need_dw) detail::ensure_grad(*ws);

            if (is_depthwise(d)) {
                depthwise_backward(xs->value.data(), ws->value.data(), og,
                                   need_dx ? xs->grad.data() : nullptr,
                                   need_dw ? ws->grad.data() : nullptr, d);
                return;
            }

            int64_t kg = d.cg * d.kh * d.kw;
            int64_t cog = d.cout / d.groups;
            bool pw = is_pointwise(d);
            std::vector<double> col, dcol;
            if (!pw) {
                col.resize(static_cast<size_t>(kg * pcount));
                if (need_dx) dcol.resize(static_cast<size_t>(kg * pcount));
            }
            for (int64_t n = 0; n < d.n; ++n) {
                for (int64_t g = 0; g < d.groups; ++g) {
                    const double* xg = xs->value.data() + (n * d.cin + g * d.cg) * d.h * d.w;
                    const double* gg = og + (n * d.cout + g * cog) * pcount;
                    CMapRM W(ws->value.data() + g * cog * kg, cog, kg);
                    CMapRM dO(gg, cog, pcount);
                    if (pw) {
                        if (need_dx) {
                            MapRM dX(xs->grad.data() + (n * d.cin + g * d.cg) * d.h * d.w, kg,
                                     pcount);
                            dX.noalias() += W.transpose() * dO;
                        }
                        if (need_dw) {
                            MapRM dW(ws->grad.data() + g * cog * kg, cog, kg);
                            CMapRM X(xg, kg, pcount);
                            dW.noalias() += dO * X.transpose();
                        }
                    } else {
                        if (need_dw) {
                            im2col(xg, d, col.data());
                            MapRM dW(ws->grad.data() + g * cog * kg, cog, kg);
                            CMapRM X(col.data(), kg, pcount);
                            dW.noalias() += dO * X.transpose();
                        }
                        if (need_dx) {
                            MapRM dC(dcol.data(), kg, pcount);
                            dC.noalias() = W.transpose() * dO;
                            col2im_acc(dcol.data(), d,
                                       xs->grad.data() + (n * d.cin + g * d.cg) * d.h * d.w);
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor depthwise_dilated_conv(const Tensor& x, const Tensor& kernel, int dilation) {
    if (x.rank() != 4 || kernel.rank() != 4 || kernel.dim(1) != 1 ||
        kernel.dim(0) != x.dim(1)) {
        throw ShapeError("depthwise_dilated_conv: kernel must be [C,1,kH,kW] with C matching the input");
    }
    Conv2dParams p;
    p.weight = kernel;
    p.dilation = dilation;
    p.padding = dilation;  // 3x3 same-size contract
    p.groups = static_cast<int>(x.dim(1));
    return conv2d(x, p);
}

Tensor maxpool2(const Tensor& x) {
    if (x.rank() != 4) {
        throw ShapeError("maxpool2: input must be [N,C,H,W]");
    }
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2: spatial extents must be even, got " + std::to_string(h) +
                         "x" + std::to_string(w));
    }
    int64_t ho = h / 2, wo = w / 2;
    Tensor out = Tensor::zeros({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.size()));

    const double* xv = x.data();
    double* ov = out.data();
    int64_t oi = 0;
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const double* plane = xv + nc * h * w;
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox, ++oi) {
                double best = -std::numeric_limits<double>::infinity();
                double second = best;
                int64_t best_i = 0;
                for (int64_t ky = 0; ky < 2; ++ky) {
                    for (int64_t kx = 0; kx < 2; ++kx) {
                        int64_t idx = (oy * 2 + ky) * w + ox * 2 + kx;
                        double v = plane[idx];
                        if (v > best) {  // strict: first occurrence wins ties
                            second = best;
                            best = v;
                            best_i = nc * h * w + idx;
                        } else if (v > second) {
                            second = v;
                        }
                    }
                }
                ov[oi] = best;
                (*argmax)[static_cast<size_t>(oi)] = best_i;
                if (kink::armed()) {
                    kink::note(best - second);
                }
            }
        }
    }

    if (detail::grad_enabled({&x})) {
        detail::mark_output(out);
        auto xs = x.storage();
        auto os = out.storage();
        int64_t total = out.size();
        Tape::active().record([xs, os, argmax, total]() {
            if (!xs->requires_grad) return;
            detail::ensure_grad(*xs);
            double* xg = xs->grad.data();
            const double* og = os->grad.data();
            for (int64_t i = 0; i < total; ++i) {
                xg[(*argmax)[static_cast<size_t>(i)]] += og[i];
            }
        });
    }
    return out;
}

namespace {

// Per-axis source taps for the half-pixel x2 upsampling.
struct UpAxis {
    std::vector<int64_t> i0, i1;
    std::vector<double> f;  // weight of i1
};

UpAxis up_axis(int64_t extent) {
    UpAxis a;
    a.i0.resize(static_cast<size_t>(2 * extent));
    a.i1.resize(static_cast<size_t>(2 * extent));
    a.f.resize(static_cast<size_t>(2 * extent));
    for (int64_t o = 0; o < 2 * extent; ++o) {
        double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        src = std::min(std::max(src, 0.0), static_cast<double>(extent - 1));
        int64_t lo = static_cast<int64_t>(std::floor(src));
        a.i0[static_cast<size_t>(o)] = lo;
        a.i1[static_cast<size_t>(o)] = std::min(lo + 1, extent - 1);
        a.f[static_cast<size_t>(o)] = src - static_cast<double>(lo);
    }
    return a;
}

}  // namespace

Tensor bilinear_up2(const Tensor& x) {
    if (x.rank() != 4) {
        throw ShapeError("bilinear_up2: input must be [N,C,H,W]");
    }
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out = Tensor::zeros({n, c, 2 * h, 2 * w});
    UpAxis ay = up_axis(h), ax = up_axis(w);

    const double* xv = x.data();
    double* ov = out.data();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const double* plane = xv + nc * h * w;
        double* oplane = ov + nc * 4 * h * w;
        for (int64_t oy = 0; oy < 2 * h; ++oy) {
            int64_t y0 = ay.i0[static_cast<size_t>(oy)], y1 = ay.i1[static_cast<size_t>(oy)];
            double fy = ay.f[static_cast<size_t>(oy)];
            for (int64_t ox = 0; ox < 2 * w; ++ox) {
                int64_t x0 = ax.i0[static_cast<size_t>(ox)], x1 = ax.i1[static_cast<size_t>(ox)];
                double fx = ax.f[static_cast<size_t>(ox)];
                oplane[oy * 2 * w + ox] = (1 - fy) * (1 - fx) * plane[y0 * w + x0] +
                                          (1 - fy) * fx * plane[y0 * w + x1] +
                                          fy * (1 - fx) * plane[y1 * w + x0] +
                                          fy * fx * plane[y1 * w + x1];
            }
        }
    }

    if (detail::grad_enabled({&x})) {
        detail::mark_output(out);
        auto xs = x.storage();
        auto os = out.storage();
        Tape::active().record([xs, os, n, c, h, w]() {
            if (!xs->requires_grad) return;
            detail::ensure_grad(*xs);
            UpAxis ay = up_axis(h), ax = up_axis(w);
            double* xg = xs->grad.data();
            const double* og = os->grad.data();
            for (int64_t nc = 0; nc < n * c; ++nc) {
                double* gplane = xg + nc * h * w;
                const double* oplane = og + nc * 4 * h * w;
                for (int64_t oy = 0; oy < 2 * h; ++oy) {
                    int64_t y0 = ay.i0[static_cast<size_t>(oy)],
                            y1 = ay.i1[static_cast<size_t>(oy)];
                    double fy = ay.f[static_cast<size_t>(oy)];
                    for (int64_t ox = 0; ox < 2 * w; ++ox) {
                        int64_t x0 = ax.i0[static_cast<size_t>(ox)],
                                x1 = ax.i1[static_cast<size_t>(ox)];
                        double fx = ax.f[static_cast<size_t>(ox)];
                        double g = oplane[oy * 2 * w + ox];
                        gplane[y0 * w + x0] += (1 - fy) * (1 - fx) * g;
                        gplane[y0 * w + x1] += (1 - fy) * fx * g;
                        gplane[y1 * w + x0] += fy * (1 - fx) * g;
                        gplane[y1 * w + x1] += fy * fx * g;
                    }
                }
            }
        });
    }
    return out;
}

Tensor gap(const Tensor& x) {
    if (x.rank() != 4) {
        throw ShapeError("gap: input must be [N,C,H,W]");
    }
    int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({n, c});
    const double* xv = x.data();
    double* ov = out.data();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        double acc = 0.0;
        const double* plane = xv + nc * hw;
        for (int64_t i = 0; i < hw; ++i) acc += plane[i];
        ov[nc] = acc / static_cast<double>(hw);
    }

    if (detail::grad_enabled({&x})) {
        detail::mark_output(out);
        auto xs = x.storage();
        auto os = out.storage();
        Tape::active().record([xs, os, n, c, hw]() {
            if (!xs->requires_grad) return;
            detail::ensure_grad(*xs);
            double* xg = xs->grad.data();
            const double* og = os->grad.data();
            double inv = 1.0 / static_cast<double>(hw);
            for (int64_t nc = 0; nc < n * c; ++nc) {
                double g = og[nc] * inv;
                double* plane = xg + nc * hw;
                for (int64_t i = 0; i < hw; ++i) plane[i] += g;
            }
        });
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
        a.dim(3) != b.dim(3)) {
        throw ShapeError("concat_channels: batch/spatial dims must match");
    }
    int64_t n = a.dim(0), c1 = a.dim(1), c2 = b.dim(1), hw = a.dim(2) * a.dim(3);
    Tensor out = Tensor::zeros({n, c1 + c2, a.dim(2), a.dim(3)});
    double* ov = out.data();
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(ov + i * (c1 + c2) * hw, a.data() + i * c1 * hw,
                    sizeof(double) * static_cast<size_t>(c1 * hw));
        std::memcpy(ov + (i * (c1 + c2) + c1) * hw, b.data() + i * c2 * hw,
                    sizeof(double) * static_cast<size_t>(c2 * hw));
    }

    if (detail::grad_enabled({&a, &b})) {
        detail::mark_output(out);
        auto as = a.storage();
        auto bs = b.storage();
        auto os = out.storage();
        Tape::active().record([as, bs, os, n, c1, c2, hw]() {
            const double* og = os->grad.data();
            if (as->requires_grad) {
                detail::ensure_grad(*as);
                double* ag = as->grad.data();
                for (int64_t i = 0; i < n; ++i) {
                    const double* src = og + i * (c1 + c2) * hw;
                    double* dst = ag + i * c1 * hw;
                    for (int64_t j = 0; j < c1 * hw; ++j) dst[j] += src[j];
                }
            }
            if (bs->requires_grad) {
                detail::ensure_grad(*bs);
                double* bg = bs->grad.data();
                for (int64_t i = 0; i < n; ++i) {
                    const double* src = og + (i * (c1 + c2) + c1) * hw;
                    double* dst = bg + i * c2 * hw;
                    for (int64_t j = 0; j < c2 * hw; ++j) dst[j] += src[j];
                }
            }
        });
    }
    return out;
}

Tensor res_block(const Tensor& x, const ResBlockParams& p) {
    Tensor h = relu(conv2d(x, p.conv1));
    Tensor body = conv2d(h, p.conv2);
    Tensor shortcut = p.proj.weight.defined() ? conv2d(x, p.proj) : x;
    return relu(add(body, shortcut));
}

}  // namespace prosma
