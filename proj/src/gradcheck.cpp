#include "prosma/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "prosma/gate.hpp"
#include "prosma/loss.hpp"
#include "prosma/model.hpp"
#include "prosma/nn_ops.hpp"
#include "prosma/ops.hpp"
#include "prosma/rng.hpp"

namespace prosma {

namespace {

Tensor rand_tensor(Rng& rng, std::vector<int64_t> dims, double lo, double hi,
                   bool requires_grad = true) {
    Tensor t = Tensor::zeros(std::move(dims));
    for (int64_t i = 0; i < t.size(); ++i) {
        t.data()[i] = rng.uniform(lo, hi);
    }
    if (requires_grad) {
        t.set_requires_grad(true);
    }
    return t;
}

Tensor rand_binary(Rng& rng, std::vector<int64_t> dims) {
    Tensor t = Tensor::zeros(std::move(dims));
    for (int64_t i = 0; i < t.size(); ++i) {
        t.data()[i] = rng.uniform_int(2) ? 1.0 : 0.0;
    }
    return t;
}

// loss = sum(w .* y) with fixed weights, so gradient bugs that a plain
// sum would average away still show up
std::function<Tensor()> weighted_probe(Rng& rng, std::function<Tensor()> fwd,
                                       const std::vector<int64_t>& out_dims) {
    Tensor w = rand_tensor(rng, out_dims, -1.0, 1.0, /*requires_grad=*/false);
    return [fwd = std::move(fwd), w]() { return sum(mul(fwd(), w)); };
}

}  // namespace

FdOutcome fd_check_once(const std::vector<Tensor>& leaves, const std::function<Tensor()>& probe,
                        const FdOptions& opt) {
    Tape& tape = Tape::active();
    tape.reset();
    kink::arm();
    Tensor loss = probe();
    double margin = kink::disarm();
    if (margin < opt.kink_band) {
        tape.reset();
        return {true, 0.0, 0};
    }

    std::vector<std::vector<double>> analytic;
    if (loss.requires_grad()) {
        tape.backward(loss);
    }
    for (const Tensor& leaf : leaves) {
        const double* g = leaf.grad();
        if (g && loss.requires_grad()) {
            analytic.emplace_back(g, g + leaf.size());
        } else {
            analytic.emplace_back(static_cast<size_t>(leaf.size()), 0.0);
        }
    }
    tape.reset();
    for (const Tensor& leaf : leaves) {
        const_cast<Tensor&>(leaf).zero_grad();
    }

    FdOutcome out;
    NoGradGuard no_grad;
    Rng coord_rng(opt.coord_seed);
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor leaf = leaves[li];  // shallow copy, shares storage
        std::vector<int64_t> coords(static_cast<size_t>(leaf.size()));
        for (int64_t i = 0; i < leaf.size(); ++i) coords[static_cast<size_t>(i)] = i;
        if (opt.max_coords_per_leaf > 0 &&
            leaf.size() > opt.max_coords_per_leaf) {  // partial Fisher-Yates prefix
            for (int64_t i = 0; i < opt.max_coords_per_leaf; ++i) {
                int64_t j = i + coord_rng.uniform_int(leaf.size() - i);
                std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
            }
            coords.resize(static_cast<size_t>(opt.max_coords_per_leaf));
        }
        for (int64_t i : coords) {
            double orig = leaf.data()[i];
            leaf.data()[i] = orig + opt.step;
            double lp = probe().item();
            leaf.data()[i] = orig - opt.step;
            double lm = probe().item();
            leaf.data()[i] = orig;
            double fd = (lp - lm) / (2.0 * opt.step);
            double rel = std::abs(analytic[li][static_cast<size_t>(i)] - fd) /
                         std::max(1.0, std::abs(fd));
            out.max_rel_err = std::max(out.max_rel_err, rel);
            ++out.coords;
        }
    }
    return out;
}

namespace {

struct OpCase {
    std::string name;
    // fills leaves and returns the probe
    std::function<std::function<Tensor()>(Rng&, std::vector<Tensor>&)> make;
};

std::vector<OpCase> op_cases() {
    std::vector<OpCase> cases;
    auto binary = [](const char* name, auto fn, std::vector<int64_t> da, std::vector<int64_t> db) {
        return OpCase{name, [fn, da, db](Rng& rng, std::vector<Tensor>& leaves) {
                          Tensor a = rand_tensor(rng, da, -1.0, 1.0);
                          Tensor b = rand_tensor(rng, db, -1.0, 1.0);
                          leaves = {a, b};
                          auto out_dims = da.size() >= db.size() ? da : db;
                          return weighted_probe(rng, [fn, a, b]() { return fn(a, b); }, out_dims);
                      }};
    };
    auto unary = [](const char* name, auto fn, double lo, double hi) {
        return OpCase{name, [fn, lo, hi](Rng& rng, std::vector<Tensor>& leaves) {
                          Tensor x = rand_tensor(rng, {2, 3, 4, 4}, lo, hi);
                          leaves = {x};
                          return weighted_probe(rng, [fn, x]() { return fn(x); }, x.dims());
                      }};
    };

    cases.push_back(binary("add", [](auto& a, auto& b) { return add(a, b); }, {2, 3, 4, 4},
                           {2, 3, 4, 4}));
    cases.push_back(binary("add-bcast-c", [](auto& a, auto& b) { return add(a, b); }, {2, 3, 4, 4},
                           {3}));
    cases.push_back(binary("add-bcast-nc", [](auto& a, auto& b) { return add(a, b); },
                           {2, 3, 4, 4}, {2, 3}));
    cases.push_back(binary("sub", [](auto& a, auto& b) { return sub(a, b); }, {2, 3, 4, 4},
                           {2, 3, 4, 4}));
    cases.push_back(binary("sub-bcast-swapped", [](auto& a, auto& b) { return sub(a, b); }, {3},
                           {2, 3, 4, 4}));
    cases.push_back(binary("mul", [](auto& a, auto& b) { return mul(a, b); }, {2, 3, 4, 4},
                           {2, 3, 4, 4}));
    cases.push_back(binary("mul-bcast-pixel", [](auto& a, auto& b) { return mul(a, b); },
                           {2, 3, 4, 4}, {2, 1, 4, 4}));

    cases.push_back(unary("relu", [](auto& x) { return relu(x); }, -1.0, 1.0));
    cases.push_back(unary("sigmoid", [](auto& x) { return sigmoid(x); }, -3.0, 3.0));
    cases.push_back(unary("softplus", [](auto& x) { return softplus(x); }, -3.0, 3.0));
    cases.push_back(unary("abs", [](auto& x) { return abs(x); }, -1.0, 1.0));
    cases.push_back(unary("sign", [](auto& x) { return sign(x); }, -1.0, 1.0));
    cases.push_back(unary("max-scalar", [](auto& x) { return max_scalar(x, 0.25); }, -1.0, 1.0));
    cases.push_back(unary("mul-scalar", [](auto& x) { return mul_scalar(x, -1.7); }, -1.0, 1.0));

    cases.push_back({"matmul", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor a = rand_tensor(rng, {4, 5}, -1.0, 1.0);
                         Tensor b = rand_tensor(rng, {5, 3}, -1.0, 1.0);
                         leaves = {a, b};
                         return weighted_probe(rng, [a, b]() { return matmul(a, b); }, {4, 3});
                     }});
    cases.push_back({"linear", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor x = rand_tensor(rng, {3, 6}, -1.0, 1.0);
                         Tensor w = rand_tensor(rng, {4, 6}, -1.0, 1.0);
                         Tensor b = rand_tensor(rng, {4}, -0.5, 0.5);
                         leaves = {x, w, b};
                         return weighted_probe(rng, [x, w, b]() { return linear(x, w, b); },
                                               {3, 4});
                     }});
    cases.push_back({"sum", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor x = rand_tensor(rng, {2, 3, 2, 2}, -1.0, 1.0);
                         leaves = {x};
                         return std::function<Tensor()>([x]() { return sum(x); });
                     }});

    auto conv_case = [](const char* name, std::vector<int64_t> xd, std::vector<int64_t> wd,
                        int pad, int dil, int groups, bool with_bias) {
        return OpCase{name, [=](Rng& rng, std::vector<Tensor>& leaves) {
                          Tensor x = rand_tensor(rng, xd, -1.0, 1.0);
                          Conv2dParams p;
                          p.weight = rand_tensor(rng, wd, -0.6, 0.6);
                          if (with_bias) {
                              p.bias = rand_tensor(rng, {wd[0]}, -0.3, 0.3);
                          }
                          p.padding = pad;
                          p.dilation = dil;
                          p.groups = groups;
                          leaves = {x, p.weight};
                          if (with_bias) leaves.push_back(p.bias);
                          int64_t ho = xd[2] + 2 * pad - dil * (wd[2] - 1);
                          int64_t wo = xd[3] + 2 * pad - dil * (wd[3] - 1);
                          return weighted_probe(rng, [x, p]() { return conv2d(x, p); },
                                                {xd[0], wd[0], ho, wo});
                      }};
    };
    cases.push_back(conv_case("conv2d-3x3", {2, 3, 6, 6}, {4, 3, 3, 3}, 1, 1, 1, true));
    cases.push_back(conv_case("conv2d-1x1", {2, 4, 5, 5}, {3, 4, 1, 1}, 0, 1, 1, true));
    cases.push_back(conv_case("conv2d-dilated", {1, 2, 9, 9}, {3, 2, 3, 3}, 2, 2, 1, true));
    cases.push_back(conv_case("conv2d-grouped", {1, 4, 6, 6}, {6, 2, 3, 3}, 1, 1, 2, true));
    cases.push_back(conv_case("conv2d-nopad", {1, 3, 5, 5}, {2, 3, 3, 3}, 0, 1, 1, false));

    cases.push_back({"depthwise", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor x = rand_tensor(rng, {1, 3, 7, 7}, -1.0, 1.0);
                         Tensor k = rand_tensor(rng, {3, 1, 3, 3}, -0.6, 0.6);
                         leaves = {x, k};
                         return weighted_probe(
                             rng, [x, k]() { return depthwise_dilated_conv(x, k, 2); }, x.dims());
                     }});
    cases.push_back({"maxpool2", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor x = rand_tensor(rng, {1, 2, 4, 4}, -1.0, 1.0);
                         leaves = {x};
                         return weighted_probe(rng, [x]() { return maxpool2(x); }, {1, 2, 2, 2});
                     }});
    cases.push_back({"bilinear-up2", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor x = rand_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
                         leaves = {x};
                         return weighted_probe(rng, [x]() { return bilinear_up2(x); },
                                               {1, 2, 6, 6});
                     }});
    cases.push_back({"gap", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0);
                         leaves = {x};
                         return weighted_probe(rng, [x]() { return gap(x); }, {2, 3});
                     }});
    cases.push_back({"concat", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor a = rand_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
                         Tensor b = rand_tensor(rng, {1, 3, 3, 3}, -1.0, 1.0);
                         leaves = {a, b};
                         return weighted_probe(rng, [a, b]() { return concat_channels(a, b); },
                                               {1, 5, 3, 3});
                     }});
    cases.push_back({"soft-threshold", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor u = rand_tensor(rng, {1, 3, 4, 4}, -1.0, 1.0);
                         Tensor lam = rand_tensor(rng, {3}, 0.1, 0.6);
                         leaves = {u, lam};
                         return weighted_probe(rng, [u, lam]() { return soft_threshold(u, lam); },
                                               u.dims());
                     }});

    auto res_case = [](const char* name, int64_t cin, int64_t cout) {
        return OpCase{name, [cin, cout](Rng& rng, std::vector<Tensor>& leaves) {
                          Tensor x = rand_tensor(rng, {1, cin, 6, 6}, -1.0, 1.0);
                          ResBlockParams p;
                          p.conv1.weight = rand_tensor(rng, {cout, cin, 3, 3}, -0.4, 0.4);
                          p.conv1.bias = rand_tensor(rng, {cout}, -0.2, 0.2);
                          p.conv1.padding = 1;
                          p.conv2.weight = rand_tensor(rng, {cout, cout, 3, 3}, -0.4, 0.4);
                          p.conv2.bias = rand_tensor(rng, {cout}, -0.2, 0.2);
                          p.conv2.padding = 1;
                          leaves = {x, p.conv1.weight, p.conv1.bias, p.conv2.weight, p.conv2.bias};
                          if (cin != cout) {
                              p.proj.weight = rand_tensor(rng, {cout, cin, 1, 1}, -0.4, 0.4);
                              p.proj.bias = rand_tensor(rng, {cout}, -0.2, 0.2);
                              leaves.push_back(p.proj.weight);
                              leaves.push_back(p.proj.bias);
                          }
                          return weighted_probe(rng, [x, p]() { return res_block(x, p); },
                                                {1, cout, 6, 6});
                      }};
    };
    cases.push_back(res_case("res-block", 4, 4));
    cases.push_back(res_case("res-block-proj", 3, 4));

    cases.push_back({"bce-logits", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor logits = rand_tensor(rng, {2, 1, 4, 4}, -2.0, 2.0);
                         Tensor target = rand_binary(rng, {2, 1, 4, 4});
                         leaves = {logits};
                         return std::function<Tensor()>(
                             [logits, target]() { return bce_with_logits_mean(logits, target); });
                     }});
    cases.push_back({"dice", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor probs = rand_tensor(rng, {2, 1, 4, 4}, 0.05, 0.95);
                         Tensor target = rand_binary(rng, {2, 1, 4, 4});
                         leaves = {probs};
                         return std::function<Tensor()>(
                             [probs, target]() { return dice_loss_mean(probs, target); });
                     }});
    cases.push_back({"dice-bce", [](Rng& rng, std::vector<Tensor>& leaves) {
                         Tensor logits = rand_tensor(rng, {2, 1, 4, 4}, -2.0, 2.0);
                         Tensor target = rand_binary(rng, {2, 1, 4, 4});
                         leaves = {logits};
                         return std::function<Tensor()>(
                             [logits, target]() { return dice_bce_loss(logits, target); });
                     }});
    return cases;
}

}  // namespace

std::vector<GradCheckResult> gradcheck_ops(uint64_t seed, int trials) {
    std::vector<GradCheckResult> results;
    for (const OpCase& c : op_cases()) {
        Rng rng(seed ^ std::hash<std::string>{}(c.name));
        GradCheckResult r;
        r.name = c.name;
        int done = 0, attempts = 0;
        while (done < trials && attempts < 8 * trials) {
            ++attempts;
            std::vector<Tensor> leaves;
            auto probe = c.make(rng, leaves);
            FdOptions opt;
            opt.coord_seed = seed + static_cast<uint64_t>(attempts);
            FdOutcome o = fd_check_once(leaves, probe, opt);
            if (o.skipped) {
                ++r.skipped;
                continue;
            }
            r.max_rel_err = std::max(r.max_rel_err, o.max_rel_err);
            r.coords += o.coords;
            ++done;
        }
        r.trials = done;
        results.push_back(std::move(r));
    }
    return results;
}

GradCheckResult gradcheck_gate(uint64_t seed, int trials) {
    GradCheckResult r;
    r.name = "gate-full";
    Rng rng(seed);
    int done = 0, attempts = 0;
    while (done < trials && attempts < 8 * trials) {
        ++attempts;
        int64_t cx = 6, cg = 6, ca = 8;
        GateParams p;
        p.wx = rand_tensor(rng, {ca, cx, 1, 1}, -0.5, 0.5);
        p.wg = rand_tensor(rng, {ca, cg, 1, 1}, -0.5, 0.5);
        p.dilations = {1, 2, 4};
        for (int i = 0; i < 3; ++i) {
            p.dw.push_back(rand_tensor(rng, {ca, 1, 3, 3}, -0.4, 0.4));
        }
        p.fuse = rand_tensor(rng, {ca, 3 * ca, 1, 1}, -0.3, 0.3);
        p.theta = rand_tensor(rng, {ca}, -3.0, 0.0);  // lambda in (0.049, 0.69)
        p.psi_w = rand_tensor(rng, {1, ca, 1, 1}, -0.5, 0.5);
        p.psi_b = rand_tensor(rng, {1}, -0.2, 0.2);
        p.mlp_w1 = rand_tensor(rng, {4, cg}, -0.5, 0.5);
        p.mlp_b1 = rand_tensor(rng, {4}, -0.2, 0.2);
        p.mlp_w2 = rand_tensor(rng, {cx, 4}, -0.5, 0.5);
        p.mlp_b2 = rand_tensor(rng, {cx}, -0.2, 0.2);
        Tensor x = rand_tensor(rng, {1, cx, 8, 8}, -1.0, 1.0);
        Tensor g = rand_tensor(rng, {1, cg, 8, 8}, -1.0, 1.0);

        std::vector<Tensor> leaves = {x,      g,        p.wx,     p.wg,     p.fuse,   p.theta,
                                      p.psi_w, p.psi_b, p.mlp_w1, p.mlp_b1, p.mlp_w2, p.mlp_b2};
        for (const Tensor& k : p.dw) leaves.push_back(k);
        auto probe = weighted_probe(
            rng, [x, g, p]() { return prosma_gate(x, g, p, GateVariant::Full); }, x.dims());

        FdOptions opt;
        opt.coord_seed = seed + static_cast<uint64_t>(attempts);
        FdOutcome o = fd_check_once(leaves, probe, opt);
        if (o.skipped) {
            ++r.skipped;
            continue;
        }
        r.max_rel_err = std::max(r.max_rel_err, o.max_rel_err);
        r.coords += o.coords;
        ++done;
    }
    r.trials = done;
    return r;
}

GradCheckResult gradcheck_model(uint64_t seed) {
    GradCheckResult r;
    r.name = "model-tiny";
    ModelConfig cfg;
    cfg.base_channels = 4;
    cfg.gate_variant = GateVariant::Full;

    for (int attempt = 0; attempt < 10; ++attempt) {
        Rng rng(seed + static_cast<uint64_t>(attempt) * 1000003);
        Model m = init_model(cfg, rng.next_u64());
        Tensor image = rand_tensor(rng, {1, 1, 16, 16}, 0.0, 1.0, /*requires_grad=*/false);
        Tensor mask = Tensor::zeros({1, 1, 16, 16});
        for (int64_t y = 0; y < 16; ++y) {
            for (int64_t x = 0; x < 16; ++x) {
                double dy = static_cast<double>(y) - 7.5, dx = static_cast<double>(x) - 7.5;
                mask.data()[y * 16 + x] = dy * dy + dx * dx <= 20.0 ? 1.0 : 0.0;
            }
        }

        std::vector<Tensor> leaves;
        for (auto& [name, t] : m.named) {
            leaves.push_back(t);
        }
        auto probe = [&m, image, mask]() {
            return dice_bce_loss(forward(m, image).logits, mask);
        };

        FdOptions opt;
        opt.max_coords_per_leaf = 5;
        opt.coord_seed = seed + static_cast<uint64_t>(attempt);
        FdOutcome o = fd_check_once(leaves, std::function<Tensor()>(probe), opt);
        if (o.skipped) {
            ++r.skipped;
            continue;
        }
        r.max_rel_err = o.max_rel_err;
        r.coords = o.coords;
        r.trials = 1;
        return r;
    }
    return r;  // trials == 0: every attempt landed on a kink
}

}  // namespace prosma
