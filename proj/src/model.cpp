#include "prosma/model.hpp"

#include <cmath>

#include "prosma/rng.hpp"

namespace prosma {

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

int64_t ModelConfig::channels_at(int level) const {
    return static_cast<int64_t>(base_channels) << level;
}

int64_t ModelConfig::downsample_factor() const { return int64_t{1} << (levels - 1); }

int64_t Model::parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : named) {
        n += t.size();
    }
    return n;
}

Tensor Model::find(const std::string& name) const {
    for (const auto& [n, t] : named) {
        if (n == name) return t;
    }
    throw ContractError("no parameter named \"" + name + "\"");
}

namespace {

// Creates parameter tensors, optionally He-filled, and registers their names.
struct ParamFactory {
    Rng* rng;  // null => leave zeros
    std::vector<std::pair<std::string, Tensor>>* named;

    Tensor weight(const std::string& name, std::vector<int64_t> dims, int64_t fan_in) {
        Tensor t = Tensor::zeros(std::move(dims));
        if (rng) {
            double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            double* v = t.data();
            for (int64_t i = 0; i < t.size(); ++i) {
                v[i] = rng->uniform(-bound, bound);
            }
        }
        t.set_requires_grad(true);
        named->emplace_back(name, t);
        return t;
    }

    Tensor constant(const std::string& name, std::vector<int64_t> dims, double value) {
        Tensor t = Tensor::full(std::move(dims), value);
        t.set_requires_grad(true);
        named->emplace_back(name, t);
        return t;
    }

    Tensor bias(const std::string& name, int64_t n) { return constant(name, {n}, 0.0); }

    Conv2dParams conv(const std::string& name, int64_t cout, int64_t cin, int64_t k, int pad,
                      bool with_bias = true) {
        Conv2dParams p;
        p.weight = weight(name + ".weight", {cout, cin, k, k}, cin * k * k);
        if (with_bias) {
            p.bias = bias(name + ".bias", cout);
        }
        p.padding = pad;
        return p;
    }

    ResBlockParams res(const std::string& name, int64_t cin, int64_t cout) {
        ResBlockParams p;
        p.conv1 = conv(name + ".conv1", cout, cin, 3, 1);
        p.conv2 = conv(name + ".conv2", cout, cout, 3, 1);
        if (cin != cout) {
            p.proj = conv(name + ".proj", cout, cin, 1, 0);
        }
        return p;
    }
};

GateParams make_gate(ParamFactory& f, const std::string& name, const ModelConfig& cfg,
                     int64_t cx, int64_t cg) {
    GateParams g;
    GateVariant v = cfg.gate_variant;
    if (v == GateVariant::Plain) {
        return g;
    }
    int64_t ca = std::max<int64_t>(cx / 2, cfg.latent_min);
    bool spatial = v == GateVariant::Full || v == GateVariant::SpatialOnly;
    bool dense = v == GateVariant::Dense;
    bool channel = v == GateVariant::Full || v == GateVariant::ChannelOnly;

    if (spatial || dense) {
        g.wx = f.weight(name + ".wx.weight", {ca, cx, 1, 1}, cx);
        g.wg = f.weight(name + ".wg.weight", {ca, cg, 1, 1}, cg);
    }
    if (spatial) {
        g.dilations = cfg.dilations;
        for (size_t i = 0; i < cfg.dilations.size(); ++i) {
            g.dw.push_back(f.weight(name + ".dw" + std::to_string(i) + ".weight", {ca, 1, 3, 3}, 9));
        }
        int64_t m = static_cast<int64_t>(cfg.dilations.size());
        g.fuse = f.weight(name + ".fuse.weight", {ca, m * ca, 1, 1}, m * ca);
        g.theta = f.constant(name + ".theta", {ca}, cfg.theta_init);
    }
    if (spatial || dense) {
        g.psi_w = f.weight(name + ".psi.weight", {1, ca, 1, 1}, ca);
        g.psi_b = f.bias(name + ".psi.bias", 1);
    }
    if (channel) {
        int64_t hidden = std::max<int64_t>(cg / cfg.mlp_reduction, 4);
        g.mlp_w1 = f.weight(name + ".mlp.w1", {hidden, cg}, cg);
        g.mlp_b1 = f.bias(name + ".mlp.b1", hidden);
        g.mlp_w2 = f.weight(name + ".mlp.w2", {cx, hidden}, hidden);
        g.mlp_b2 = f.bias(name + ".mlp.b2", cx);
    }
    return g;
}

Model assemble(const ModelConfig& cfg, Rng* rng) {
    if (cfg.levels < 2 || cfg.base_channels < 1 || cfg.in_channels < 1) {
        throw ContractError("model config: levels >= 2, channels >= 1 required");
    }
    if (cfg.dilations.empty()) {
        throw ContractError("model config: at least one gate dilation required");
    }
    Model m;
    m.config = cfg;
    ParamFactory f{rng, &m.named};

    int64_t cin = cfg.in_channels;
    for (int i = 0; i < cfg.levels; ++i) {
        int64_t cout = cfg.channels_at(i);
        m.encoder.push_back(f.res("e" + std::to_string(i + 1), cin, cout));
        cin = cout;
    }
    int64_t deep = cfg.channels_at(cfg.levels - 1);
    m.bottleneck = f.res("bottleneck", deep, deep);

    for (int s = cfg.levels - 1; s >= 1; --s) {  // stage s gates encoder level s
        int64_t c_in = cfg.channels_at(s);
        int64_t c_out = cfg.channels_at(s - 1);
        std::string suffix = std::to_string(s);
        m.up.push_back(f.conv("up" + suffix + ".conv", c_out, c_in, 3, 1));
        m.gate.push_back(make_gate(f, "gate" + suffix, cfg, c_out, c_out));
        m.decoder.push_back(f.res("d" + suffix, 2 * c_out, c_out));
    }
    m.head = f.conv("head", 1, cfg.channels_at(0), 1, 0);
    return m;
}

}  // namespace

Model build_model(const ModelConfig& config) { return assemble(config, nullptr); }

Model init_model(const ModelConfig& config, uint64_t seed) {
    Rng rng(seed);
    return assemble(config, &rng);
}

void copy_params(const Model& src, Model& dst) {
    if (src.named.size() != dst.named.size()) {
        throw ContractError("copy_params: parameter sets differ");
    }
    for (size_t i = 0; i < src.named.size(); ++i) {
        const auto& [sname, st] = src.named[i];
        auto& [dname, dt] = dst.named[i];
        if (sname != dname || st.dims() != dt.dims()) {
            throw ContractError("copy_params: mismatch at \"" + sname + "\"");
        }
        std::copy(st.data(), st.data() + st.size(), dt.data());
    }
}

Model clone_model(const Model& m) {
    Model out = build_model(m.config);
    copy_params(m, out);
    return out;
}

ForwardResult forward(const Model& m, const Tensor& image) {
    const ModelConfig& cfg = m.config;
    if (image.rank() != 4 || image.dim(1) != cfg.in_channels) {
        throw ShapeError("forward: image must be [N," + std::to_string(cfg.in_channels) +
                         ",H,W]");
    }
    int64_t factor = cfg.downsample_factor();
    if (image.dim(2) % factor != 0 || image.dim(3) % factor != 0 || image.dim(2) < factor ||
        image.dim(3) < factor) {
        throw ShapeError("forward: spatial dims must be divisible by " + std::to_string(factor));
    }

    std::vector<Tensor> skips;
    Tensor cur = image;
    for (int i = 0; i < cfg.levels; ++i) {
        if (i > 0) {
            cur = maxpool2(cur);
        }
        cur = res_block(cur, m.encoder[static_cast<size_t>(i)]);
        skips.push_back(cur);
    }

    Tensor g = res_block(skips.back(), m.bottleneck);

    ForwardResult result;
    result.traces.resize(static_cast<size_t>(cfg.levels - 1));
    for (int si = 0; si < cfg.levels - 1; ++si) {
        int s = cfg.levels - 1 - si;  // encoder level being gated
        Tensor upf = conv2d(bilinear_up2(g), m.up[static_cast<size_t>(si)]);
        Tensor gated = prosma_gate(skips[static_cast<size_t>(s - 1)], upf,
                                   m.gate[static_cast<size_t>(si)], cfg.gate_variant,
                                   &result.traces[static_cast<size_t>(si)]);
        g = res_block(concat_channels(gated, upf), m.decoder[static_cast<size_t>(si)]);
    }
    result.logits = conv2d(g, m.head);
    return result;
}

}  // namespace prosma
