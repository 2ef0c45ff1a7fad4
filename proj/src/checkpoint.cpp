#include "prosma/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace prosma {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

void put_f64(std::vector<uint8_t>& out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

struct Cursor {
    const std::vector<uint8_t>* bytes;
    size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError("checkpoint: " + what + " at byte " + std::to_string(pos));
    }

    void need(size_t n) {
        if (bytes->size() - pos < n) {
            fail("truncated (need " + std::to_string(n) + " more bytes)");
        }
    }

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>((*bytes)[pos + static_cast<size_t>(i)]) << (8 * i);
        }
        pos += 4;
        return v;
    }

    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<uint64_t>((*bytes)[pos + static_cast<size_t>(i)]) << (8 * i);
        }
        pos += 8;
        return v;
    }

    double f64() {
        uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }

    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes->data() + pos), n);
        pos += n;
        return s;
    }
};

uint32_t variant_id(GateVariant v) { return static_cast<uint32_t>(v); }

GateVariant variant_from_id(uint32_t id, Cursor& c) {
    if (id > 4) {
        c.fail("unknown gate variant id " + std::to_string(id));
    }
    return static_cast<GateVariant>(id);
}

}  // namespace

std::vector<uint8_t> checkpoint_bytes(const Model& m) {
    std::vector<uint8_t> out;
    out.insert(out.end(), {'P', 'S', 'M', 'A'});
    put_u32(out, kCheckpointVersion);

    const ModelConfig& c = m.config;
    put_u32(out, static_cast<uint32_t>(c.in_channels));
    put_u32(out, static_cast<uint32_t>(c.levels));
    put_u32(out, static_cast<uint32_t>(c.base_channels));
    put_u32(out, variant_id(c.gate_variant));
    put_u32(out, static_cast<uint32_t>(c.latent_min));
    put_u32(out, static_cast<uint32_t>(c.mlp_reduction));
    put_f64(out, c.theta_init);
    put_u32(out, static_cast<uint32_t>(c.dilations.size()));
    for (int d : c.dilations) {
        put_u32(out, static_cast<uint32_t>(d));
    }

    put_u64(out, m.named.size());
    for (const auto& [name, t] : m.named) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.dims()) {
            put_u64(out, static_cast<uint64_t>(d));
        }
        const double* v = t.data();
        for (int64_t i = 0; i < t.size(); ++i) {
            put_f64(out, v[i]);
        }
    }
    return out;
}

Model model_from_bytes(const std::vector<uint8_t>& bytes) {
    Cursor c{&bytes};
    std::string magic = c.str(4);
    if (magic != "PSMA") {
        c.pos = 0;
        c.fail("bad magic \"" + magic + "\"");
    }
    uint32_t version = c.u32();
    if (version != kCheckpointVersion) {
        throw ParseError("checkpoint: version mismatch (file has " + std::to_string(version) +
                         ", expected " + std::to_string(kCheckpointVersion) + ")");
    }

    ModelConfig cfg;
    cfg.in_channels = static_cast<int>(c.u32());
    cfg.levels = static_cast<int>(c.u32());
    cfg.base_channels = static_cast<int>(c.u32());
    cfg.gate_variant = variant_from_id(c.u32(), c);
    cfg.latent_min = static_cast<int>(c.u32());
    cfg.mlp_reduction = static_cast<int>(c.u32());
    cfg.theta_init = c.f64();
    uint32_t m_dil = c.u32();
    cfg.dilations.clear();
    for (uint32_t i = 0; i < m_dil; ++i) {
        cfg.dilations.push_back(static_cast<int>(c.u32()));
    }

    Model model = build_model(cfg);
    uint64_t count = c.u64();
    if (count != model.named.size()) {
        c.fail("parameter count " + std::to_string(count) + " does not match the config's " +
               std::to_string(model.named.size()));
    }
    for (auto& [name, t] : model.named) {
        uint32_t len = c.u32();
        std::string fname = c.str(len);
        if (fname != name) {
            c.fail("parameter \"" + fname + "\" out of order (expected \"" + name + "\")");
        }
        uint32_t rank = c.u32();
        if (rank != static_cast<uint32_t>(t.rank())) {
            c.fail("rank mismatch for \"" + name + "\"");
        }
        for (int i = 0; i < t.rank(); ++i) {
            uint64_t d = c.u64();
            if (d != static_cast<uint64_t>(t.dim(i))) {
                c.fail("extent mismatch for \"" + name + "\"");
            }
        }
        double* v = t.data();
        for (int64_t i = 0; i < t.size(); ++i) {
            v[i] = c.f64();
        }
    }
    if (c.pos != bytes.size()) {
        c.fail("trailing data");
    }
    return model;
}

void save_checkpoint(const std::string& path, const Model& m) {
    std::vector<uint8_t> bytes = checkpoint_bytes(m);
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + path + " for writing");
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw IoError("short write to " + path);
    }
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + path + " for reading");
    }
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return model_from_bytes(bytes);
}

}  // namespace prosma
