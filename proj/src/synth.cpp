#include "prosma/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "prosma/pgm.hpp"
#include "prosma/rng.hpp"

namespace fs = std::filesystem;

namespace prosma {

ClutterLevel parse_clutter(const std::string& name) {
    if (name == "none") return ClutterLevel::None;
    if (name == "low") return ClutterLevel::Low;
    if (name == "high") return ClutterLevel::High;
    throw ContractError("unknown clutter level \"" + name + "\" (expected none|low|high)");
}

std::string clutter_name(ClutterLevel c) {
    switch (c) {
        case ClutterLevel::None: return "none";
        case ClutterLevel::Low: return "low";
        case ClutterLevel::High: return "high";
    }
    return "?";
}

namespace {

using Grid = std::vector<double>;
using Mask = std::vector<uint8_t>;

void box_blur(Grid& g, int s, int radius) {
    Grid tmp(g.size());
    auto clampi = [s](int v) { return std::min(std::max(v, 0), s - 1); };
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += g[static_cast<size_t>(y * s + clampi(x + k))];
            }
            tmp[static_cast<size_t>(y * s + x)] = acc / (2 * radius + 1);
        }
    }
    for (int x = 0; x < s; ++x) {
        for (int y = 0; y < s; ++y) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += tmp[static_cast<size_t>(clampi(y + k) * s + x)];
            }
            g[static_cast<size_t>(y * s + x)] = acc / (2 * radius + 1);
        }
    }
}

struct Ellipse {
    double cx, cy, ra, rb, phi;

    bool contains(double x, double y) const {
        double dx = x - cx, dy = y - cy;
        double c = std::cos(phi), s = std::sin(phi);
        double u = (dx * c + dy * s) / ra;
        double v = (-dx * s + dy * c) / rb;
        return u * u + v * v <= 1.0;
    }
};

void paint_ellipse(const Ellipse& e, int s, Mask& out) {
    int y0 = std::max(0, static_cast<int>(std::floor(e.cy - std::max(e.ra, e.rb) - 1)));
    int y1 = std::min(s - 1, static_cast<int>(std::ceil(e.cy + std::max(e.ra, e.rb) + 1)));
    int x0 = std::max(0, static_cast<int>(std::floor(e.cx - std::max(e.ra, e.rb) - 1)));
    int x1 = std::min(s - 1, static_cast<int>(std::ceil(e.cx + std::max(e.ra, e.rb) + 1)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (e.contains(x, y)) {
                out[static_cast<size_t>(y * s + x)] = 1;
            }
        }
    }
}

void paint_stroke(double x0, double y0, double angle, double len, double half_w, int s,
                  Mask& out) {
    double dx = std::cos(angle), dy = std::sin(angle);
    double x1 = x0 + len * dx, y1 = y0 + len * dy;
    int by0 = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - half_w - 1)));
    int by1 = std::min(s - 1, static_cast<int>(std::ceil(std::max(y0, y1) + half_w + 1)));
    int bx0 = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - half_w - 1)));
    int bx1 = std::min(s - 1, static_cast<int>(std::ceil(std::max(x0, x1) + half_w + 1)));
    for (int y = by0; y <= by1; ++y) {
        for (int x = bx0; x <= bx1; ++x) {
            double t = ((x - x0) * dx + (y - y0) * dy);
            t = std::min(std::max(t, 0.0), len);
            double px = x0 + t * dx - x, py = y0 + t * dy - y;
            if (px * px + py * py <= half_w * half_w) {
                out[static_cast<size_t>(y * s + x)] = 1;
            }
        }
    }
}

bool disjoint(const Mask& a, const Mask& b) {
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] && b[i]) return false;
    }
    return true;
}

Sample make_sample(int index, const SynthConfig& cfg, Rng& rng) {
    int s = cfg.size;
    size_t npx = static_cast<size_t>(s) * static_cast<size_t>(s);

    // background: low-amplitude smoothed noise around a per-sample base level
    double base = rng.uniform(0.25, 0.40);
    double amp = rng.uniform(0.03, 0.08);
    Grid tex(npx);
    for (double& v : tex) {
        v = rng.uniform(-1.0, 1.0);
    }
    box_blur(tex, s, 2);
    box_blur(tex, s, 2);
    double maxabs = 0.0;
    for (double v : tex) maxabs = std::max(maxabs, std::abs(v));
    if (maxabs > 0.0) {
        for (double& v : tex) v /= maxabs;
    }

    // foreground blobs; resample until the mask fraction lands in [0.02, 0.40]
    Mask mask(npx, 0);
    Grid fg_off(npx, 0.0);
    for (;;) {
        std::fill(mask.begin(), mask.end(), 0);
        std::fill(fg_off.begin(), fg_off.end(), 0.0);
        int blobs = 1 + static_cast<int>(rng.uniform_int(3));
        for (int b = 0; b < blobs; ++b) {
            Ellipse e{rng.uniform(0.25, 0.75) * s, rng.uniform(0.25, 0.75) * s,
                      rng.uniform(0.10, 0.22) * s, rng.uniform(0.10, 0.22) * s,
                      rng.uniform(0.0, 3.14159265358979323846)};
            double off = rng.uniform(0.25, 0.45);
            Mask one(npx, 0);
            paint_ellipse(e, s, one);
            for (size_t i = 0; i < npx; ++i) {
                if (one[i]) {
                    mask[i] = 1;
                    fg_off[i] = std::max(fg_off[i], off);
                }
            }
        }
        int64_t covered = 0;
        for (uint8_t m : mask) covered += m;
        double frac = static_cast<double>(covered) / static_cast<double>(npx);
        if (frac >= 0.02 && frac <= 0.40) {
            break;
        }
    }

    // distractors share the foreground intensity range but never touch the mask
    int n_distract = 0;
    if (cfg.clutter == ClutterLevel::Low) {
        n_distract = static_cast<int>(rng.uniform_int(3));
    } else if (cfg.clutter == ClutterLevel::High) {
        n_distract = 3 + static_cast<int>(rng.uniform_int(4));
    }
    Grid dis_off(npx, 0.0);
    for (int di = 0; di < n_distract; ++di) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            Mask cand(npx, 0);
            if (rng.uniform_int(2) == 0) {
                Ellipse e{rng.uniform(0.05, 0.95) * s, rng.uniform(0.05, 0.95) * s,
                          rng.uniform(0.03, 0.08) * s, rng.uniform(0.03, 0.08) * s,
                          rng.uniform(0.0, 3.14159265358979323846)};
                paint_ellipse(e, s, cand);
            } else {
                paint_stroke(rng.uniform(0.1, 0.9) * s, rng.uniform(0.1, 0.9) * s,
                             rng.uniform(0.0, 3.14159265358979323846),
                             rng.uniform(0.15, 0.40) * s, rng.uniform(0.5, 1.25), s, cand);
            }
            if (!disjoint(cand, mask)) {
                continue;
            }
            double off = rng.uniform(0.25, 0.45);
            for (size_t i = 0; i < npx; ++i) {
                if (cand[i]) {
                    dis_off[i] = std::max(dis_off[i], off);
                }
            }
            break;
        }
    }

    Tensor image = Tensor::zeros({1, s, s});
    Tensor mask_t = Tensor::zeros({1, s, s});
    double* iv = image.data();
    double* mv = mask_t.data();
    for (size_t i = 0; i < npx; ++i) {
        double v = base + amp * tex[i] + fg_off[i] + dis_off[i];
        if (cfg.noise_sigma > 0.0) {
            v += cfg.noise_sigma * rng.normal();
        }
        iv[i] = std::min(std::max(v, 0.0), 1.0);
        mv[i] = mask[i] ? 1.0 : 0.0;
    }

    char id[16];
    std::snprintf(id, sizeof id, "s%04d", index);
    return Sample{id, image, mask_t};
}

}  // namespace

Dataset generate(const SynthConfig& cfg) {
    if (cfg.count < 20) {
        throw ContractError("generate: count must be >= 20, got " + std::to_string(cfg.count));
    }
    if (cfg.size < 16 || cfg.size % 16 != 0) {
        throw ContractError("generate: size must be a positive multiple of 16, got " +
                            std::to_string(cfg.size));
    }
    Rng rng(cfg.seed);
    Dataset data;
    for (int i = 0; i < cfg.count; ++i) {
        data.samples.push_back(make_sample(i, cfg, rng));
    }

    std::vector<int> order(static_cast<size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    int n_train = 70 * cfg.count / 100;
    int n_val = 15 * cfg.count / 100;
    data.train.assign(order.begin(), order.begin() + n_train);
    data.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    data.test.assign(order.begin() + n_train + n_val, order.end());
    std::sort(data.train.begin(), data.train.end());
    std::sort(data.val.begin(), data.val.end());
    std::sort(data.test.begin(), data.test.end());
    return data;
}

namespace {

void write_split(const std::string& path, const Dataset& d, const std::vector<int>& idx) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + path + " for writing");
    }
    for (int i : idx) {
        f << d.samples[static_cast<size_t>(i)].id << "\n";
    }
}

std::vector<std::string> read_split(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot open split list " + path);
    }
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!line.empty()) {
            ids.push_back(line);
        }
    }
    return ids;
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    for (const Sample& s : data.samples) {
        write_pgm((fs::path(dir) / "images" / (s.id + ".pgm")).string(), s.image);
        write_pgm((fs::path(dir) / "masks" / (s.id + ".pgm")).string(), s.mask);
    }
    write_split((fs::path(dir) / "train.txt").string(), data, data.train);
    write_split((fs::path(dir) / "val.txt").string(), data, data.val);
    write_split((fs::path(dir) / "test.txt").string(), data, data.test);
}

Dataset load_dataset(const std::string& dir) {
    Dataset data;
    const char* split_names[3] = {"train.txt", "val.txt", "test.txt"};
    std::vector<int>* splits[3] = {&data.train, &data.val, &data.test};
    for (int k = 0; k < 3; ++k) {
        for (const std::string& id : read_split((fs::path(dir) / split_names[k]).string())) {
            Sample s;
            s.id = id;
            s.image = read_pgm((fs::path(dir) / "images" / (id + ".pgm")).string());
            s.mask = read_pgm((fs::path(dir) / "masks" / (id + ".pgm")).string());
            if (s.image.dims() != s.mask.dims()) {
                throw ParseError(dir + ": image/mask size mismatch for id " + id);
            }
            const double* mv = s.mask.data();
            for (int64_t i = 0; i < s.mask.size(); ++i) {
                if (mv[i] != 0.0 && mv[i] != 1.0) {
                    throw ParseError(dir + ": mask " + id + " is not binary (byte " +
                                     std::to_string(i) + " of payload)");
                }
            }
            splits[k]->push_back(static_cast<int>(data.samples.size()));
            data.samples.push_back(std::move(s));
        }
    }
    return data;
}

}  // namespace prosma
