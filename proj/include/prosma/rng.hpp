#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace prosma {

/// Seeded random source with fully specified output mapping.
///
/// std::mt19937_64 produces a standard-mandated bit sequence, and the
/// uniform/normal mappings below are written out explicitly instead of going
/// through std::*_distribution (whose output is implementation-defined).
/// Identical seeds therefore give identical streams on any platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1), 53-bit mantissa.
    double u01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    /// Uniform integer in [0, n). n must be positive.
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
    }

    /// Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - u01();  // (0, 1], keeps log finite
        double u2 = u01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace prosma
