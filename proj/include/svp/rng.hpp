#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace svp {

// Deterministic RNG with fixed sampling algorithms. The std:: distributions
// are implementation-defined, so uniform/gaussian draws are done by hand to
// keep generated datasets reproducible across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive on both ends
    int uniform_int(int lo, int hi) {
        if (hi <= lo) return lo;
        const auto span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller, one fresh pair per call (second value discarded; the cache
    // would make draw counts depend on call history).
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Eigen::Vector3d unit_vector() {
        while (true) {
            const Eigen::Vector3d v(gaussian(), gaussian(), gaussian());
            const double n = v.norm();
            if (n > 1e-12) return v / n;
        }
    }

    // uniform over SO(3) via a random unit quaternion
    Eigen::Matrix3d rotation() {
        while (true) {
            Eigen::Quaterniond q(gaussian(), gaussian(), gaussian(), gaussian());
            const double n = q.norm();
            if (n > 1e-12) {
                q.coeffs() /= n;
                return q.toRotationMatrix();
            }
        }
    }

    uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

// Decorrelated per-item seed for parallel/deterministic streams.
inline uint64_t stream_seed(uint64_t seed, uint64_t index) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace svp
