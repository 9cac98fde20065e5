#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace geobeam {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error hierarchy maps onto CLI exit codes: ConfigError -> 2, NumericError -> 3,
// InvariantError -> 1. Everything else is a plain GeobeamError.
struct GeobeamError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : GeobeamError {
    using GeobeamError::GeobeamError;
};
struct ConfigError : GeobeamError {
    using GeobeamError::GeobeamError;
};
struct NumericError : GeobeamError {
    using GeobeamError::GeobeamError;
};
struct InvariantError : GeobeamError {
    using GeobeamError::GeobeamError;
};

// splitmix64-seeded xoshiro256++; hand-rolled so that identical seeds give
// identical streams independent of the standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) {
            x += 0x9e3779b97f4a7c15ull;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            w = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

    double normal() {
        // Marsaglia polar method.
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, q;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            q = u * u + v * v;
        } while (q >= 1.0 || q == 0.0);
        const double f = std::sqrt(-2.0 * std::log(q) / q);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    Vec unit_vector(int n) {
        Vec v(n);
        double norm2 = 0.0;
        do {
            for (int i = 0; i < n; ++i) v[i] = normal();
            norm2 = v.squaredNorm();
        } while (norm2 < 1e-30);
        return v / std::sqrt(norm2);
    }

    // Derive an independent stream, e.g. one per pipeline stage.
    Rng fork(std::uint64_t tag) const {
        return Rng(s_[0] ^ (0x9e3779b97f4a7c15ull * (tag + 1)) ^ s_[2]);
    }

  private:
    std::uint64_t s_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline double sq(double x) { return x * x; }

}  // namespace geobeam
