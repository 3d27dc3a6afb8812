#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dynflow {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

using Vec = std::vector<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kEps = std::numeric_limits<double>::epsilon();

/// Real-valued function on the nodes, optionally tagged with the time it lives at.
struct Field {
    Vec values;
    std::optional<double> t;

    Field() = default;
    explicit Field(Vec v, std::optional<double> time = std::nullopt)
        : values(std::move(v)), t(time) {}

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
};

/// Nonnegative masses on the nodes, summing to one.
struct MeasureVec {
    Vec masses;
    double t = 0.0;

    std::size_t size() const { return masses.size(); }
    double total() const {
        double s = 0.0;
        for (double m : masses) s += m;
        return s;
    }
};

inline constexpr double kMassTol = 1e-9;

inline void require_probability(const MeasureVec& mu, const char* what) {
    double s = 0.0;
    for (double m : mu.masses) {
        if (!(m >= -1e-14)) throw ValidationError(std::string(what) + ": negative mass");
        s += m;
    }
    if (std::abs(s - 1.0) > kMassTol)
        throw ValidationError(std::string(what) + ": masses do not sum to one");
}

inline double dot_weighted(const Vec& a, const Vec& b, const Vec& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i] * w[i];
    return s;
}

inline double max_abs(const Vec& a) {
    double s = 0.0;
    for (double x : a) s = std::max(s, std::abs(x));
    return s;
}

/// splitmix64 with hand-rolled uniform/normal draws. std::*_distribution output
/// differs between standard libraries, which would break reproducible runs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : s_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next() {
        std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    std::uint64_t s_;
};

/// Derive an independent stream seed for a sub-task.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    Rng r(seed ^ (salt * 0xd1b54a32d192ed03ull + 0x632be59bd9b4e019ull));
    r.next();
    return r.next();
}

} // namespace dynflow
