#pragma once
// Shared numeric kernels and the library-wide error type.
//
// All long reductions (dot products, norms, means) go through pairwise
// (tree) summation with a fixed association order, so results are
// reproducible across runs and independent of accumulation chunking.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bdpure {

enum class ErrorKind {
    io,            // filesystem failures
    format,        // malformed container / JSON inputs
    incompatible,  // architecture or dimension mismatches
    config,        // invalid parameters
    numeric,       // non-convergence, non-finite results
    no_boundary,   // boundary detection found nothing and no override given
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 16) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t mid = xs.size() / 2;
    return pairwise_sum(xs.first(mid)) + pairwise_sum(xs.subspan(mid));
}

inline double pairwise_dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        fail(ErrorKind::incompatible, "dot: length mismatch (" + std::to_string(a.size()) +
                                          " vs " + std::to_string(b.size()) + ")");
    if (a.size() <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    }
    const std::size_t mid = a.size() / 2;
    return pairwise_dot(a.first(mid), b.first(mid)) +
           pairwise_dot(a.subspan(mid), b.subspan(mid));
}

inline double l2_norm(std::span<const double> xs) {
    return std::sqrt(pairwise_dot(xs, xs));
}

inline double mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return pairwise_sum(xs) / static_cast<double>(xs.size());
}

// Population standard deviation (divide by N, not N-1).
inline double population_std(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    const double mu = mean(xs);
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double d = xs[i] - mu;
        sq[i] = d * d;
    }
    return std::sqrt(pairwise_sum(sq) / static_cast<double>(xs.size()));
}

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

// FNV-1a, used for architecture fingerprints. Stable across platforms.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// SplitMix64: tiny deterministic stream for internal seeding (power
// iteration start vectors and similar), independent of std::mt19937 state.
struct SplitMix64 {
    std::uint64_t state;
    explicit SplitMix64(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    // uniform in (-1, 1), never exactly 0
    double next_signed_unit() {
        const double u = static_cast<double>(next() >> 11) * 0x1.0p-53;  // [0,1)
        return (u - 0.5) * 2.0 + 1e-12;
    }
};

}  // namespace bdpure
