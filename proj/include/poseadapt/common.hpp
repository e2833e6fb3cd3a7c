#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace poseadapt {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map failures onto exit codes in one place.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidInput : Error {
    explicit InvalidInput(const std::string& msg) : Error(msg) {}
};

// A joint reached non-positive depth; the pinhole projection is undefined.
struct ProjectionDegenerate : Error {
    explicit ProjectionDegenerate(const std::string& msg) : Error(msg) {}
};

// Procrustes alignment has no unique solution (zero-variance point set).
struct AlignmentDegenerate : Error {
    explicit AlignmentDegenerate(const std::string& msg) : Error(msg) {}
};

// A loss or gradient evaluated to a non-finite value.
struct GradientInvalid : Error {
    explicit GradientInvalid(const std::string& msg) : Error(msg) {}
};

// Malformed on-disk data; carries the failing record index when known.
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t record)
        : Error(msg + " (record " + std::to_string(record) + ")"), record_index(record) {}
    explicit ParseError(const std::string& msg) : Error(msg), record_index(0) {}
    std::size_t record_index;
};

struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic randomness. mt19937_64 output is pinned by the standard, and
// the value transforms below are ours, so identical seeds give identical
// streams on any platform/build of this code base.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derive a stream-specific seed from a base seed and up to two tags.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(splitmix64(base) ^ a) ^ b);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        // xorshift-multiply step of splitmix64; period is fine at our scale.
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    // Box-Muller without the cached second value, so call order alone
    // determines the stream.
    double normal() {
        double u1 = 0.0;
        do {
            u1 = unit();
        } while (u1 <= 0.0);
        const double u2 = unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Student-t with integer-ish dof, built from normals.
    double student_t(double dof) {
        const int n = std::max(1, static_cast<int>(std::lround(dof)));
        double chisq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double z = normal();
            chisq += z * z;
        }
        return normal() / std::sqrt(chisq / static_cast<double>(n));
    }

    // Inclusive bounds, rejection-sampled for an unbiased draw.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw InvalidInput("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v = 0;
        do {
            v = next();
        } while (v >= limit);
        return lo + static_cast<int>(v % span);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Hashing and numeric helpers.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

// Shortest-round-trip decimal form; used by every text writer so repeated
// runs emit byte-identical files.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace poseadapt
