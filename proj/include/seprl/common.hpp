#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

namespace seprl {

using numvec = std::vector<double>;
using numvecvec = std::vector<numvec>;
/// Transition table indexed [state][action] -> distribution over next states.
using transtable = std::vector<numvecvec>;

using json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

/// Execution policy for the data-parallel kernels. Both paths perform the
/// same arithmetic per output slot, so results are bit-identical.
enum class Exec { seq, par };

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Invalid numeric configuration (discount >= 1, negative sizes, ...).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Failure loading or checking a persisted artifact.
struct ArtifactError : std::runtime_error {
    enum class Kind { missing, version, parse, truncated, fingerprint };
    Kind kind;
    ArtifactError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

/// A policy set fails the equal-action-marginal requirement.
struct AssumptionViolated : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Planning cannot proceed (non-finite penalized rewards).
struct PlanningError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Return normalization is undefined (max == min).
struct NormalizationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// An exhaustive enumeration would exceed the configured cap.
struct EnumerationCapExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic random streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from (master seed, salt). Used to give
/// each trajectory / ensemble member / grid cell its own stream so that
/// results do not depend on thread scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
    std::uint64_t s = master ^ (0x9e3779b97f4a7c15ULL + (salt << 1));
    splitmix64(s);
    return splitmix64(s);
}

/// Seeded random stream. Categorical sampling is hand-rolled (inverse CDF)
/// rather than std::discrete_distribution so draws are identical across
/// standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        // warm the engine state from a splitmix sequence
        std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(s)),
                          static_cast<std::uint32_t>(splitmix64(s)),
                          static_cast<std::uint32_t>(splitmix64(s)),
                          static_cast<std::uint32_t>(splitmix64(s))};
        engine_.seed(seq);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n) {
        if (n <= 0) throw ConfigError("uniform_int: n must be positive");
        // rejection sampling to avoid modulo bias
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % un;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::int64_t>(x % un);
    }

    /// Index drawn from a categorical distribution given by `probs`.
    int categorical(std::span<const double> probs) {
        const double u = uniform();
        double acc = 0.0;
        int last_positive = -1;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] > 0.0) last_positive = static_cast<int>(i);
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        if (last_positive < 0) throw ConfigError("categorical: no positive mass");
        return last_positive;  // float dust in the cumulative sum
    }

    double exponential() { return -std::log1p(-uniform()); }

    /// Uniform sample from the probability simplex (Dirichlet with unit
    /// concentration), via normalized exponentials.
    numvec dirichlet_uniform(int dim) {
        numvec row(static_cast<std::size_t>(dim));
        double total = 0.0;
        for (auto& v : row) {
            v = exponential();
            total += v;
        }
        for (auto& v : row) v /= total;
        return row;
    }

    /// Partial Fisher-Yates: the first `k` entries of a random permutation
    /// of 0..n-1.
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        const int m = std::min(n, k);
        for (int i = 0; i < m; ++i) {
            const auto j = i + uniform_int(n - i);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        idx.resize(static_cast<std::size_t>(m));
        return idx;
    }

  private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Decimal formatting (shortest round-trip), hashing, small helpers
// ---------------------------------------------------------------------------

/// Shortest decimal string that parses back to exactly the same double.
inline std::string fmt_double(double v) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ArtifactError(ArtifactError::Kind::parse,
                            "malformed decimal value '" + std::string(s) + "'");
    return v;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::uint64_t parse_hex64(std::string_view s) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ArtifactError(ArtifactError::Kind::parse,
                            "malformed hash '" + std::string(s) + "'");
    return v;
}

/// Shannon entropy in nats of a count histogram.
inline double entropy_nats(std::span<const long long> counts) {
    long long total = 0;
    for (const auto c : counts) total += c;
    if (total <= 0) throw std::invalid_argument("entropy_nats: empty histogram");
    double h = 0.0;
    for (const auto c : counts) {
        if (c <= 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Dense linear solve (tiny systems from policy evaluation / occupancy)
// ---------------------------------------------------------------------------

/// Gaussian elimination with partial pivoting; A is row-major n x n and is
/// consumed. No refinement pass.
inline numvec solve_linear_noref(numvec& a, numvec b) {
    const std::size_t n = b.size();
    if (a.size() != n * n) throw std::invalid_argument("solve_linear: shape mismatch");
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        double best = std::abs(a[col * n + col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double v = std::abs(a[r * n + col]);
            if (v > best) {
                best = v;
                pivot = r;
            }
        }
        if (best == 0.0) throw std::runtime_error("solve_linear: singular matrix");
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
            std::swap(b[col], b[pivot]);
        }
        const double d = a[col * n + col];
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / d;
            if (f == 0.0) continue;
            a[r * n + col] = 0.0;
            for (std::size_t c = col + 1; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    numvec x(n);
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t c = i + 1; c < n; ++c) acc -= a[i * n + c] * x[c];
        x[i] = acc / a[i * n + i];
    }
    return x;
}

/// Solves A x = b with partial pivoting plus one iterative-refinement pass.
inline numvec solve_linear(numvec a, numvec b) {
    const std::size_t n = b.size();
    const numvec a0 = a;
    const numvec b0 = b;
    numvec x = solve_linear_noref(a, std::move(b));

    numvec resid(n);
    for (std::size_t r = 0; r < n; ++r) {
        double acc = b0[r];
        for (std::size_t c = 0; c < n; ++c) acc -= a0[r * n + c] * x[c];
        resid[r] = acc;
    }
    double rmax = 0.0;
    for (const double v : resid) rmax = std::max(rmax, std::abs(v));
    if (rmax > 0.0) {
        numvec a1 = a0;
        const numvec dx = solve_linear_noref(a1, std::move(resid));
        for (std::size_t i = 0; i < n; ++i) x[i] += dx[i];
    }
    return x;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Writes via a temporary file and rename so readers never observe a
/// partially written artifact.
inline void atomic_write_file(const std::filesystem::path& path, std::string_view contents) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArtifactError(ArtifactError::Kind::missing,
                                      "cannot open '" + tmp.string() + "' for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw ArtifactError(ArtifactError::Kind::truncated,
                                      "short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError(ArtifactError::Kind::missing,
                                 "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace seprl
