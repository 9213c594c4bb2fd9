#pragma once

// Shared plumbing: error types, seeded random streams, digests.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

namespace fss {

inline constexpr std::string_view kToolkitVersion = "0.1.0";

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a mask or tensor has a degenerate or mismatched shape.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A class that no training image contains.
class UnsatisfiableClass : public Error {
public:
    UnsatisfiableClass(int class_id, const std::string& what)
        : Error(what), class_id_(class_id) {}
    int class_id() const noexcept { return class_id_; }

private:
    int class_id_;
};

/// The sampler could not build a support set within its restart budget.
class InfeasibleTask : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Random streams
//
// All sampling goes through these helpers instead of <random> distributions,
// whose output is implementation-defined. Given the same engine state the
// draws are identical on every standard library.

using Rng = std::mt19937_64;
inline constexpr std::string_view kPrngId = "mt19937_64";

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
    return splitmix64(splitmix64(a) ^ (b + 0x632BE59BD9B4E019ULL + (a << 6) + (a >> 2)));
}

inline std::uint64_t hash_string(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    if (n == 0) throw Error("uniform_index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = Rng::max() - (Rng::max() % bound + 1) % bound;
    std::uint64_t r = rng();
    while (r > limit) r = rng();
    return static_cast<std::size_t>(r % bound);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_real(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

inline double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Draws `count` distinct positions of `pool` uniformly, in draw order
/// (partial Fisher-Yates).
template <typename T>
std::vector<T> draw_without_replacement(Rng& rng, std::vector<T> pool, std::size_t count) {
    if (count > pool.size()) throw Error("draw_without_replacement: not enough elements");
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + uniform_index(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    return pool;
}

template <typename T>
void shuffle(Rng& rng, std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

// ---------------------------------------------------------------------------
// SHA-256 digests (dataset digests, parameter hashes, spec hashes).

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw Error("sha256: init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(const void* data, std::size_t n) {
        if (n > 0 && EVP_DigestUpdate(ctx_, data, n) != 1) throw Error("sha256: update failed");
        return *this;
    }
    Sha256& update(std::string_view s) { return update(s.data(), s.size()); }

    template <typename T>
    Sha256& update_pod(const T& v) {
        return update(&v, sizeof(T));
    }

    template <typename T>
    Sha256& update_span(std::span<const T> v) {
        return update(v.data(), v.size_bytes());
    }

    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw Error("sha256: final failed");
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        out.reserve(2 * len);
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(digits[md[i] >> 4]);
            out.push_back(digits[md[i] & 0xF]);
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view s) {
    Sha256 h;
    h.update(s);
    return h.hex();
}

}  // namespace fss
