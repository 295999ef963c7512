#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mope {

inline constexpr const char* kToolVersion = "0.1.0";

// Single error type; `kind` feeds the CLI's one-line machine-parsable output.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

[[noreturn]] inline void throw_error(const char* kind, const std::string& msg) {
    throw Error(kind, msg);
}

// Checked mode: NaN/Inf rejection at tensor construction plus extra shape
// guards. On by default; heavy runs may disable it through the config.
inline std::atomic<bool>& checked_mode_flag() {
    static std::atomic<bool> flag{true};
    return flag;
}
inline bool checked_mode() { return checked_mode_flag().load(std::memory_order_relaxed); }
inline void set_checked_mode(bool on) { checked_mode_flag().store(on, std::memory_order_relaxed); }

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// normal sampler is hand-rolled Box-Muller so streams do not depend on the
// standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        // xorshift-free: delegate to mt19937_64 for well-understood quality.
        return engine_step();
    }

    double uniform() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    int uniform_int(int n) {  // [0, n)
        if (n <= 0) throw_error("contract", "uniform_int: n must be positive");
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    // Fisher-Yates permutation of [0, n).
    std::vector<int> permutation(int n) {
        std::vector<int> p(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
        for (int i = n - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
        }
        return p;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

private:
    // Minimal mt19937_64 (standard parameters) kept inline so the stream is
    // identical across toolchains.
    std::uint64_t engine_step() {
        if (index_ >= 312) twist();
        std::uint64_t x = mt_[index_++];
        x ^= (x >> 29) & 0x5555555555555555ULL;
        x ^= (x << 17) & 0x71D67FFFEDA60000ULL;
        x ^= (x << 37) & 0xFFF7EEE000000000ULL;
        x ^= x >> 43;
        return x;
    }

    void seed_engine() {
        mt_[0] = state_;
        for (std::size_t i = 1; i < 312; ++i)
            mt_[i] = 6364136223846793005ULL * (mt_[i - 1] ^ (mt_[i - 1] >> 62)) + i;
        index_ = 312;
        seeded_ = true;
    }

    void twist() {
        if (!seeded_) seed_engine();
        constexpr std::uint64_t kLowerMask = 0x7FFFFFFFULL;
        constexpr std::uint64_t kUpperMask = ~kLowerMask;
        for (std::size_t i = 0; i < 312; ++i) {
            const std::uint64_t x = (mt_[i] & kUpperMask) | (mt_[(i + 1) % 312] & kLowerMask);
            std::uint64_t y = x >> 1;
            if (x & 1ULL) y ^= 0xB5026F5AA96619E9ULL;
            mt_[i] = mt_[(i + 156) % 312] ^ y;
        }
        index_ = 0;
    }

    std::uint64_t state_;
    std::uint64_t mt_[312] = {};
    std::size_t index_ = 312;
    bool seeded_ = false;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mope
