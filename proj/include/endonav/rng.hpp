#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string_view>

namespace endonav {

// Self-contained xoshiro256++ generator. The standard <random> distributions
// are implementation-defined, so every draw in the project goes through this
// class to keep runs bit-reproducible.
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) s = splitmix(x);
        spare_valid_ = false;
        spare_ = 0.0;
    }

    // Named sub-stream derivation: independent generators for scene building,
    // target shuffles, policy init, per-worker rollouts, ...
    static Rng stream(uint64_t master_seed, std::string_view name) {
        uint64_t h = 1469598103934665603ull; // FNV-1a
        for (char c : name) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ull;
        }
        return Rng(master_seed ^ h);
    }

    uint64_t next_u64() {
        uint64_t* s = state_.data();
        uint64_t result = rotl(s[0] + s[3], 23) + s[0];
        uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; the spare is kept (and serialized) so a
    // stream of draws is identical regardless of call grouping.
    double normal() {
        if (spare_valid_) {
            spare_valid_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        spare_valid_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(T& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    void save(std::ostream& os) const {
        os.write(reinterpret_cast<const char*>(state_.data()), sizeof(state_));
        os.write(reinterpret_cast<const char*>(&spare_), sizeof(spare_));
        char sv = spare_valid_ ? 1 : 0;
        os.write(&sv, 1);
    }

    void load(std::istream& is) {
        is.read(reinterpret_cast<char*>(state_.data()), sizeof(state_));
        is.read(reinterpret_cast<char*>(&spare_), sizeof(spare_));
        char sv = 0;
        is.read(&sv, 1);
        spare_valid_ = sv != 0;
    }

    bool operator==(const Rng& o) const {
        return state_ == o.state_ && spare_ == o.spare_ && spare_valid_ == o.spare_valid_;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::array<uint64_t, 4> state_;
    double spare_;
    bool spare_valid_;
};

} // namespace endonav
