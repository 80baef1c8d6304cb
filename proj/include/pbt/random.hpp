// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace pbt {

// mt19937_64 that counts how many words it has produced, so a record can
// store the stream position it was created at.
class Rng {
public:
    using result_type = std::mt19937_64::result_type;

    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    // Independent stream for (seed, stream_id, salt).
    static Rng fork(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t salt = 0) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                          static_cast<std::uint32_t>(salt), 0x9e3779b9u};
        Rng r;
        r.engine_.seed(seq);
        return r;
    }

    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }

    result_type operator()() {
        ++draws_;
        return engine_();
    }

    std::uint64_t draws() const { return draws_; }

    double uniform01() { return std::uniform_real_distribution<double>(0.0, 1.0)(*this); }

    // Uniform integer in [lo, hi].
    template <typename Int>
    Int uniform_int(Int lo, Int hi) {
        return std::uniform_int_distribution<Int>(lo, hi)(*this);
    }

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(*this); }

private:
    std::mt19937_64 engine_;
    std::uint64_t draws_ = 0;
};

}  // namespace pbt
