// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "pbt/hparam.hpp"
#include "pbt/random.hpp"

namespace pbt {

/// T x F matrix, row-major: frame t occupies data[t * bands, (t + 1) * bands).
struct Spectrogram {
    std::size_t frames = 0;
    std::size_t bands = 0;
    std::vector<double> data;

    Spectrogram() = default;
    Spectrogram(std::size_t t, std::size_t f, double value = 0.0) : frames(t), bands(f), data(t * f, value) {}

    double& at(std::size_t t, std::size_t f) { return data[t * bands + f]; }
    double at(std::size_t t, std::size_t f) const { return data[t * bands + f]; }

    friend bool operator==(const Spectrogram&, const Spectrogram&) = default;
};

struct MaskPolicy {
    double fmask_f = 0.0;  // max frequency-mask width, bands
    double fmask_n = 0.0;  // fractional number of frequency masks
    double tmask_t = 0.0;  // max time-mask width, frames
    double tmask_p = 1.0;  // max time-mask width as a fraction of the utterance
    double tmask_n = 0.0;  // fractional number of time masks
    double fill = 0.0;

    void validate() const {
        for (double v : {fmask_f, fmask_n, tmask_t, tmask_p, tmask_n})
            if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("mask policy values must be finite and >= 0");
        if (tmask_p > 1.0) throw std::invalid_argument("tmask_p must lie in [0, 1]");
    }

    /// Reads the five masking parameters by name; absent ones mean "no masking".
    static MaskPolicy from_hparams(const HyperparamVector& h) {
        MaskPolicy p;
        p.fmask_f = h.get("fmask_f", 0.0);
        p.fmask_n = h.get("fmask_n", 0.0);
        p.tmask_t = h.get("tmask_t", 0.0);
        p.tmask_p = h.get("tmask_p", 1.0);
        p.tmask_n = h.get("tmask_n", 0.0);
        p.validate();
        return p;
    }
};

/// Two frequency masks of up to 27 bands and two time masks of up to 100 frames.
inline constexpr MaskPolicy kLdPolicy{27.0, 2.0, 100.0, 1.0, 2.0, 0.0};

enum class MaskAxis { Frequency, Time };

struct AppliedMask {
    MaskAxis axis;
    std::size_t start;
    std::size_t width;
};

namespace detail {

inline std::size_t width_cap(double max_width, std::size_t extent) {
    if (!(max_width > 0.0)) return 0;
    return static_cast<std::size_t>(std::min(std::floor(max_width), static_cast<double>(extent)));
}

}  // namespace detail

inline void mask_frequency_inplace(Spectrogram& s, double max_width, int count, double fill, Rng& rng,
                                   std::vector<AppliedMask>* applied = nullptr) {
    if (count < 0) throw std::invalid_argument("mask count must be >= 0");
    const std::size_t cap = detail::width_cap(max_width, s.bands);
    for (int i = 0; i < count; ++i) {
        const auto w = rng.uniform_int<std::size_t>(0, cap);
        const auto f0 = rng.uniform_int<std::size_t>(0, s.bands - w);
        for (std::size_t t = 0; t < s.frames; ++t)
            std::fill_n(s.data.begin() + static_cast<std::ptrdiff_t>(t * s.bands + f0), w, fill);
        if (applied) applied->push_back({MaskAxis::Frequency, f0, w});
    }
}

inline void mask_time_inplace(Spectrogram& s, double max_width, double p, int count, double fill, Rng& rng,
                              std::vector<AppliedMask>* applied = nullptr) {
    if (count < 0) throw std::invalid_argument("mask count must be >= 0");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("time mask fraction must lie in [0, 1]");
    const std::size_t cap =
        std::min(detail::width_cap(max_width, s.frames), static_cast<std::size_t>(std::floor(p * static_cast<double>(s.frames))));
    for (int i = 0; i < count; ++i) {
        const auto w = rng.uniform_int<std::size_t>(0, cap);
        const auto t0 = rng.uniform_int<std::size_t>(0, s.frames - w);
        std::fill_n(s.data.begin() + static_cast<std::ptrdiff_t>(t0 * s.bands), w * s.bands, fill);
        if (applied) applied->push_back({MaskAxis::Time, t0, w});
    }
}

inline Spectrogram apply_freq_masks(Spectrogram s, double max_width, int count, double fill, Rng& rng,
                                    std::vector<AppliedMask>* applied = nullptr) {
    mask_frequency_inplace(s, max_width, count, fill, rng, applied);
    return s;
}

inline Spectrogram apply_time_masks(Spectrogram s, double max_width, double p, int count, double fill, Rng& rng,
                                    std::vector<AppliedMask>* applied = nullptr) {
    mask_time_inplace(s, max_width, p, count, fill, rng, applied);
    return s;
}

/// Samples the two mask counts from the fractional policy values, then applies
/// frequency masks followed by time masks.
inline Spectrogram specaugment(Spectrogram s, const MaskPolicy& policy, Rng& rng,
                               std::vector<AppliedMask>* applied = nullptr) {
    policy.validate();
    const int nf = sample_count(policy.fmask_n, rng);
    const int nt = sample_count(policy.tmask_n, rng);
    mask_frequency_inplace(s, policy.fmask_f, nf, policy.fill, rng, applied);
    mask_time_inplace(s, policy.tmask_t, policy.tmask_p, nt, policy.fill, rng, applied);
    return s;
}

/// Mini-batch variant: mask counts are drawn once per batch, mask geometry per utterance.
inline void specaugment_batch(std::span<Spectrogram> batch, const MaskPolicy& policy, Rng& rng) {
    policy.validate();
    const int nf = sample_count(policy.fmask_n, rng);
    const int nt = sample_count(policy.tmask_n, rng);
    for (auto& s : batch) {
        mask_frequency_inplace(s, policy.fmask_f, nf, policy.fill, rng);
        mask_time_inplace(s, policy.tmask_t, policy.tmask_p, nt, policy.fill, rng);
    }
}

}  // namespace pbt
