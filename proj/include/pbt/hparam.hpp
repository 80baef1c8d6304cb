// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbt/random.hpp"

namespace pbt {

inline bool is_identifier(const std::string& s) {
    if (s.empty()) return false;
    auto ok_first = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
    auto ok_rest = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    return ok_first(s.front()) && std::all_of(s.begin() + 1, s.end(), ok_rest);
}

/// One bounded, continuously mutated hyperparameter.
struct HyperparamSpec {
    std::string name;
    double init = 0.0;
    double min = 0.0;
    double max = 1.0;
    std::vector<double> deltas;      // allowed mutation magnitudes
    bool fractional_count = false;   // realized through sample_count at use time

    void validate() const {
        auto fail = [&](const std::string& why) {
            throw std::invalid_argument("hyperparameter '" + name + "': " + why);
        };
        if (!is_identifier(name)) fail("name must be an identifier");
        if (!(std::isfinite(min) && std::isfinite(max) && std::isfinite(init))) fail("bounds must be finite");
        if (!(min < max)) fail("min must be < max");
        if (init < min || init > max) fail("init outside [min, max]");
        if (deltas.empty()) fail("at least one mutation delta is required");
        for (double d : deltas) {
            if (!(d > 0.0) || !(d < max - min)) fail("every delta must lie in (0, max - min)");
        }
    }
};

using SearchSpace = std::vector<HyperparamSpec>;

inline void validate_space(const SearchSpace& space) {
    for (std::size_t i = 0; i < space.size(); ++i) {
        space[i].validate();
        for (std::size_t j = 0; j < i; ++j) {
            if (space[j].name == space[i].name)
                throw std::invalid_argument("duplicate hyperparameter '" + space[i].name + "'");
        }
    }
}

inline const HyperparamSpec& find_spec(const SearchSpace& space, const std::string& name) {
    for (const auto& s : space)
        if (s.name == name) return s;
    throw std::out_of_range("unknown hyperparameter '" + name + "'");
}

/// Named hyperparameter values. Keys are kept sorted so iteration order is stable.
class HyperparamVector {
public:
    HyperparamVector() = default;
    HyperparamVector(std::initializer_list<std::pair<const std::string, double>> init) : values_(init) {}
    explicit HyperparamVector(std::map<std::string, double> values) : values_(std::move(values)) {}

    double at(const std::string& name) const {
        auto it = values_.find(name);
        if (it == values_.end()) throw std::out_of_range("hyperparameter '" + name + "' not set");
        return it->second;
    }
    double get(const std::string& name, double fallback) const {
        auto it = values_.find(name);
        return it == values_.end() ? fallback : it->second;
    }
    bool contains(const std::string& name) const { return values_.count(name) != 0; }
    void set(const std::string& name, double v) { values_[name] = v; }

    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }
    auto begin() const { return values_.begin(); }
    auto end() const { return values_.end(); }
    const std::map<std::string, double>& values() const { return values_; }

    friend bool operator==(const HyperparamVector&, const HyperparamVector&) = default;

private:
    std::map<std::string, double> values_;
};

inline HyperparamVector initial_vector(const SearchSpace& space) {
    HyperparamVector h;
    for (const auto& s : space) h.set(s.name, s.init);
    return h;
}

/// Throws unless `h` has exactly the space's keys and every value lies in range.
inline void validate_vector(const SearchSpace& space, const HyperparamVector& h) {
    if (h.size() != space.size())
        throw std::invalid_argument("hyperparameter vector has " + std::to_string(h.size()) + " entries, search space has " +
                                    std::to_string(space.size()));
    for (const auto& s : space) {
        if (!h.contains(s.name)) throw std::invalid_argument("hyperparameter '" + s.name + "' missing");
        double v = h.at(s.name);
        if (!(v >= s.min && v <= s.max))
            throw std::invalid_argument("hyperparameter '" + s.name + "' = " + std::to_string(v) + " outside [" +
                                        std::to_string(s.min) + ", " + std::to_string(s.max) + "]");
    }
}

inline double clamp(const HyperparamSpec& spec, double v) { return std::min(std::max(v, spec.min), spec.max); }

/// v +/- one delta (sign and delta uniform, independent), clamped into range.
inline double mutate_param(const HyperparamSpec& spec, double v, Rng& rng) {
    const double sign = rng.uniform_int(0, 1) == 0 ? -1.0 : 1.0;
    const double delta = spec.deltas[rng.uniform_int<std::size_t>(0, spec.deltas.size() - 1)];
    return clamp(spec, v + sign * delta);
}

/// Every parameter independently goes through mutate_param with the given probability.
inline HyperparamVector mutate(const SearchSpace& space, const HyperparamVector& h, Rng& rng,
                               double mutation_probability = 1.0) {
    HyperparamVector out = h;
    for (const auto& s : space) {
        if (mutation_probability < 1.0 && rng.uniform01() >= mutation_probability) continue;
        out.set(s.name, mutate_param(s, h.at(s.name), rng));
    }
    return out;
}

/// Fractional count x = N + p: N with probability 1 - p, N + 1 with probability p.
/// Integer inputs draw nothing from the stream.
inline int sample_count(double x, Rng& rng) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("sample_count: x must be finite and >= 0");
    const double n = std::floor(x);
    const double p = x - n;
    int count = static_cast<int>(n);
    if (p > 0.0 && rng.uniform01() < p) ++count;
    return count;
}

/// The built-in "table2" search space: five SpecAugment parameters followed by
/// encoder and decoder regularization.
inline SearchSpace table2_space() {
    return {
        {"fmask_f", 7, 7, 120, {2.5, 5}, false},
        {"fmask_n", 1, 1, 8, {0.5}, true},
        {"tmask_t", 20, 20, 150, {2, 5}, false},
        {"tmask_p", 0.2, 0.2, 1, {0.05, 0.1}, false},
        {"tmask_n", 1, 1, 8, {0.5, 1}, true},
        {"dropout", 0.2, 0.01, 0.8, {0.01}, false},
        {"tr_dropout", 0.2, 0.01, 0.8, {0.01}, false},
        {"tr_layerdrop", 0.2, 0.01, 0.8, {0.01}, false},
        {"dec_tr_dropout", 0.3, 0.01, 0.8, {0.01}, false},
        {"dec_tr_layerdrop", 0.2, 0.01, 0.8, {0.01}, false},
    };
}

/// First block of table2: the SpecAugment masking parameters only.
inline SearchSpace specaugment_space() {
    auto all = table2_space();
    return SearchSpace(all.begin(), all.begin() + 5);
}

}  // namespace pbt
