// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbt/hparam.hpp"
#include "pbt/record.hpp"

namespace pbt::analysis {

/// Latest generation with at least two evaluated records, computed from a snapshot.
inline std::optional<int> last_completed_generation(std::span<const CheckpointRecord> records) {
    std::vector<std::size_t> counts;
    for (const auto& r : records) {
        if (!r.evaluated()) continue;
        if (counts.size() <= static_cast<std::size_t>(r.generation)) counts.resize(r.generation + 1, 0);
        ++counts[r.generation];
    }
    for (std::size_t g = counts.size(); g-- > 0;)
        if (counts[g] >= 2) return static_cast<int>(g);
    return std::nullopt;
}

/// "loss" names the selection loss; anything else is looked up in the record's metrics.
inline std::optional<double> metric_value(const CheckpointRecord& r, const std::string& metric) {
    if (metric == "loss") return r.loss;
    if (!r.evaluated()) return std::nullopt;
    auto it = r.metrics.find(metric);
    if (it == r.metrics.end()) return std::nullopt;
    return it->second;
}

struct GenerationWindow {
    int lo = 0;
    int hi = 0;
};

/// Lowest metric value among evaluated records in the window (default: the last
/// completed generation, or every generation if none is complete). Ties go to the lower id.
inline CheckpointRecord best_checkpoint(std::span<const CheckpointRecord> records, const std::string& metric = "loss",
                                        std::optional<GenerationWindow> window = std::nullopt) {
    if (!window) {
        if (auto g = last_completed_generation(records)) window = GenerationWindow{*g, *g};
        else window = GenerationWindow{0, std::numeric_limits<int>::max()};
    }
    const CheckpointRecord* best = nullptr;
    double best_value = 0.0;
    for (const auto& r : records) {
        if (r.generation < window->lo || r.generation > window->hi) continue;
        auto v = metric_value(r, metric);
        if (!v) continue;
        if (!best || *v < best_value || (*v == best_value && r.id < best->id)) {
            best = &r;
            best_value = *v;
        }
    }
    if (!best) throw std::runtime_error("best_checkpoint: no evaluated records for metric '" + metric + "'");
    return *best;
}

/// Root-first ancestor chain ending at `id`.
inline std::vector<CheckpointRecord> lineage(std::span<const CheckpointRecord> records, CheckpointId id) {
    auto find = [&](CheckpointId want) -> const CheckpointRecord& {
        if (want < records.size() && records[want].id == want) return records[want];
        for (const auto& r : records)
            if (r.id == want) return r;
        throw std::runtime_error("lineage: broken parent link to checkpoint " + std::to_string(want));
    };
    std::vector<CheckpointRecord> chain;
    const CheckpointRecord* cur = &find(id);
    chain.push_back(*cur);
    while (cur->parent) {
        const auto& parent = find(*cur->parent);
        if (parent.generation + 1 != cur->generation || chain.size() > records.size())
            throw std::runtime_error("lineage: inconsistent generations at checkpoint " + std::to_string(cur->id));
        chain.push_back(parent);
        cur = &parent;
    }
    std::reverse(chain.begin(), chain.end());
    return chain;
}

struct ScheduleEntry {
    int generation = 0;
    CheckpointId checkpoint = 0;
    HyperparamVector hparams;
};
using Schedule = std::vector<ScheduleEntry>;

/// Hyperparameters taken by every ancestor of `id`, root first.
inline Schedule extract_schedule(std::span<const CheckpointRecord> records, CheckpointId id) {
    Schedule s;
    for (auto& r : lineage(records, id)) s.push_back({r.generation, r.id, r.hparams});
    return s;
}

/// Per-parameter mean over the last min(k, size) entries.
inline HyperparamVector tail_average(const Schedule& schedule, std::size_t k) {
    if (schedule.empty()) throw std::invalid_argument("tail_average: empty schedule");
    if (k == 0) throw std::invalid_argument("tail_average: k must be >= 1");
    const std::size_t n = std::min(k, schedule.size());
    HyperparamVector out;
    for (const auto& [name, _] : schedule.back().hparams) {
        double sum = 0.0;
        for (std::size_t i = schedule.size() - n; i < schedule.size(); ++i) sum += schedule[i].hparams.at(name);
        out.set(name, sum / static_cast<double>(n));
    }
    return out;
}

struct SeriesPoint {
    int generation = 0;
    double value = 0.0;
    CheckpointId checkpoint = 0;
};

/// One point per evaluated checkpoint for the named parameter.
inline std::vector<SeriesPoint> population_series(std::span<const CheckpointRecord> records, const SearchSpace& space,
                                                  const std::string& param) {
    (void)find_spec(space, param);
    std::vector<SeriesPoint> out;
    for (const auto& r : records)
        if (r.evaluated()) out.push_back({r.generation, r.hparams.at(param), r.id});
    return out;
}

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// Number of neighbours used per local fit.
inline std::size_t lowess_span(std::size_t n, double frac) {
    auto k = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(k, 1, n);
}

inline double tricube(double u) {
    const double a = 1.0 - u * u * u;
    return a * a * a;
}

/// Single-pass LOWESS: at each x, a tricube-weighted linear fit over the
/// ceil(frac * n) nearest neighbours (plus any ties at the boundary distance).
/// Output is in input order.
inline std::vector<Point> lowess(std::span<const Point> points, double frac = 0.3) {
    const std::size_t n = points.size();
    if (n < 2) throw std::invalid_argument("lowess: need at least 2 points");
    if (!(frac > 0.0 && frac <= 1.0)) throw std::invalid_argument("lowess: frac must lie in (0, 1]");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return points[a].x < points[b].x; });
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = points[order[i]].x;
        ys[i] = points[order[i]].y;
    }

    const std::size_t k = lowess_span(n, frac);
    std::vector<Point> out(n);
    std::size_t left = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = xs[i];
        // the k nearest neighbours of x form a contiguous window [left, left + k)
        while (left + k < n && x - xs[left] > xs[left + k] - x) ++left;
        const double dmax = std::max(x - xs[left], xs[left + k - 1] - x);
        std::size_t lo = left, hi = left + k;
        while (lo > 0 && x - xs[lo - 1] <= dmax) --lo;
        while (hi < n && xs[hi] - x <= dmax) ++hi;

        double sw = 0.0, sx = 0.0, sy = 0.0;
        std::vector<double> w(hi - lo);
        for (std::size_t j = lo; j < hi; ++j) {
            const double d = std::abs(xs[j] - x);
            w[j - lo] = dmax > 0.0 ? tricube(d / dmax) : 1.0;
            sw += w[j - lo];
            sx += w[j - lo] * xs[j];
            sy += w[j - lo] * ys[j];
        }
        const double xbar = sx / sw, ybar = sy / sw;
        double sxx = 0.0, sxy = 0.0;
        for (std::size_t j = lo; j < hi; ++j) {
            sxx += w[j - lo] * (xs[j] - xbar) * (xs[j] - xbar);
            sxy += w[j - lo] * (xs[j] - xbar) * (ys[j] - ybar);
        }
        double fitted = ybar;
        if (sxx > 1e-12 * sw * std::max(dmax * dmax, 1e-300)) fitted += (sxy / sxx) * (x - xbar);
        out[order[i]] = {points[order[i]].x, fitted};
    }
    return out;
}

/// Pearson correlation between two per-checkpoint metrics over records carrying both.
inline double metric_correlation(std::span<const CheckpointRecord> records, const std::string& metric_a,
                                 const std::string& metric_b) {
    std::vector<double> a, b;
    for (const auto& r : records) {
        auto va = metric_value(r, metric_a);
        auto vb = metric_value(r, metric_b);
        if (va && vb && std::isfinite(*va) && std::isfinite(*vb)) {
            a.push_back(*va);
            b.push_back(*vb);
        }
    }
    if (a.size() < 2) throw std::invalid_argument("metric_correlation: fewer than 2 checkpoints carry both metrics");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw std::invalid_argument("metric_correlation: zero variance");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace pbt::analysis
