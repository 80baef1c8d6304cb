// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "pbt/hparam.hpp"
#include "pbt/orchestrator.hpp"
#include "pbt/tasks/trainable.hpp"

namespace pbt {

struct GridPoint {
    HyperparamVector hparams;
    double loss = 0.0;
    std::map<std::string, double> metrics;
};

/// Fixed-hyperparameter comparison: each grid vector trains one lineage from the
/// first seed's initial state for `max_generations` steps of `updates_per_step`
/// updates (the budget of one PBT lineage) and reports the final evaluation.
template <Trainable Task>
std::vector<GridPoint> grid_baseline(const Task& task, const std::vector<HyperparamVector>& grid, const RunConfig& cfg) {
    std::vector<GridPoint> out;
    out.reserve(grid.size());
    for (const auto& h : grid) {
        validate_vector(cfg.search_space, h);
        Rng init_rng = Rng::fork(cfg.seed, 0, detail::kSeedStream);
        Rng train_rng = Rng::fork(cfg.seed, 0, detail::kWorkerStream);
        auto state = task.init_state(init_rng);
        for (int g = 0; g < cfg.max_generations; ++g) state = task.train(state, h, cfg.updates_per_step, train_rng);
        out.push_back({h, task.evaluate(state), task_metrics(task, state)});
    }
    return out;
}

/// Cartesian product of per-parameter value lists.
inline std::vector<HyperparamVector> make_grid(const std::map<std::string, std::vector<double>>& axes) {
    std::vector<HyperparamVector> grid{HyperparamVector{}};
    for (const auto& [name, values] : axes) {
        std::vector<HyperparamVector> next;
        for (const auto& partial : grid)
            for (double v : values) {
                auto h = partial;
                h.set(name, v);
                next.push_back(std::move(h));
            }
        grid = std::move(next);
    }
    return grid;
}

}  // namespace pbt
