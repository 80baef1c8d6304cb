// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <concepts>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>

#include "pbt/hparam.hpp"
#include "pbt/random.hpp"

namespace pbt {

/// The task contract driven by the worker loop. `train` returns a new state and
/// never touches its input; `evaluate` is deterministic; lower loss is better.
template <typename T>
concept Trainable = requires(const T& task, const typename T::State& state, const HyperparamVector& h, Rng& rng,
                             std::string_view bytes) {
    typename T::State;
    { task.init_state(rng) } -> std::same_as<typename T::State>;
    { task.train(state, h, std::size_t{1}, rng) } -> std::same_as<typename T::State>;
    { task.evaluate(state) } -> std::convertible_to<double>;
    { task.serialize(state) } -> std::same_as<std::string>;
    { task.deserialize(bytes) } -> std::same_as<typename T::State>;
    { task.default_space() } -> std::same_as<SearchSpace>;
};

/// Tasks that log additional losses per checkpoint (e.g. a reporting split).
template <typename T>
concept ReportsMetrics = Trainable<T> && requires(const T& task, const typename T::State& state) {
    { task.metrics(state) } -> std::same_as<std::map<std::string, double>>;
};

template <Trainable Task>
std::map<std::string, double> task_metrics(const Task& task, const typename Task::State& state) {
    if constexpr (ReportsMetrics<Task>) {
        return task.metrics(state);
    } else {
        (void)task;
        (void)state;
        return {};
    }
}

}  // namespace pbt
