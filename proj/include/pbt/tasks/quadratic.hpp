// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include "pbt/state_store.hpp"
#include "pbt/tasks/trainable.hpp"

namespace pbt::tasks {

/// Toy problem: maximize Q(theta) = 1.2 - theta1^2 - theta2^2 while training
/// only sees the surrogate 1.2 - h1 * theta1^2 - h2 * theta2^2.
class QuadraticTask {
public:
    struct Options {
        double step_size = 0.01;
        std::array<double, 2> theta0{0.9, 0.9};
    };
    struct State {
        std::array<double, 2> theta{};
        friend bool operator==(const State&, const State&) = default;
    };

    static constexpr double kOptimum = 1.2;

    QuadraticTask() = default;
    explicit QuadraticTask(Options opts) : opts_(opts) {}

    const Options& options() const { return opts_; }

    SearchSpace default_space() const {
        return {{"h1", 0.5, 0.0, 1.0, {0.05, 0.1}, false}, {"h2", 0.5, 0.0, 1.0, {0.05, 0.1}, false}};
    }

    State init_state(Rng&) const { return State{opts_.theta0}; }

    State train(const State& s, const HyperparamVector& h, std::size_t num_updates, Rng&) const {
        const double h1 = h.at("h1");
        const double h2 = h.at("h2");
        if (!(h1 >= 0.0 && h1 <= 1.0 && h2 >= 0.0 && h2 <= 1.0))
            throw std::invalid_argument("quadratic: h must lie in [0, 1]^2");
        State out = s;
        for (std::size_t k = 0; k < num_updates; ++k) {
            // gradient of the surrogate is (-2 h1 theta1, -2 h2 theta2)
            out.theta[0] += opts_.step_size * (-2.0 * h1 * out.theta[0]);
            out.theta[1] += opts_.step_size * (-2.0 * h2 * out.theta[1]);
        }
        return out;
    }

    static double objective(const State& s) {
        return kOptimum - s.theta[0] * s.theta[0] - s.theta[1] * s.theta[1];
    }

    double evaluate(const State& s) const { return -objective(s); }

    std::string serialize(const State& s) const { return pack_doubles(s.theta); }
    State deserialize(std::string_view bytes) const {
        auto v = unpack_doubles(bytes);
        if (v.size() != 2) throw std::invalid_argument("quadratic: bad state blob");
        return State{{v[0], v[1]}};
    }

private:
    Options opts_;
};

}  // namespace pbt::tasks
