// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pbt/record.hpp"
#include "pbt/state_store.hpp"
#include "pbt/tasks/trainable.hpp"

namespace pbt::tasks {

/// Linear least squares on a small, noisy training split. Training perturbs the
/// inputs with Gaussian noise of magnitude `sigma`, which acts as a regularizer.
/// Fitness is measured on a separate selection split; a larger held-out split is
/// reported as the metric "heldout".
class RegressionTask {
public:
    struct Options {
        std::size_t dim = 20;
        std::size_t n_train = 30;
        std::size_t n_select = 200;
        std::size_t n_heldout = 1000;
        double label_noise = 4.0;
        double step_size = 0.05;
        double sigma_max = 2.0;
        std::uint64_t data_seed = 0;
    };
    struct State {
        std::vector<double> w;
        friend bool operator==(const State&, const State&) = default;
    };
    struct Split {
        std::vector<double> x;  // row-major n x dim
        std::vector<double> y;
        std::size_t rows() const { return y.size(); }
    };

    RegressionTask() : RegressionTask(Options{}) {}
    explicit RegressionTask(Options opts) : opts_(opts) {
        if (opts_.dim == 0 || opts_.n_train == 0 || opts_.n_select == 0 || opts_.n_heldout == 0)
            throw std::invalid_argument("regression: dataset sizes must be positive");
        Rng rng = Rng::fork(opts_.data_seed, 0, 0x5e9u);
        w_true_.resize(opts_.dim);
        for (auto& v : w_true_) v = rng.normal();
        train_ = make_split(opts_.n_train, rng);
        select_ = make_split(opts_.n_select, rng);
        heldout_ = make_split(opts_.n_heldout, rng);
    }

    const Options& options() const { return opts_; }
    const Split& train_split() const { return train_; }
    const Split& select_split() const { return select_; }
    const Split& heldout_split() const { return heldout_; }

    SearchSpace default_space() const { return {{"sigma", 0.0, 0.0, opts_.sigma_max, {0.05, 0.1}, false}}; }

    State init_state(Rng&) const { return State{std::vector<double>(opts_.dim, 0.0)}; }

    State train(const State& s, const HyperparamVector& h, std::size_t num_updates, Rng& rng) const {
        const double sigma = h.at("sigma");
        if (!(sigma >= 0.0 && sigma <= opts_.sigma_max)) throw std::invalid_argument("regression: sigma out of range");
        const std::size_t n = train_.rows(), d = opts_.dim;
        State out = s;
        std::vector<double> xt(d), grad(d);
        for (std::size_t k = 0; k < num_updates; ++k) {
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double pred = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    xt[j] = train_.x[i * d + j];
                    if (sigma > 0.0) xt[j] += sigma * rng.normal();
                    pred += xt[j] * out.w[j];
                }
                const double r = pred - train_.y[i];
                for (std::size_t j = 0; j < d; ++j) grad[j] += r * xt[j];
            }
            const double scale = 2.0 * opts_.step_size / static_cast<double>(n);
            for (std::size_t j = 0; j < d; ++j) out.w[j] -= scale * grad[j];
        }
        return out;
    }

    static double mse(const Split& split, const std::vector<double>& w) {
        const std::size_t d = w.size();
        double acc = 0.0;
        for (std::size_t i = 0; i < split.rows(); ++i) {
            double pred = 0.0;
            for (std::size_t j = 0; j < d; ++j) pred += split.x[i * d + j] * w[j];
            acc += (pred - split.y[i]) * (pred - split.y[i]);
        }
        return acc / static_cast<double>(split.rows());
    }

    double evaluate(const State& s) const { return mse(select_, s.w); }

    std::map<std::string, double> metrics(const State& s) const {
        return {{"heldout", mse(heldout_, s.w)}, {"train", mse(train_, s.w)}};
    }

    std::string serialize(const State& s) const { return pack_doubles(s.w); }
    State deserialize(std::string_view bytes) const {
        auto w = unpack_doubles(bytes);
        if (w.size() != opts_.dim) throw std::invalid_argument("regression: bad state blob");
        return State{std::move(w)};
    }

    /// CSV with one row per example: split, y, x0..x{dim-1}.
    void save_dataset(const std::filesystem::path& path) const {
        std::ofstream out(path);
        out << "split,y";
        for (std::size_t j = 0; j < opts_.dim; ++j) out << ",x" << j;
        out << '\n';
        auto dump = [&](const char* name, const Split& s) {
            for (std::size_t i = 0; i < s.rows(); ++i) {
                out << name << ',' << format_number(s.y[i]);
                for (std::size_t j = 0; j < opts_.dim; ++j) out << ',' << format_number(s.x[i * opts_.dim + j]);
                out << '\n';
            }
        };
        dump("train", train_);
        dump("select", select_);
        dump("heldout", heldout_);
    }

private:
    Split make_split(std::size_t n, Rng& rng) const {
        Split s;
        s.x.resize(n * opts_.dim);
        s.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            double y = 0.0;
            for (std::size_t j = 0; j < opts_.dim; ++j) {
                s.x[i * opts_.dim + j] = rng.normal();
                y += s.x[i * opts_.dim + j] * w_true_[j];
            }
            s.y[i] = y + opts_.label_noise * rng.normal();
        }
        return s;
    }

    Options opts_;
    std::vector<double> w_true_;
    Split train_, select_, heldout_;
};

}  // namespace pbt::tasks
