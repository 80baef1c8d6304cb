// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pbt/specaugment.hpp"
#include "pbt/state_store.hpp"
#include "pbt/tasks/trainable.hpp"

namespace pbt::tasks {

/// Tone-pattern classification on synthetic T x F spectrograms with a linear
/// softmax classifier. SpecAugment masking is applied to training batches only.
class SpecToyTask {
public:
    struct Options {
        std::size_t frames = 50;
        std::size_t bands = 40;
        std::size_t classes = 4;
        std::size_t n_train = 64;
        std::size_t n_select = 128;
        std::size_t n_report = 256;
        std::size_t batch = 8;
        double step_size = 0.05;
        double amplitude = 1.0;
        double noise = 1.0;
        bool augment = true;
        std::uint64_t data_seed = 0;
    };
    struct Example {
        Spectrogram spec;
        std::size_t label = 0;
    };
    struct State {
        std::vector<double> weights;  // classes x (frames * bands + 1), bias last
        friend bool operator==(const State&, const State&) = default;
    };

    SpecToyTask() : SpecToyTask(Options{}) {}
    explicit SpecToyTask(Options opts) : opts_(opts) {
        if (opts_.frames == 0 || opts_.bands < 4 || opts_.classes < 2 || opts_.n_train == 0 || opts_.batch == 0)
            throw std::invalid_argument("spectoy: invalid options");
        Rng rng = Rng::fork(opts_.data_seed, 0, 0x5bec);
        train_ = make_split(opts_.n_train, rng);
        select_ = make_split(opts_.n_select, rng);
        report_ = make_split(opts_.n_report, rng);
    }

    const Options& options() const { return opts_; }
    const std::vector<Example>& train_split() const { return train_; }
    std::size_t features() const { return opts_.frames * opts_.bands; }

    SearchSpace default_space() const { return specaugment_space(); }

    State init_state(Rng&) const { return State{std::vector<double>(opts_.classes * (features() + 1), 0.0)}; }

    State train(const State& s, const HyperparamVector& h, std::size_t num_updates, Rng& rng) const {
        const MaskPolicy policy = MaskPolicy::from_hparams(h);
        const std::size_t k = opts_.classes, d = features();
        State out = s;
        std::vector<Spectrogram> batch(opts_.batch);
        std::vector<std::size_t> labels(opts_.batch);
        std::vector<double> grad(out.weights.size()), probs(k);
        for (std::size_t u = 0; u < num_updates; ++u) {
            for (std::size_t b = 0; b < opts_.batch; ++b) {
                const auto& ex = train_[rng.uniform_int<std::size_t>(0, train_.size() - 1)];
                batch[b] = ex.spec;
                labels[b] = ex.label;
            }
            if (opts_.augment) specaugment_batch(batch, policy, rng);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = 0; b < opts_.batch; ++b) {
                softmax(out, batch[b], probs);
                for (std::size_t c = 0; c < k; ++c) {
                    const double g = probs[c] - (c == labels[b] ? 1.0 : 0.0);
                    double* row = grad.data() + c * (d + 1);
                    for (std::size_t j = 0; j < d; ++j) row[j] += g * batch[b].data[j];
                    row[d] += g;
                }
            }
            const double scale = opts_.step_size / static_cast<double>(opts_.batch);
            for (std::size_t j = 0; j < grad.size(); ++j) out.weights[j] -= scale * grad[j];
        }
        return out;
    }

    /// Mean cross-entropy on the selection split.
    double evaluate(const State& s) const { return cross_entropy(s, select_); }

    std::map<std::string, double> metrics(const State& s) const {
        return {{"report", cross_entropy(s, report_)}, {"accuracy", accuracy(s, report_)}};
    }

    std::string serialize(const State& s) const { return pack_doubles(s.weights); }
    State deserialize(std::string_view bytes) const {
        auto w = unpack_doubles(bytes);
        if (w.size() != opts_.classes * (features() + 1)) throw std::invalid_argument("spectoy: bad state blob");
        return State{std::move(w)};
    }

    /// Binary dump: per example a uint64 label then frames * bands doubles.
    void save_dataset(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        for (const auto* split : {&train_, &select_, &report_}) {
            for (const auto& ex : *split) {
                std::uint64_t label = ex.label;
                out.write(reinterpret_cast<const char*>(&label), sizeof label);
                auto blob = pack_doubles(ex.spec.data);
                out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
            }
        }
    }

private:
    std::vector<Example> make_split(std::size_t n, Rng& rng) const {
        std::vector<Example> out(n);
        const std::size_t t = opts_.frames, f = opts_.bands, k = opts_.classes;
        for (std::size_t i = 0; i < n; ++i) {
            auto& ex = out[i];
            ex.label = i % k;
            ex.spec = Spectrogram(t, f);
            for (auto& v : ex.spec.data) v = opts_.noise * rng.normal();
            // class c: a 3-band tone centred on its own band, lasting a random quarter-to-half of the utterance
            const std::size_t centre = 1 + (ex.label * (f - 2)) / k + (f - 2) / (2 * k);
            const std::size_t len = rng.uniform_int<std::size_t>(std::max<std::size_t>(1, t / 4), std::max<std::size_t>(1, t / 2));
            const std::size_t start = rng.uniform_int<std::size_t>(0, t - len);
            for (std::size_t tt = start; tt < start + len; ++tt)
                for (std::size_t ff = centre - 1; ff <= centre + 1 && ff < f; ++ff) ex.spec.at(tt, ff) += opts_.amplitude;
        }
        return out;
    }

    void softmax(const State& s, const Spectrogram& x, std::vector<double>& probs) const {
        const std::size_t k = opts_.classes, d = features();
        double mx = -INFINITY;
        for (std::size_t c = 0; c < k; ++c) {
            const double* row = s.weights.data() + c * (d + 1);
            double z = row[d];
            for (std::size_t j = 0; j < d; ++j) z += row[j] * x.data[j];
            probs[c] = z;
            mx = std::max(mx, z);
        }
        double sum = 0.0;
        for (auto& p : probs) sum += (p = std::exp(p - mx));
        for (auto& p : probs) p /= sum;
    }

    double cross_entropy(const State& s, const std::vector<Example>& split) const {
        std::vector<double> probs(opts_.classes);
        double acc = 0.0;
        for (const auto& ex : split) {
            softmax(s, ex.spec, probs);
            acc -= std::log(std::max(probs[ex.label], 1e-300));
        }
        return acc / static_cast<double>(split.size());
    }

    double accuracy(const State& s, const std::vector<Example>& split) const {
        std::vector<double> probs(opts_.classes);
        std::size_t hits = 0;
        for (const auto& ex : split) {
            softmax(s, ex.spec, probs);
            hits += static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin()) == ex.label;
        }
        return static_cast<double>(hits) / static_cast<double>(split.size());
    }

    Options opts_;
    std::vector<Example> train_, select_, report_;
};

}  // namespace pbt::tasks
