// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbt/hparam.hpp"
#include "pbt/random.hpp"
#include "pbt/record.hpp"

namespace pbt {

struct SelectionConfig {
    double handicap = 0.25;
    int rank_generations = 2;       // percentile window: {g - 1, g}
    int initiator_generations = 3;  // initiators from {G - 2, G - 1, G}
    int opponent_generations = 2;   // opponents from {G - 1, G}
};

/// Matchup on precomputed percentiles: the initiator keeps the
/// parent slot unless the opponent beats it by more than the handicap.
inline bool initiator_wins(double pct_initiator, double pct_opponent, double handicap = 0.25) {
    return pct_initiator - handicap < pct_opponent;
}

/// A parent handed to a worker. `needs_evaluation` is set for a freshly claimed
/// generation-0 seed, which the worker evaluates before training its child.
struct ParentChoice {
    CheckpointRecord parent;
    bool needs_evaluation = false;
    std::optional<CheckpointId> initiator;
    std::optional<CheckpointId> opponent;
};

/// Append-only checkpoint registry. Every mutation is appended to the backing
/// file (when attached) as a full record line; the latest line per id wins.
///
/// All public operations are linearizable; none holds the lock across training.
class PopulationLog {
public:
    explicit PopulationLog(SelectionConfig cfg = {}) : cfg_(cfg) {}
    ~PopulationLog() {
        if (file_) std::fclose(file_);
    }
    PopulationLog(const PopulationLog&) = delete;
    PopulationLog& operator=(const PopulationLog&) = delete;

    const SelectionConfig& selection() const { return cfg_; }

    /// Starts a fresh log file at `path` (truncating any existing one).
    void attach_new(const std::filesystem::path& path) {
        std::lock_guard lk(mu_);
        if (file_) std::fclose(file_);
        file_ = std::fopen(path.c_str(), "wb");
        if (!file_) throw std::runtime_error("cannot open log file " + path.string());
        for (const auto& r : records_) write_line(r);
    }

    /// Parses a log file without modifying it. A truncated or unparseable final
    /// line is skipped and reported through `warnings`; `valid_bytes` receives the
    /// length of the well-formed prefix.
    static std::unique_ptr<PopulationLog> load(const std::filesystem::path& path, SelectionConfig cfg,
                                               std::vector<std::string>* warnings = nullptr,
                                               std::size_t* valid_bytes = nullptr) {
        auto log = std::make_unique<PopulationLog>(cfg);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read log file " + path.string());
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

        std::size_t pos = 0, good_end = 0, line_no = 0;
        while (pos < content.size()) {
            ++line_no;
            auto nl = content.find('\n', pos);
            std::string_view line(content.data() + pos, (nl == std::string::npos ? content.size() : nl) - pos);
            bool last = nl == std::string::npos || nl + 1 >= content.size();
            try {
                if (nl == std::string::npos) throw LogFormatError("missing line terminator");
                log->apply_loaded(decode_record(line));
                good_end = nl + 1;
            } catch (const LogFormatError& e) {
                if (!last)
                    throw LogFormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
                if (warnings)
                    warnings->push_back(path.string() + ":" + std::to_string(line_no) +
                                        ": discarded truncated trailing record (" + e.what() + ")");
            }
            if (nl == std::string::npos) break;
            pos = nl + 1;
        }
        if (valid_bytes) *valid_bytes = good_end;
        return log;
    }

    /// Loads an existing log, cuts a damaged tail from the file, and keeps appending to it.
    static std::unique_ptr<PopulationLog> open(const std::filesystem::path& path, SelectionConfig cfg,
                                               std::vector<std::string>* warnings = nullptr) {
        std::size_t good_end = 0;
        auto log = load(path, cfg, warnings, &good_end);
        if (good_end != std::filesystem::file_size(path)) std::filesystem::resize_file(path, good_end);
        log->file_ = std::fopen(path.c_str(), "ab");
        if (!log->file_) throw std::runtime_error("cannot append to log file " + path.string());
        return log;
    }

    CheckpointRecord create_seed(HyperparamVector hparams, std::string state_ref) {
        std::lock_guard lk(mu_);
        CheckpointRecord r;
        r.id = records_.size();
        r.generation = 0;
        r.hparams = std::move(hparams);
        r.state_ref = std::move(state_ref);
        r.seq = r.id;
        append_new(r);
        return r;
    }

    /// Registers a pending child of `parent_id`; the calling worker owns it until reported.
    CheckpointRecord create_child(CheckpointId parent_id, HyperparamVector hparams, int worker, std::uint64_t draws) {
        std::lock_guard lk(mu_);
        const auto& parent = checked(parent_id);
        CheckpointRecord r;
        r.id = records_.size();
        r.generation = parent.generation + 1;
        r.parent = parent_id;
        r.hparams = std::move(hparams);
        r.seq = r.id;
        r.worker = worker;
        r.draws = draws;
        owned_.insert(r.id);
        append_new(r);
        return r;
    }

    /// Write-once: records the loss (non-finite becomes +inf) and state locator.
    void report_result(CheckpointId id, double loss, std::string state_ref, std::map<std::string, double> metrics = {}) {
        {
            std::lock_guard lk(mu_);
            if (id >= records_.size()) throw std::out_of_range("report_result: unknown checkpoint " + std::to_string(id));
            auto& r = records_[id];
            if (r.loss) throw std::logic_error("report_result: checkpoint " + std::to_string(id) + " already reported");
            r.loss = std::isfinite(loss) ? loss : std::numeric_limits<double>::infinity();
            r.state_ref = std::move(state_ref);
            r.metrics = std::move(metrics);
            owned_.erase(id);
            ++evaluated_count_;
            auto g = static_cast<std::size_t>(r.generation);
            if (evaluated_per_gen_.size() <= g) evaluated_per_gen_.resize(g + 1, 0);
            ++evaluated_per_gen_[g];
            write_line(r);
            ++version_;
        }
        cv_.notify_all();
    }

    std::optional<int> last_completed_generation() const {
        std::lock_guard lk(mu_);
        return last_completed_locked();
    }

    double rank_percentile(CheckpointId id) const {
        std::lock_guard lk(mu_);
        return percentile_locked(checked(id));
    }

    /// Returns the winner of initiator vs opponent, both evaluated.
    CheckpointRecord matchup_winner(const CheckpointRecord& initiator, const CheckpointRecord& opponent) const {
        std::lock_guard lk(mu_);
        return matchup_locked(checked(initiator.id), checked(opponent.id));
    }

    /// Uniform draw from evaluated, viable, non-initiated records of generations
    /// {G - 2, ..., G}; the draw is marked initiated before the lock is released.
    std::optional<CheckpointRecord> sample_initiator(Rng& rng) {
        std::lock_guard lk(mu_);
        auto g = last_completed_locked();
        if (!g) return std::nullopt;
        auto pool = initiator_pool_locked(*g, *g);
        if (pool.empty()) return std::nullopt;
        return mark_initiated_locked(pool[rng.uniform_int<std::size_t>(0, pool.size() - 1)]);
    }

    /// Uniform over evaluated, viable records of generations {G - 1, G}, excluding the initiator.
    std::optional<CheckpointRecord> sample_opponent(const CheckpointRecord& initiator, Rng& rng) const {
        std::lock_guard lk(mu_);
        auto g = last_completed_locked();
        if (!g) return std::nullopt;
        auto pool = opponent_pool_locked(*g, initiator.id);
        if (pool.empty()) return std::nullopt;
        return records_[pool[rng.uniform_int<std::size_t>(0, pool.size() - 1)]];
    }

    /// Non-blocking parent selection. Unclaimed seeds go first; afterwards an
    /// initiator is drawn and plays a matchup against a random opponent.
    /// Returns nullopt when the caller should wait for in-flight steps.
    std::optional<ParentChoice> find_parent_to_train(Rng& rng) {
        std::lock_guard lk(mu_);
        for (auto& r : records_) {
            if (r.generation != 0) break;
            if (!r.loss && !owned_.count(r.id)) {
                owned_.insert(r.id);
                return ParentChoice{r, true, std::nullopt, std::nullopt};
            }
        }
        auto g = last_completed_locked();
        if (!g) return std::nullopt;

        auto pool = initiator_pool_locked(*g, *g);
        if (pool.empty()) pool = initiator_pool_locked(*g, *g + 1);
        if (pool.empty()) {
            if (!owned_.empty()) return std::nullopt;
            // Nothing eligible and nothing in flight: continue from the best record of generation G.
            return ParentChoice{records_[best_of_generation_locked(*g)], false, std::nullopt, std::nullopt};
        }
        const auto& initiator = mark_initiated_locked(pool[rng.uniform_int<std::size_t>(0, pool.size() - 1)]);
        auto opp_pool = opponent_pool_locked(*g, initiator.id);
        if (opp_pool.empty()) return ParentChoice{initiator, false, initiator.id, std::nullopt};
        const auto& opponent = records_[opp_pool[rng.uniform_int<std::size_t>(0, opp_pool.size() - 1)]];
        return ParentChoice{matchup_locked(initiator, opponent), false, initiator.id, opponent.id};
    }

    /// Claims a pending non-seed record nobody owns (left over from a crashed run).
    std::optional<CheckpointRecord> claim_orphan() {
        std::lock_guard lk(mu_);
        if (evaluated_count_ + owned_.size() == records_.size()) return std::nullopt;
        for (const auto& r : records_) {
            if (r.generation > 0 && !r.loss && !owned_.count(r.id)) {
                owned_.insert(r.id);
                return r;
            }
        }
        return std::nullopt;
    }

    /// Drops ownership of a pending record without reporting it (it becomes an orphan).
    void release(CheckpointId id) {
        std::lock_guard lk(mu_);
        owned_.erase(id);
    }

    /// Blocks until the log changes after `version` or the timeout elapses.
    void wait_for_change(std::uint64_t version, std::chrono::milliseconds timeout) const {
        std::unique_lock lk(mu_);
        cv_.wait_for(lk, timeout, [&] { return version_ != version; });
    }
    void notify_all() const { cv_.notify_all(); }
    std::uint64_t version() const {
        std::lock_guard lk(mu_);
        return version_;
    }

    CheckpointRecord get(CheckpointId id) const {
        std::lock_guard lk(mu_);
        return checked(id);
    }
    std::vector<CheckpointRecord> snapshot() const {
        std::lock_guard lk(mu_);
        return records_;
    }
    std::size_t size() const {
        std::lock_guard lk(mu_);
        return records_.size();
    }
    std::size_t in_flight() const {
        std::lock_guard lk(mu_);
        return owned_.size();
    }
    std::size_t pending() const {
        std::lock_guard lk(mu_);
        return records_.size() - evaluated_count_;
    }
    std::vector<std::size_t> evaluated_per_generation() const {
        std::lock_guard lk(mu_);
        return evaluated_per_gen_;
    }

private:
    const CheckpointRecord& checked(CheckpointId id) const {
        if (id >= records_.size()) throw std::out_of_range("unknown checkpoint " + std::to_string(id));
        return records_[id];
    }

    void write_line(const CheckpointRecord& r) {
        if (!file_) return;
        auto line = encode_record(r);
        line += '\n';
        if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0)
            throw std::runtime_error("population log write failed");
    }

    void append_new(const CheckpointRecord& r) {
        records_.push_back(r);
        write_line(r);
        ++version_;
    }

    void apply_loaded(const CheckpointRecord& r) {
        if (r.id == records_.size()) {
            if (r.parent) {
                if (*r.parent >= r.id) throw LogFormatError("parent does not precede child");
                if (records_[*r.parent].generation + 1 != r.generation) throw LogFormatError("generation mismatch");
            } else if (r.generation != 0) {
                throw LogFormatError("non-root record without parent");
            }
            records_.push_back(CheckpointRecord{});
            records_.back() = r;
            records_.back().loss.reset();
            records_.back().initiated = false;
        } else if (r.id > records_.size()) {
            throw LogFormatError("record id " + std::to_string(r.id) + " skips ahead");
        }
        auto& cur = records_[r.id];
        if (cur.generation != r.generation || cur.parent != r.parent || cur.hparams != r.hparams || cur.seq != r.seq)
            throw LogFormatError("immutable fields of record " + std::to_string(r.id) + " changed");
        if (cur.loss && (!r.loss || *cur.loss != *r.loss)) throw LogFormatError("loss rewritten");
        if (cur.initiated && !r.initiated) throw LogFormatError("initiated flag cleared");
        if (!cur.loss && r.loss) {
            ++evaluated_count_;
            auto g = static_cast<std::size_t>(r.generation);
            if (evaluated_per_gen_.size() <= g) evaluated_per_gen_.resize(g + 1, 0);
            ++evaluated_per_gen_[g];
        }
        cur = r;
    }

    std::optional<int> last_completed_locked() const {
        for (std::size_t g = evaluated_per_gen_.size(); g-- > 0;)
            if (evaluated_per_gen_[g] >= 2) return static_cast<int>(g);
        return std::nullopt;
    }

    double percentile_locked(const CheckpointRecord& r) const {
        if (!r.loss) throw std::logic_error("rank_percentile: checkpoint " + std::to_string(r.id) + " not evaluated");
        const int lo = std::max(0, r.generation - cfg_.rank_generations + 1);
        std::size_t n = 0, rank = 0;
        for (const auto& o : records_) {
            if (!o.loss || o.generation < lo || o.generation > r.generation) continue;
            ++n;
            if (*o.loss < *r.loss || (*o.loss == *r.loss && o.id < r.id)) ++rank;
        }
        if (n <= 1) return 0.5;
        return static_cast<double>(rank) / static_cast<double>(n - 1);
    }

    const CheckpointRecord& matchup_locked(const CheckpointRecord& init, const CheckpointRecord& opp) const {
        return initiator_wins(percentile_locked(init), percentile_locked(opp), cfg_.handicap) ? init : opp;
    }

    std::vector<CheckpointId> initiator_pool_locked(int g, int upper) const {
        const int lo = std::max(0, g - cfg_.initiator_generations + 1);
        std::vector<CheckpointId> pool;
        for (const auto& r : records_)
            if (r.viable() && !r.initiated && r.generation >= lo && r.generation <= upper) pool.push_back(r.id);
        return pool;
    }

    std::vector<CheckpointId> opponent_pool_locked(int g, CheckpointId exclude) const {
        const int lo = std::max(0, g - cfg_.opponent_generations + 1);
        std::vector<CheckpointId> pool;
        for (const auto& r : records_)
            if (r.viable() && r.id != exclude && r.generation >= lo && r.generation <= g) pool.push_back(r.id);
        return pool;
    }

    CheckpointId best_of_generation_locked(int g) const {
        std::optional<CheckpointId> best;
        for (const auto& r : records_) {
            if (r.generation != g || !r.loss) continue;
            if (!best || *r.loss < *records_[*best].loss) best = r.id;
        }
        return *best;
    }

    const CheckpointRecord& mark_initiated_locked(CheckpointId id) {
        auto& r = records_[id];
        r.initiated = true;
        write_line(r);
        ++version_;
        return r;
    }

    SelectionConfig cfg_;
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::vector<CheckpointRecord> records_;  // index == id
    std::vector<std::size_t> evaluated_per_gen_;
    std::set<CheckpointId> owned_;
    std::size_t evaluated_count_ = 0;
    std::uint64_t version_ = 0;
    std::FILE* file_ = nullptr;
};

}  // namespace pbt
