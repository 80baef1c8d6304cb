// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include "pbt/analysis.hpp"
#include "pbt/hparam.hpp"
#include "pbt/population.hpp"
#include "pbt/random.hpp"
#include "pbt/state_store.hpp"
#include "pbt/tasks/trainable.hpp"

namespace pbt {

enum class RunMode { Async, Deterministic };

inline const char* mode_name(RunMode m) { return m == RunMode::Async ? "async" : "deterministic"; }

struct RunConfig {
    std::size_t population_size = 8;
    std::size_t updates_per_step = 2200;
    int max_generations = 160;
    std::size_t workers = 8;
    std::uint64_t seed = 0;
    SearchSpace search_space;
    double mutation_probability = 1.0;
    SelectionConfig selection;
    RunMode mode = RunMode::Async;
    std::optional<HyperparamVector> fixed_hparams;  // baseline mode: no mutation
    std::optional<double> max_wall_seconds;
    std::filesystem::path run_dir;                  // empty: keep everything in memory

    void validate() const {
        if (population_size < 2) throw std::invalid_argument("population_size must be >= 2");
        if (workers < 1) throw std::invalid_argument("workers must be >= 1");
        if (updates_per_step < 1) throw std::invalid_argument("updates_per_step must be >= 1");
        if (max_generations < 0) throw std::invalid_argument("max_generations must be >= 0");
        if (!(mutation_probability >= 0.0 && mutation_probability <= 1.0))
            throw std::invalid_argument("mutation_probability must lie in [0, 1]");
        if (!(selection.handicap >= 0.0 && selection.handicap <= 1.0))
            throw std::invalid_argument("handicap must lie in [0, 1]");
        if (selection.rank_generations < 1 || selection.initiator_generations < 1 || selection.opponent_generations < 1)
            throw std::invalid_argument("selection windows must be >= 1 generation");
        if (max_wall_seconds && !(*max_wall_seconds > 0.0)) throw std::invalid_argument("max_wall_seconds must be > 0");
        validate_space(search_space);
        if (fixed_hparams) validate_vector(search_space, *fixed_hparams);
    }
};

struct RunSummary {
    std::size_t total_checkpoints = 0;
    std::size_t evaluated_checkpoints = 0;
    std::optional<int> generations_completed;
    std::map<std::string, CheckpointId> best_checkpoint;  // per metric, in the last completed generation
    std::optional<double> best_loss;
    std::vector<std::size_t> evaluated_per_generation;
    double wall_time_seconds = 0.0;
    bool aborted = false;
};

/// Test hooks. `abort_after_reports` stops every worker abruptly after that many
/// results, leaving in-flight records pending, as a crash would.
struct RunControl {
    std::optional<std::size_t> abort_after_reports;
    std::atomic<bool>* stop_flag = nullptr;
};

/// One run per directory: an exclusive `lock` file holding the owner's pid.
/// A lock left behind by a dead process is taken over.
class RunDirLock {
public:
    explicit RunDirLock(const std::filesystem::path& dir) : path_(dir / "lock") {
        for (int attempt = 0; attempt < 2; ++attempt) {
            int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
            if (fd >= 0) {
                auto pid = std::to_string(::getpid()) + "\n";
                [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
                ::close(fd);
                return;
            }
            std::ifstream in(path_);
            long owner = 0;
            in >> owner;
            if (owner > 0 && owner != ::getpid() && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno != ESRCH))
                throw std::runtime_error("run directory is locked by process " + std::to_string(owner));
            std::filesystem::remove(path_);
        }
        throw std::runtime_error("cannot acquire lock " + path_.string());
    }
    ~RunDirLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    RunDirLock(const RunDirLock&) = delete;
    RunDirLock& operator=(const RunDirLock&) = delete;

private:
    std::filesystem::path path_;
};

inline RunSummary summarize(const PopulationLog& log) {
    RunSummary s;
    auto records = log.snapshot();
    s.total_checkpoints = records.size();
    for (const auto& r : records) s.evaluated_checkpoints += r.evaluated();
    s.generations_completed = analysis::last_completed_generation(records);
    s.evaluated_per_generation = log.evaluated_per_generation();
    if (s.evaluated_checkpoints == 0) return s;
    auto best = analysis::best_checkpoint(records, "loss");
    s.best_checkpoint["loss"] = best.id;
    s.best_loss = best.loss;
    std::set<std::string> metrics;
    for (const auto& r : records)
        for (const auto& [name, _] : r.metrics) metrics.insert(name);
    for (const auto& m : metrics) {
        try {
            s.best_checkpoint[m] = analysis::best_checkpoint(records, m).id;
        } catch (const std::runtime_error&) {
        }
    }
    return s;
}

inline void write_summary(const std::filesystem::path& path, const RunSummary& s) {
    std::ofstream out(path, std::ios::trunc);
    out << "total_checkpoints=" << s.total_checkpoints << '\n';
    out << "evaluated_checkpoints=" << s.evaluated_checkpoints << '\n';
    out << "generations_completed=" << (s.generations_completed ? std::to_string(*s.generations_completed) : "none") << '\n';
    out << "best_loss=" << (s.best_loss ? format_number(*s.best_loss) : "none") << '\n';
    for (const auto& [metric, id] : s.best_checkpoint) out << "best_checkpoint." << metric << '=' << id << '\n';
    out << "evaluated_per_generation=";
    for (std::size_t g = 0; g < s.evaluated_per_generation.size(); ++g)
        out << (g ? "," : "") << s.evaluated_per_generation[g];
    out << '\n';
    out << "wall_time_seconds=" << format_number(s.wall_time_seconds) << '\n';
    out << "aborted=" << (s.aborted ? 1 : 0) << '\n';
}

namespace detail {

inline constexpr std::uint64_t kSeedStream = 0x5eed;
inline constexpr std::uint64_t kWorkerStream = 0x3012;
inline constexpr std::uint64_t kSchedulerStream = 0x5c4e;

template <typename Task>
concept PersistsDataset = requires(const Task& t, const std::filesystem::path& p) { t.save_dataset(p); };

/// The worker loop of a single training node, split into a claim phase and a
/// completion phase so the deterministic scheduler can interleave workers.
template <Trainable Task>
class Worker {
public:
    Worker(int index, const Task& task, PopulationLog& log, StateStore& store, const RunConfig& cfg, Rng rng)
        : index_(index), task_(task), log_(log), store_(store), cfg_(cfg), rng_(std::move(rng)) {}

    bool busy() const { return job_.has_value(); }

    /// find_parent_to_train + mutate + register the pending child. False if nothing is available yet.
    bool claim() {
        if (auto orphan = log_.claim_orphan()) {
            job_ = Job{log_.get(*orphan->parent), false, *orphan};
            return true;
        }
        auto choice = log_.find_parent_to_train(rng_);
        if (!choice) return false;
        HyperparamVector h = cfg_.fixed_hparams ? *cfg_.fixed_hparams
                                                : mutate(cfg_.search_space, choice->parent.hparams, rng_, cfg_.mutation_probability);
        auto child = log_.create_child(choice->parent.id, std::move(h), index_, rng_.draws());
        job_ = Job{choice->parent, choice->needs_evaluation, std::move(child)};
        return true;
    }

    /// train + evaluate + report_result for the claimed child.
    void complete() {
        auto job = std::move(*job_);
        job_.reset();
        auto parent_state = task_.deserialize(store_.get(job.parent.state_ref));
        if (job.evaluate_parent) {
            log_.report_result(job.parent.id, safe_evaluate(parent_state), job.parent.state_ref,
                               task_metrics(task_, parent_state));
        }
        typename Task::State next = parent_state;
        double loss = std::numeric_limits<double>::infinity();
        try {
            next = task_.train(parent_state, job.child.hparams, cfg_.updates_per_step, rng_);
            loss = safe_evaluate(next);
        } catch (const std::exception&) {
            next = parent_state;
        }
        auto ref = store_.put(job.child.id, task_.serialize(next));
        std::map<std::string, double> metrics;
        if (std::isfinite(loss)) metrics = task_metrics(task_, next);
        log_.report_result(job.child.id, loss, std::move(ref), std::move(metrics));
    }

private:
    struct Job {
        CheckpointRecord parent;
        bool evaluate_parent = false;
        CheckpointRecord child;
    };

    double safe_evaluate(const typename Task::State& s) const {
        try {
            double v = task_.evaluate(s);
            return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
        } catch (const std::exception&) {
            return std::numeric_limits<double>::infinity();
        }
    }

    int index_;
    const Task& task_;
    PopulationLog& log_;
    StateStore& store_;
    const RunConfig& cfg_;
    Rng rng_;
    std::optional<Job> job_;
};

template <Trainable Task>
class Runner {
public:
    Runner(const RunConfig& cfg, const Task& task, PopulationLog& log, StateStore& store, RunControl* control,
           std::uint64_t stream_epoch)
        : cfg_(cfg), task_(task), log_(log), store_(store), control_(control), epoch_(stream_epoch) {}

    RunSummary run() {
        const auto start = std::chrono::steady_clock::now();
        deadline_ = cfg_.max_wall_seconds
                        ? std::optional(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                    std::chrono::duration<double>(*cfg_.max_wall_seconds)))
                        : std::nullopt;
        if (cfg_.mode == RunMode::Deterministic) run_deterministic();
        else run_async();
        auto summary = summarize(log_);
        summary.aborted = aborted_.load();
        summary.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return summary;
    }

private:
    Worker<Task> make_worker(std::size_t i) {
        return Worker<Task>(static_cast<int>(i), task_, log_, store_, cfg_,
                            Rng::fork(cfg_.seed, i + (epoch_ << 20), kWorkerStream));
    }

    bool finished() const {
        auto g = log_.last_completed_generation();
        if (g && *g >= cfg_.max_generations) return true;
        if (deadline_ && std::chrono::steady_clock::now() >= *deadline_) return true;
        if (control_ && control_->stop_flag && control_->stop_flag->load()) return true;
        return false;
    }

    // Counts completions; true once the crash hook fires.
    bool note_completion() {
        auto n = ++completions_;
        if (control_ && control_->abort_after_reports && n >= *control_->abort_after_reports) {
            aborted_ = true;
            log_.notify_all();
        }
        return aborted_.load();
    }

    void run_async() {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < cfg_.workers; ++i) {
            threads.emplace_back([this, i] {
                auto worker = make_worker(i);
                while (!aborted_ && !finished()) {
                    auto version = log_.version();
                    if (!worker.claim()) {
                        log_.wait_for_change(version, std::chrono::milliseconds(20));
                        continue;
                    }
                    worker.complete();
                    if (note_completion()) return;
                }
            });
        }
        for (auto& t : threads) t.join();
    }

    // Seeded round-robin over virtual workers; each turn advances one worker by one phase.
    void run_deterministic() {
        std::vector<Worker<Task>> workers;
        for (std::size_t i = 0; i < cfg_.workers; ++i) workers.push_back(make_worker(i));
        Rng sched = Rng::fork(cfg_.seed, epoch_, kSchedulerStream);
        std::vector<std::size_t> order(workers.size());
        std::iota(order.begin(), order.end(), 0);
        while (true) {
            const bool stop = finished();
            bool any_busy = false;
            std::shuffle(order.begin(), order.end(), sched);
            for (auto i : order) {
                auto& w = workers[i];
                if (w.busy()) {
                    w.complete();
                    if (note_completion()) return;
                } else if (!stop) {
                    w.claim();
                }
                any_busy = any_busy || w.busy();
            }
            if (stop && !any_busy) return;
        }
    }

    const RunConfig& cfg_;
    const Task& task_;
    PopulationLog& log_;
    StateStore& store_;
    RunControl* control_;
    std::uint64_t epoch_;
    std::optional<std::chrono::steady_clock::time_point> deadline_;
    std::atomic<std::size_t> completions_{0};
    std::atomic<bool> aborted_{false};
};

}  // namespace detail

/// In-memory population plus blob store for runs without a directory.
struct Population {
    std::unique_ptr<PopulationLog> log;
    std::unique_ptr<StateStore> store;
};

/// Creates `population_size` generation-0 seeds from the search space's init
/// values (or the fixed vector) with independently initialised states.
template <Trainable Task>
void create_seeds(const RunConfig& cfg, const Task& task, PopulationLog& log, StateStore& store) {
    HyperparamVector h0 = cfg.fixed_hparams ? *cfg.fixed_hparams : initial_vector(cfg.search_space);
    for (std::size_t i = 0; i < cfg.population_size; ++i) {
        Rng rng = Rng::fork(cfg.seed, i, detail::kSeedStream);
        auto bytes = task.serialize(task.init_state(rng));
        auto ref = store.put(log.size(), bytes);
        log.create_seed(h0, ref);
    }
}

/// Drives the worker loop until `max_generations` generations are complete.
/// With a run directory the log, blobs and summary are persisted there.
template <Trainable Task>
RunSummary run(const RunConfig& cfg, const Task& task, RunControl* control = nullptr, Population* keep = nullptr) {
    cfg.validate();
    std::unique_ptr<PopulationLog> log = std::make_unique<PopulationLog>(cfg.selection);
    std::unique_ptr<StateStore> store;
    std::optional<RunDirLock> lock;
    if (!cfg.run_dir.empty()) {
        std::filesystem::create_directories(cfg.run_dir);
        if (std::filesystem::exists(cfg.run_dir / "population.log"))
            throw std::runtime_error("run directory " + cfg.run_dir.string() + " already holds a population log");
        lock.emplace(cfg.run_dir);
        store = std::make_unique<DirectoryStateStore>(cfg.run_dir);
        log->attach_new(cfg.run_dir / "population.log");
        if constexpr (detail::PersistsDataset<Task>) task.save_dataset(cfg.run_dir / "dataset");
    } else {
        store = std::make_unique<MemoryStateStore>();
    }
    create_seeds(cfg, task, *log, *store);
    auto summary = detail::Runner<Task>(cfg, task, *log, *store, control, 0).run();
    if (!cfg.run_dir.empty() && !summary.aborted) write_summary(cfg.run_dir / "summary", summary);
    if (keep) {
        keep->log = std::move(log);
        keep->store = std::move(store);
    }
    return summary;
}

/// Reloads `cfg.run_dir/population.log` (dropping a truncated tail) and keeps
/// training until `cfg.max_generations`. Pending records left by a crash are retrained.
template <Trainable Task>
RunSummary resume(const RunConfig& cfg, const Task& task, std::vector<std::string>* warnings = nullptr,
                  RunControl* control = nullptr) {
    cfg.validate();
    if (cfg.run_dir.empty()) throw std::invalid_argument("resume needs a run directory");
    RunDirLock lock(cfg.run_dir);
    auto log = PopulationLog::open(cfg.run_dir / "population.log", cfg.selection, warnings);
    DirectoryStateStore store(cfg.run_dir);
    if (log->size() == 0) create_seeds(cfg, task, *log, store);
    auto summary = detail::Runner<Task>(cfg, task, *log, store, control, log->size()).run();
    if (!summary.aborted) write_summary(cfg.run_dir / "summary", summary);
    return summary;
}

}  // namespace pbt
