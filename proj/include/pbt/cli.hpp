// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbt/analysis.hpp"
#include "pbt/config.hpp"
#include "pbt/export.hpp"
#include "pbt/orchestrator.hpp"

namespace pbt::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

enum class Verbosity { Quiet, Info, Debug };

/// PBT_LOG_LEVEL=quiet|info|debug (default info).
inline Verbosity verbosity() {
    const char* v = std::getenv("PBT_LOG_LEVEL");
    if (!v) return Verbosity::Info;
    std::string s(v);
    if (s == "quiet" || s == "0") return Verbosity::Quiet;
    if (s == "debug" || s == "2") return Verbosity::Debug;
    return Verbosity::Info;
}

/// Command-line values that override scalar config fields.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<std::size_t> population_size;
    std::optional<int> max_generations;
    std::optional<std::size_t> updates_per_step;
    std::optional<std::string> mode;
    std::optional<double> handicap;
    std::optional<std::string> output_dir;
};

inline void apply(ConfigFile& c, const Overrides& o) {
    auto& r = c.run;
    if (o.seed) r.seed = *o.seed;
    if (o.workers) r.workers = *o.workers;
    if (o.population_size) r.population_size = *o.population_size;
    if (o.max_generations) r.max_generations = *o.max_generations;
    if (o.updates_per_step) r.updates_per_step = *o.updates_per_step;
    if (o.handicap) r.selection.handicap = *o.handicap;
    if (o.output_dir) r.run_dir = *o.output_dir;
    if (o.mode) {
        if (*o.mode == "async") r.mode = RunMode::Async;
        else if (*o.mode == "deterministic") r.mode = RunMode::Deterministic;
        else throw ConfigError("--mode must be 'async' or 'deterministic'");
    }
    try {
        r.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(c.source.string() + ": " + e.what());
    }
}

inline ConfigFile resolve(const std::filesystem::path& path, const Overrides& o) {
    auto c = load_config(path);
    apply(c, o);
    return c;
}

inline void print_summary(std::ostream& out, const RunSummary& s, const std::filesystem::path& dir) {
    out << "run directory: " << dir.string() << '\n';
    out << "checkpoints: " << s.total_checkpoints << " (" << s.evaluated_checkpoints << " evaluated)\n";
    out << "generations completed: " << (s.generations_completed ? std::to_string(*s.generations_completed) : "none") << '\n';
    if (s.best_loss) out << "best loss: " << format_number(*s.best_loss) << " (checkpoint " << s.best_checkpoint.at("loss") << ")\n";
    out << "wall time: " << format_number(s.wall_time_seconds) << " s\n";
}

namespace detail {

inline int start_run(ConfigFile c, std::ostream& out, std::ostream& err) {
    if (c.run.run_dir.empty()) {
        err << "error: no output directory (set output_dir or pass --output-dir)\n";
        return kUsage;
    }
    const auto dir = c.run.run_dir;
    if (std::filesystem::exists(dir / "population.log")) {
        err << "error: " << dir.string() << " already holds a run; use 'resume' or pick another directory\n";
        return kUsage;
    }
    try {
        std::filesystem::create_directories(dir);
        {
            std::ofstream cfg(dir / "config");
            cfg << emit_config(c);
        }
        auto summary = with_task(c, [&](const auto& task) { return pbt::run(c.run, task); });
        if (verbosity() != Verbosity::Quiet) print_summary(out, summary, dir);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kOk;
}

inline std::vector<CheckpointRecord> read_records(const std::filesystem::path& run_dir, std::ostream& err) {
    std::vector<std::string> warnings;
    auto log = PopulationLog::load(run_dir / "population.log", {}, &warnings);
    if (verbosity() != Verbosity::Quiet)
        for (const auto& w : warnings) err << "warning: " << w << '\n';
    return log->snapshot();
}

}  // namespace detail

/// `run CONFIG`: a full PBT run into the configured output directory.
inline int cmd_run(const std::filesystem::path& config_path, const Overrides& o, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    ConfigFile c;
    try {
        c = resolve(config_path, o);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
    return detail::start_run(std::move(c), out, err);
}

/// Source of the fixed vector for `baseline`: "init", "file:PATH" or "tail-average-of:RUN_DIR".
inline int cmd_baseline(const std::filesystem::path& config_path, const std::string& source, const Overrides& o,
                        std::optional<std::size_t> tail_k = std::nullopt, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
    ConfigFile c;
    try {
        c = resolve(config_path, o);
        const auto& space = c.run.search_space;
        HyperparamVector fixed;
        if (source == "init") {
            fixed = initial_vector(space);
        } else if (source.rfind("file:", 0) == 0) {
            std::filesystem::path file = source.substr(5);
            YAML::Node node;
            try {
                node = YAML::LoadFile(file.string());
            } catch (const YAML::Exception& e) {
                throw ConfigError(file.string() + ": cannot read hyperparameter file (" + e.what() + ")");
            }
            fixed = parse_hparam_map(file, node);
            check_hparams(file, space, fixed);
        } else if (source.rfind("tail-average-of:", 0) == 0) {
            std::filesystem::path run_dir = source.substr(16);
            if (!std::filesystem::exists(run_dir / "population.log")) {
                err << "error: no finished run at " << run_dir.string() << '\n';
                return kRuntime;
            }
            auto records = detail::read_records(run_dir, err);
            auto best = analysis::best_checkpoint(records);
            fixed = analysis::tail_average(analysis::extract_schedule(records, best.id), tail_k.value_or(c.tail_k));
            check_hparams(run_dir, space, fixed);
        } else {
            throw ConfigError("unknown hyperparameter source '" + source +
                              "' (expected init, file:PATH or tail-average-of:RUN_DIR)");
        }
        c.run.fixed_hparams = fixed;
        if (verbosity() != Verbosity::Quiet) {
            out << "fixed hyperparameters:";
            for (const auto& [k, v] : fixed) out << ' ' << k << '=' << format_number(v);
            out << '\n';
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return detail::start_run(std::move(c), out, err);
}

/// `resume RUN_DIR`: continue from the echoed config, optionally to a new generation bound.
inline int cmd_resume(const std::filesystem::path& run_dir, std::optional<int> max_generations,
                      std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    ConfigFile c;
    try {
        if (!std::filesystem::exists(run_dir / "population.log")) throw ConfigError(run_dir.string() + ": no population.log");
        c = load_config(run_dir / "config");
        c.run.run_dir = run_dir;
        if (max_generations) c.run.max_generations = *max_generations;
        c.run.validate();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
    try {
        std::vector<std::string> warnings;
        auto summary = with_task(c, [&](const auto& task) { return pbt::resume(c.run, task, &warnings); });
        if (verbosity() != Verbosity::Quiet) {
            for (const auto& w : warnings) err << "warning: " << w << '\n';
            print_summary(out, summary, run_dir);
        }
        if (max_generations) {
            std::ofstream cfg(run_dir / "config");
            cfg << emit_config(c);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kOk;
}

struct AnalyzeOptions {
    std::string subcommand;           // schedule | series | lowess | correlate | tail-average
    std::vector<std::string> args;    // parameter or metric names
    std::filesystem::path out_path;
    std::string format = "csv";
    double frac = 0.3;
    std::optional<CheckpointId> checkpoint;
    std::string metric = "loss";
    std::optional<std::size_t> tail_k;
};

/// Offline analysis of a run directory. Never writes inside the run directory's log.
inline int cmd_analyze(const std::filesystem::path& run_dir, const AnalyzeOptions& a, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
    ConfigFile c;
    analysis::Format format;
    try {
        format = analysis::format_from_name(a.format);
        if (!std::filesystem::exists(run_dir / "population.log")) throw ConfigError(run_dir.string() + ": no population.log");
        c = load_config(run_dir / "config");
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
    const auto& space = c.run.search_space;
    auto need_args = [&](std::size_t n) {
        if (a.args.size() != n)
            throw ConfigError("'" + a.subcommand + "' expects " + std::to_string(n) + " argument(s), got " +
                              std::to_string(a.args.size()));
    };
    auto need_param = [&](const std::string& name) {
        for (const auto& s : space)
            if (s.name == name) return;
        std::string names;
        for (const auto& s : space) names += (names.empty() ? "" : ", ") + s.name;
        throw ConfigError("unknown parameter '" + name + "'; valid parameters: " + names);
    };
    try {
        auto records = detail::read_records(run_dir, err);
        auto target = [&] {
            return a.checkpoint ? *a.checkpoint : analysis::best_checkpoint(records, a.metric).id;
        };
        if (a.subcommand == "schedule") {
            need_args(0);
            analysis::write_rows(a.out_path, analysis::schedule_rows(analysis::extract_schedule(records, target())), format);
        } else if (a.subcommand == "series") {
            need_args(1);
            need_param(a.args[0]);
            auto series = analysis::population_series(records, space, a.args[0]);
            analysis::write_rows(a.out_path, analysis::series_rows(series, a.args[0]), format);
        } else if (a.subcommand == "lowess") {
            need_args(1);
            need_param(a.args[0]);
            auto series = analysis::population_series(records, space, a.args[0]);
            std::vector<analysis::Point> pts;
            for (const auto& p : series) pts.push_back({static_cast<double>(p.generation), p.value});
            auto smooth = analysis::lowess(pts, a.frac);
            std::vector<analysis::Row> rows;
            for (std::size_t i = 0; i < series.size(); ++i)
                rows.push_back({series[i].generation, series[i].checkpoint, a.args[0] + "_lowess", smooth[i].y});
            analysis::write_rows(a.out_path, rows, format);
        } else if (a.subcommand == "correlate") {
            need_args(2);
            double r = analysis::metric_correlation(records, a.args[0], a.args[1]);
            std::size_t n = 0;
            for (const auto& rec : records)
                n += analysis::metric_value(rec, a.args[0]).has_value() && analysis::metric_value(rec, a.args[1]).has_value();
            std::ofstream f(a.out_path, std::ios::trunc);
            if (format == analysis::Format::Csv) {
                f << "metric_a,metric_b,n,pearson_r\n" << a.args[0] << ',' << a.args[1] << ',' << n << ',' << format_number(r) << '\n';
            } else {
                f << nlohmann::json{{"metric_a", a.args[0]}, {"metric_b", a.args[1]}, {"n", n}, {"pearson_r", r}}.dump(1) << '\n';
            }
            if (verbosity() != Verbosity::Quiet) out << "pearson r = " << format_number(r) << " over " << n << " checkpoints\n";
        } else if (a.subcommand == "tail-average") {
            need_args(0);
            auto id = target();
            auto avg = analysis::tail_average(analysis::extract_schedule(records, id), a.tail_k.value_or(c.tail_k));
            std::vector<analysis::Row> rows;
            for (const auto& [k, v] : avg) rows.push_back({records[id].generation, id, k, v});
            analysis::write_rows(a.out_path, rows, format);
        } else {
            throw ConfigError("unknown analysis '" + a.subcommand + "' (expected schedule, series, lowess, correlate or tail-average)");
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kOk;
}

}  // namespace pbt::cli
