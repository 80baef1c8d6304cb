// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "pbt/hparam.hpp"
#include "pbt/orchestrator.hpp"
#include "pbt/tasks/quadratic.hpp"
#include "pbt/tasks/regression.hpp"
#include "pbt/tasks/spectoy.hpp"

namespace pbt {

/// Config problem, already prefixed with "file:line:" when a location is known.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Declarative description of one run, as read from a YAML file.
struct ConfigFile {
    std::string task = "quadratic";
    YAML::Node task_options;        // validated by the task factory
    std::string search_space_name;  // "default", "table2", or "" when listed explicitly
    RunConfig run;
    std::size_t tail_k = 10;
    std::filesystem::path source;   // file the config came from (for messages)
};

namespace detail {

inline std::string where(const std::filesystem::path& file, const YAML::Node& node) {
    const auto m = node.Mark();
    if (m.line < 0) return file.string() + ": ";
    return file.string() + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1) + ": ";
}

template <typename T>
T scalar(const std::filesystem::path& file, const YAML::Node& node, const std::string& key) {
    if (!node.IsScalar()) throw ConfigError(where(file, node) + "'" + key + "' must be a scalar");
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(where(file, node) + "'" + key + "' has an invalid value '" + node.Scalar() + "'");
    }
}

template <typename T>
T positive(const std::filesystem::path& file, const YAML::Node& node, const std::string& key) {
    if (node.IsScalar() && !node.Scalar().empty() && node.Scalar().front() == '-')
        throw ConfigError(where(file, node) + "'" + key + "' must not be negative");
    return scalar<T>(file, node, key);
}

inline void reject_unknown(const std::filesystem::path& file, const YAML::Node& map, const std::set<std::string>& known,
                           const std::string& what) {
    if (!map || map.IsNull()) return;
    if (!map.IsMap()) throw ConfigError(where(file, map) + what + " must be a mapping");
    for (const auto& kv : map) {
        auto key = kv.first.as<std::string>();
        if (!known.count(key)) {
            std::string names;
            for (const auto& k : known) names += (names.empty() ? "" : ", ") + k;
            throw ConfigError(where(file, kv.first) + "unknown key '" + key + "' in " + what + " (expected one of: " + names + ")");
        }
    }
}

inline HyperparamSpec parse_spec(const std::filesystem::path& file, const YAML::Node& node) {
    reject_unknown(file, node, {"name", "init", "min", "max", "deltas", "fractional_count"}, "search_space entry");
    for (const char* req : {"name", "init", "min", "max", "deltas"})
        if (!node[req]) throw ConfigError(where(file, node) + "search_space entry is missing '" + req + "'");
    HyperparamSpec s;
    s.name = scalar<std::string>(file, node["name"], "name");
    s.init = scalar<double>(file, node["init"], "init");
    s.min = scalar<double>(file, node["min"], "min");
    s.max = scalar<double>(file, node["max"], "max");
    const auto& d = node["deltas"];
    if (d.IsSequence()) {
        for (const auto& v : d) s.deltas.push_back(scalar<double>(file, v, "deltas"));
    } else {
        s.deltas.push_back(scalar<double>(file, d, "deltas"));
    }
    if (node["fractional_count"]) s.fractional_count = scalar<bool>(file, node["fractional_count"], "fractional_count");
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where(file, node) + e.what());
    }
    return s;
}

}  // namespace detail

inline const std::vector<std::string>& known_tasks() {
    static const std::vector<std::string> names{"quadratic", "regression", "spectoy"};
    return names;
}

inline tasks::QuadraticTask::Options quadratic_options(const ConfigFile& c) {
    tasks::QuadraticTask::Options o;
    const auto& n = c.task_options;
    detail::reject_unknown(c.source, n, {"step_size", "theta0"}, "task_options");
    if (!n) return o;
    if (n["step_size"]) o.step_size = detail::scalar<double>(c.source, n["step_size"], "step_size");
    if (n["theta0"]) {
        const auto& t = n["theta0"];
        if (!t.IsSequence() || t.size() != 2) throw ConfigError(detail::where(c.source, t) + "'theta0' must be a 2-element list");
        o.theta0 = {detail::scalar<double>(c.source, t[0], "theta0"), detail::scalar<double>(c.source, t[1], "theta0")};
    }
    return o;
}

inline tasks::RegressionTask::Options regression_options(const ConfigFile& c) {
    tasks::RegressionTask::Options o;
    o.data_seed = c.run.seed;
    const auto& n = c.task_options;
    detail::reject_unknown(c.source, n,
                           {"dim", "n_train", "n_select", "n_heldout", "label_noise", "step_size", "sigma_max"},
                           "task_options");
    if (!n) return o;
    if (n["dim"]) o.dim = detail::positive<std::size_t>(c.source, n["dim"], "dim");
    if (n["n_train"]) o.n_train = detail::positive<std::size_t>(c.source, n["n_train"], "n_train");
    if (n["n_select"]) o.n_select = detail::positive<std::size_t>(c.source, n["n_select"], "n_select");
    if (n["n_heldout"]) o.n_heldout = detail::positive<std::size_t>(c.source, n["n_heldout"], "n_heldout");
    if (n["label_noise"]) o.label_noise = detail::scalar<double>(c.source, n["label_noise"], "label_noise");
    if (n["step_size"]) o.step_size = detail::scalar<double>(c.source, n["step_size"], "step_size");
    if (n["sigma_max"]) o.sigma_max = detail::scalar<double>(c.source, n["sigma_max"], "sigma_max");
    return o;
}

inline tasks::SpecToyTask::Options spectoy_options(const ConfigFile& c) {
    tasks::SpecToyTask::Options o;
    o.data_seed = c.run.seed;
    const auto& n = c.task_options;
    detail::reject_unknown(c.source, n,
                           {"frames", "bands", "classes", "n_train", "n_select", "n_report", "batch", "step_size",
                            "amplitude", "noise", "augment"},
                           "task_options");
    if (!n) return o;
    auto size = [&](const char* key, std::size_t& dst) {
        if (n[key]) dst = detail::positive<std::size_t>(c.source, n[key], key);
    };
    auto real = [&](const char* key, double& dst) {
        if (n[key]) dst = detail::scalar<double>(c.source, n[key], key);
    };
    size("frames", o.frames);
    size("bands", o.bands);
    size("classes", o.classes);
    size("n_train", o.n_train);
    size("n_select", o.n_select);
    size("n_report", o.n_report);
    size("batch", o.batch);
    real("step_size", o.step_size);
    real("amplitude", o.amplitude);
    real("noise", o.noise);
    if (n["augment"]) o.augment = detail::scalar<bool>(c.source, n["augment"], "augment");
    return o;
}

/// Builds the configured task and hands it to `fn` (a generic callable).
template <typename Fn>
decltype(auto) with_task(const ConfigFile& c, Fn&& fn) {
    try {
        if (c.task == "quadratic") return fn(tasks::QuadraticTask(quadratic_options(c)));
        if (c.task == "regression") return fn(tasks::RegressionTask(regression_options(c)));
        if (c.task == "spectoy") return fn(tasks::SpecToyTask(spectoy_options(c)));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(c.source.string() + ": task '" + c.task + "': " + e.what());
    }
    throw ConfigError(c.source.string() + ": unknown task '" + c.task + "' (expected quadratic, regression or spectoy)");
}

inline HyperparamVector parse_hparam_map(const std::filesystem::path& file, const YAML::Node& node) {
    if (!node.IsMap()) throw ConfigError(detail::where(file, node) + "hyperparameter values must be a mapping");
    HyperparamVector h;
    for (const auto& kv : node) {
        auto key = kv.first.as<std::string>();
        h.set(key, detail::scalar<double>(file, kv.second, key));
    }
    return h;
}

/// Checks `h` against `space`, naming the offending value and the clamped alternative.
inline void check_hparams(const std::filesystem::path& file, const SearchSpace& space, const HyperparamVector& h) {
    for (const auto& [name, v] : h) {
        bool known = false;
        for (const auto& s : space) known = known || s.name == name;
        if (!known) throw ConfigError(file.string() + ": hyperparameter '" + name + "' is not in the search space");
    }
    for (const auto& s : space) {
        if (!h.contains(s.name)) throw ConfigError(file.string() + ": hyperparameter '" + s.name + "' is missing");
        double v = h.at(s.name);
        if (!(v >= s.min && v <= s.max))
            throw ConfigError(file.string() + ": '" + s.name + "' = " + format_number(v) + " lies outside [" +
                              format_number(s.min) + ", " + format_number(s.max) + "]; the nearest valid value is " +
                              format_number(clamp(s, v)));
    }
}

/// Parses and fully validates a config; nothing is written anywhere.
inline ConfigFile parse_config(const YAML::Node& root, const std::filesystem::path& file) {
    ConfigFile c;
    c.source = file;
    if (!root.IsMap()) throw ConfigError(file.string() + ": config must be a YAML mapping");
    detail::reject_unknown(file, root,
                           {"task", "task_options", "search_space", "population_size", "workers", "updates_per_step",
                            "max_generations", "seed", "mode", "handicap", "mutation_probability", "output_dir",
                            "fixed_hparams", "max_wall_seconds", "rank_generations", "initiator_generations",
                            "opponent_generations", "tail_k"},
                           "config");
    auto& r = c.run;
    if (root["task"]) c.task = detail::scalar<std::string>(file, root["task"], "task");
    if (std::find(known_tasks().begin(), known_tasks().end(), c.task) == known_tasks().end())
        throw ConfigError(detail::where(file, root["task"]) + "unknown task '" + c.task +
                          "' (expected quadratic, regression or spectoy)");
    if (root["task_options"]) c.task_options = root["task_options"];
    if (root["population_size"]) r.population_size = detail::positive<std::size_t>(file, root["population_size"], "population_size");
    if (root["workers"]) r.workers = detail::positive<std::size_t>(file, root["workers"], "workers");
    if (root["updates_per_step"]) r.updates_per_step = detail::positive<std::size_t>(file, root["updates_per_step"], "updates_per_step");
    if (root["max_generations"]) r.max_generations = detail::scalar<int>(file, root["max_generations"], "max_generations");
    if (root["seed"]) r.seed = detail::positive<std::uint64_t>(file, root["seed"], "seed");
    if (root["handicap"]) r.selection.handicap = detail::scalar<double>(file, root["handicap"], "handicap");
    if (root["rank_generations"]) r.selection.rank_generations = detail::scalar<int>(file, root["rank_generations"], "rank_generations");
    if (root["initiator_generations"])
        r.selection.initiator_generations = detail::scalar<int>(file, root["initiator_generations"], "initiator_generations");
    if (root["opponent_generations"])
        r.selection.opponent_generations = detail::scalar<int>(file, root["opponent_generations"], "opponent_generations");
    if (root["mutation_probability"])
        r.mutation_probability = detail::scalar<double>(file, root["mutation_probability"], "mutation_probability");
    if (root["max_wall_seconds"]) r.max_wall_seconds = detail::scalar<double>(file, root["max_wall_seconds"], "max_wall_seconds");
    if (root["tail_k"]) c.tail_k = detail::positive<std::size_t>(file, root["tail_k"], "tail_k");
    if (root["output_dir"]) r.run_dir = detail::scalar<std::string>(file, root["output_dir"], "output_dir");
    if (root["mode"]) {
        auto m = detail::scalar<std::string>(file, root["mode"], "mode");
        if (m == "async") r.mode = RunMode::Async;
        else if (m == "deterministic") r.mode = RunMode::Deterministic;
        else throw ConfigError(detail::where(file, root["mode"]) + "mode must be 'async' or 'deterministic'");
    }

    const auto& space = root["search_space"];
    if (!space || (space.IsScalar() && space.Scalar() == "default")) {
        c.search_space_name = "default";
    } else if (space.IsScalar() && space.Scalar() == "table2") {
        c.search_space_name = "table2";
        r.search_space = table2_space();
    } else if (space.IsSequence()) {
        for (const auto& s : space) r.search_space.push_back(detail::parse_spec(file, s));
    } else {
        throw ConfigError(detail::where(file, space) + "search_space must be 'default', 'table2' or a list of parameters");
    }
    if (c.search_space_name == "default") r.search_space = with_task(c, [](const auto& t) { return t.default_space(); });
    if (root["fixed_hparams"]) r.fixed_hparams = parse_hparam_map(file, root["fixed_hparams"]);

    if (r.fixed_hparams) check_hparams(file, r.search_space, *r.fixed_hparams);
    try {
        r.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(file.string() + ": " + e.what());
    }

    // One short training step from the initial vector catches search spaces the task cannot consume.
    with_task(c, [&](const auto& t) {
        Rng rng(0);
        try {
            (void)t.train(t.init_state(rng), r.fixed_hparams ? *r.fixed_hparams : initial_vector(r.search_space), 1, rng);
        } catch (const std::exception& e) {
            throw ConfigError(file.string() + ": search space does not fit task '" + c.task + "': " + e.what());
        }
        return 0;
    });
    return c;
}

inline ConfigFile load_config(const std::filesystem::path& file) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(file.string());
    } catch (const YAML::BadFile&) {
        throw ConfigError(file.string() + ": cannot read config file");
    } catch (const YAML::ParserException& e) {
        throw ConfigError(file.string() + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                          ": " + e.msg);
    }
    return parse_config(root, file);
}

/// Fully resolved config (defaults filled in, search space expanded); loading it
/// back yields the same run.
inline std::string emit_config(const ConfigFile& c) {
    const auto& r = c.run;
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;
    out << YAML::Key << "task" << YAML::Value << c.task;
    out << YAML::Key << "task_options" << YAML::Value << YAML::BeginMap;
    with_task(c, [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        const auto& o = t.options();
        if constexpr (std::is_same_v<T, tasks::QuadraticTask>) {
            out << YAML::Key << "step_size" << YAML::Value << o.step_size;
            out << YAML::Key << "theta0" << YAML::Value << YAML::Flow << YAML::BeginSeq << o.theta0[0] << o.theta0[1]
                << YAML::EndSeq;
        } else if constexpr (std::is_same_v<T, tasks::RegressionTask>) {
            out << YAML::Key << "dim" << YAML::Value << o.dim;
            out << YAML::Key << "n_train" << YAML::Value << o.n_train;
            out << YAML::Key << "n_select" << YAML::Value << o.n_select;
            out << YAML::Key << "n_heldout" << YAML::Value << o.n_heldout;
            out << YAML::Key << "label_noise" << YAML::Value << o.label_noise;
            out << YAML::Key << "step_size" << YAML::Value << o.step_size;
            out << YAML::Key << "sigma_max" << YAML::Value << o.sigma_max;
        } else {
            out << YAML::Key << "frames" << YAML::Value << o.frames;
            out << YAML::Key << "bands" << YAML::Value << o.bands;
            out << YAML::Key << "classes" << YAML::Value << o.classes;
            out << YAML::Key << "n_train" << YAML::Value << o.n_train;
            out << YAML::Key << "n_select" << YAML::Value << o.n_select;
            out << YAML::Key << "n_report" << YAML::Value << o.n_report;
            out << YAML::Key << "batch" << YAML::Value << o.batch;
            out << YAML::Key << "step_size" << YAML::Value << o.step_size;
            out << YAML::Key << "amplitude" << YAML::Value << o.amplitude;
            out << YAML::Key << "noise" << YAML::Value << o.noise;
            out << YAML::Key << "augment" << YAML::Value << o.augment;
        }
        return 0;
    });
    out << YAML::EndMap;
    out << YAML::Key << "search_space" << YAML::Value << YAML::BeginSeq;
    for (const auto& s : r.search_space) {
        out << YAML::Flow << YAML::BeginMap;
        out << YAML::Key << "name" << YAML::Value << s.name;
        out << YAML::Key << "init" << YAML::Value << s.init;
        out << YAML::Key << "min" << YAML::Value << s.min;
        out << YAML::Key << "max" << YAML::Value << s.max;
        out << YAML::Key << "deltas" << YAML::Value << YAML::Flow << s.deltas;
        out << YAML::Key << "fractional_count" << YAML::Value << s.fractional_count;
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;
    out << YAML::Key << "population_size" << YAML::Value << r.population_size;
    out << YAML::Key << "workers" << YAML::Value << r.workers;
    out << YAML::Key << "updates_per_step" << YAML::Value << r.updates_per_step;
    out << YAML::Key << "max_generations" << YAML::Value << r.max_generations;
    out << YAML::Key << "seed" << YAML::Value << r.seed;
    out << YAML::Key << "mode" << YAML::Value << mode_name(r.mode);
    out << YAML::Key << "handicap" << YAML::Value << r.selection.handicap;
    out << YAML::Key << "rank_generations" << YAML::Value << r.selection.rank_generations;
    out << YAML::Key << "initiator_generations" << YAML::Value << r.selection.initiator_generations;
    out << YAML::Key << "opponent_generations" << YAML::Value << r.selection.opponent_generations;
    out << YAML::Key << "mutation_probability" << YAML::Value << r.mutation_probability;
    out << YAML::Key << "tail_k" << YAML::Value << c.tail_k;
    if (r.max_wall_seconds) out << YAML::Key << "max_wall_seconds" << YAML::Value << *r.max_wall_seconds;
    out << YAML::Key << "output_dir" << YAML::Value << r.run_dir.string();
    if (r.fixed_hparams) {
        out << YAML::Key << "fixed_hparams" << YAML::Value << YAML::BeginMap;
        for (const auto& [k, v] : *r.fixed_hparams) out << YAML::Key << k << YAML::Value << v;
        out << YAML::EndMap;
    }
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

}  // namespace pbt
