// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "pbt/config.hpp"

using namespace pbt;
namespace fs = std::filesystem;

namespace {

ConfigFile parse(const std::string& text) { return parse_config(YAML::Load(text), "cfg.yaml"); }

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

fs::path write_temp(const std::string& name, const std::string& text) {
    auto p = fs::temp_directory_path() / ("pbt_config_" + name + "_" + std::to_string(::getpid()) + ".yaml");
    std::ofstream(p) << text;
    return p;
}

}  // namespace

TEST(Config, DefaultsForQuadratic) {
    auto c = parse("task: quadratic\n");
    EXPECT_EQ(c.task, "quadratic");
    EXPECT_EQ(c.search_space_name, "default");
    ASSERT_EQ(c.run.search_space.size(), 2u);
    EXPECT_EQ(c.run.search_space[0].name, "h1");
}

TEST(Config, UnknownKeyNamesPosition) {
    auto msg = error_of("task: quadratic\npopulation_sise: 4\n");
    EXPECT_NE(msg.find("cfg.yaml:2:1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("population_sise"), std::string::npos);
    EXPECT_NE(msg.find("population_size"), std::string::npos);
    msg = error_of("task: regression\ntask_options:\n  n_trian: 3\n");
    EXPECT_NE(msg.find("cfg.yaml:3:3"), std::string::npos) << msg;
}

TEST(Config, ParseErrorAnchoredToLine) {
    auto p = write_temp("bad", "task: quadratic\nworkers: [1, 2\n");
    try {
        load_config(p);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(p.string() + ":"), std::string::npos) << e.what();
    }
    fs::remove(p);
    EXPECT_THROW(load_config("/nonexistent/cfg.yaml"), ConfigError);
}

TEST(Config, ValueErrors) {
    EXPECT_NE(error_of("workers: -2\n").find("negative"), std::string::npos);
    EXPECT_NE(error_of("workers: many\n").find("invalid value 'many'"), std::string::npos);
    EXPECT_NE(error_of("mode: fast\n").find("mode"), std::string::npos);
    EXPECT_NE(error_of("task: mnist\n").find("unknown task"), std::string::npos);
    EXPECT_NE(error_of("population_size: 0\n"), "");
    EXPECT_NE(error_of("search_space: 7\n"), "");
}

TEST(Config, Table2AndListedSpaces) {
    auto c = parse("task: spectoy\nsearch_space: table2\n");
    EXPECT_EQ(c.run.search_space.size(), 10u);
    c = parse(
        "task: regression\n"
        "search_space:\n"
        "  - {name: sigma, init: 0.1, min: 0, max: 1.5, deltas: [0.05, 0.1]}\n");
    ASSERT_EQ(c.run.search_space.size(), 1u);
    EXPECT_EQ(c.run.search_space[0].max, 1.5);
    EXPECT_EQ(c.run.search_space[0].deltas.size(), 2u);
    EXPECT_NE(error_of("search_space:\n  - {name: h1, init: 0.5, min: 0, max: 1}\n").find("missing 'deltas'"),
              std::string::npos);
    EXPECT_NE(error_of("search_space:\n  - {name: h1, init: 2, min: 0, max: 1, deltas: 0.1}\n"), "");
}

TEST(Config, SpaceTaskMismatchRejected) {
    auto msg = error_of("task: regression\nsearch_space:\n  - {name: lr, init: 0.1, min: 0, max: 1, deltas: 0.1}\n");
    EXPECT_NE(msg.find("does not fit task"), std::string::npos) << msg;
}

TEST(Config, FixedHparamsOutOfRangeSuggestsClamp) {
    auto msg = error_of("task: quadratic\nfixed_hparams: {h1: 1.4, h2: 0.5}\n");
    EXPECT_NE(msg.find("'h1' = 1.4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("nearest valid value is 1"), std::string::npos) << msg;
    EXPECT_NE(error_of("fixed_hparams: {h1: 0.5}\n").find("'h2' is missing"), std::string::npos);
    EXPECT_NE(error_of("fixed_hparams: {h1: 0.5, h2: 0.5, h3: 1}\n").find("'h3'"), std::string::npos);
}

TEST(Config, EmitRoundTrip) {
    for (const char* text : {"task: quadratic\nseed: 9\nworkers: 3\nfixed_hparams: {h1: 0.25, h2: 1}\n",
                             "task: regression\nmode: async\nhandicap: 0.1\ntask_options: {n_train: 40}\n",
                             "task: spectoy\nsearch_space: table2\nmax_wall_seconds: 12.5\ntail_k: 4\n"}) {
        auto c = parse(text);
        auto text2 = emit_config(c);
        auto c2 = parse(text2);
        EXPECT_EQ(emit_config(c2), text2);
        EXPECT_EQ(c2.run.seed, c.run.seed);
        EXPECT_EQ(c2.run.mode, c.run.mode);
        EXPECT_EQ(c2.run.search_space.size(), c.run.search_space.size());
        EXPECT_EQ(c2.run.fixed_hparams, c.run.fixed_hparams);
        EXPECT_EQ(c2.tail_k, c.tail_k);
    }
}

TEST(Config, TaskOptions) {
    auto c = parse("task: regression\ntask_options: {n_train: 12, label_noise: 1.5}\n");
    auto o = regression_options(c);
    EXPECT_EQ(o.n_train, 12u);
    EXPECT_EQ(o.label_noise, 1.5);
    EXPECT_EQ(o.data_seed, c.run.seed);
    EXPECT_NE(error_of("task: quadratic\ntask_options: {theta0: [1]}\n"), "");
    EXPECT_NE(error_of("task: spectoy\ntask_options: 3\n").find("mapping"), std::string::npos);
}
