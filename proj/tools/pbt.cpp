// SPDX-License-Identifier: Apache-2.0
// Command-line front end: run, baseline, resume, analyze.

#include <CLI11.hpp>

#include "pbt/cli.hpp"

namespace {

void add_overrides(CLI::App* cmd, pbt::cli::Overrides& o) {
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_option("--workers", o.workers, "Number of workers");
    cmd->add_option("--population-size", o.population_size, "Seed checkpoints");
    cmd->add_option("--max-generations", o.max_generations, "Generation bound");
    cmd->add_option("--updates-per-step", o.updates_per_step, "Training updates per child");
    cmd->add_option("--mode", o.mode, "async or deterministic");
    cmd->add_option("--handicap", o.handicap, "Initiator handicap");
    cmd->add_option("-o,--output-dir", o.output_dir, "Run directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Population-based training with initiator-based evolution"};
    app.require_subcommand(1);

    std::string config, source = "init", run_dir;
    pbt::cli::Overrides overrides;
    std::optional<std::size_t> tail_k;
    std::optional<int> max_generations;
    pbt::cli::AnalyzeOptions analyze;

    auto* run = app.add_subcommand("run", "Start a PBT run");
    run->add_option("config", config, "YAML config")->required();
    add_overrides(run, overrides);

    auto* baseline = app.add_subcommand("baseline", "Train with a fixed hyperparameter vector");
    baseline->add_option("config", config, "YAML config")->required();
    baseline->add_option("--hparams", source, "init | file:PATH | tail-average-of:RUN_DIR");
    baseline->add_option("--tail-k", tail_k, "Schedule entries averaged by tail-average-of");
    add_overrides(baseline, overrides);

    auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
    resume->add_option("run_dir", run_dir, "Run directory")->required();
    resume->add_option("--max-generations", max_generations, "New generation bound");

    auto* an = app.add_subcommand("analyze", "Offline analysis of a run directory");
    an->add_option("run_dir", run_dir, "Run directory")->required();
    an->add_option("analysis", analyze.subcommand, "schedule | series | lowess | correlate | tail-average")->required();
    an->add_option("args", analyze.args, "Parameter or metric names");
    an->add_option("--out", analyze.out_path, "Output file")->required();
    an->add_option("--format", analyze.format, "csv or json");
    an->add_option("--frac", analyze.frac, "LOWESS span fraction");
    an->add_option("--checkpoint", analyze.checkpoint, "Checkpoint id (default: best)");
    an->add_option("--metric", analyze.metric, "Metric used to pick the best checkpoint");
    an->add_option("--tail-k", analyze.tail_k, "Schedule entries averaged");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : pbt::cli::kUsage;
    }

    if (run->parsed()) return pbt::cli::cmd_run(config, overrides);
    if (baseline->parsed()) return pbt::cli::cmd_baseline(config, source, overrides, tail_k);
    if (resume->parsed()) return pbt::cli::cmd_resume(run_dir, max_generations);
    return pbt::cli::cmd_analyze(run_dir, analyze);
}
