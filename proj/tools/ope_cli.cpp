// Command-line harness: dataset conversion, replicated benchmarks, the
// two-action toy comparison and tuning traces.

#include "ope/bench.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace ope;

std::ofstream open_output(const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    return out;
}

struct ConvertArgs {
    std::string input;
    std::string label = "last";
    bool no_header = false;
    std::string out;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::string reward = "deterministic";
    std::string logging = "uniform";
};

int run_convert(const ConvertArgs& args)
{
    const auto table = bench::load_table(args.input, args.label, !args.no_header);
    const std::size_t n = args.n ? args.n : static_cast<std::size_t>(table.rows());
    DiscretePolicy logging = DiscretePolicy::uniform(table.action_count);
    if (args.logging == "trained") logging = bench::make_policies(table, hash_combine(args.seed, 2)).logging;
    else require(args.logging == "uniform", "logging must be 'uniform' or 'trained'");
    const auto data = to_bandit(table, logging, parse_reward_mode(args.reward), n, args.seed);
    auto out = open_output(args.out);
    write_logged_csv(out, data);
    return 0;
}

struct RunArgs {
    std::string config;
    std::string dataset;
    std::string estimators;
    std::string reward;
    std::string sizes;
    std::size_t replicates = 0;
    std::size_t seeds = 0;
    std::string out;
    std::string label;
    double lambda = 0.0;
    std::size_t folds = 0;
    std::uint64_t base_seed = 0;
    bool no_timing = false;
};

int run_run(const RunArgs& args, const CLI::App& cmd)
{
    bench::ExperimentConfig cfg;
    if (!args.config.empty()) {
        std::ifstream in(args.config);
        if (!in) throw ValidationError("cannot open config '" + args.config + "'");
        cfg = bench::parse_config(in);
    }
    auto given = [&](const char* flag) { return cmd.count(flag) > 0; };
    if (given("--dataset")) cfg.dataset = args.dataset;
    if (given("--estimators")) cfg.estimators = bench::split_list(args.estimators);
    if (given("--reward")) cfg.reward_mode = parse_reward_mode(args.reward);
    if (given("--sizes")) cfg.sample_sizes = bench::parse_sizes(args.sizes);
    if (given("--replicates")) cfg.replicates = args.replicates;
    if (given("--seeds")) cfg.seeds = args.seeds;
    if (given("--out")) cfg.out = args.out;
    if (given("--label-col")) cfg.label_column = args.label;
    if (given("--lambda")) cfg.ridge_lambda = args.lambda;
    if (given("--folds")) cfg.cross_fit_folds = args.folds;
    if (given("--base-seed")) cfg.base_seed = args.base_seed;
    if (args.no_timing) cfg.record_timing = false;
    require(!cfg.out.empty(), "run needs an output path (--out or out = ...)");

    const auto result = bench::run_replicates(cfg);
    auto out = open_output(cfg.out);
    bench::write_results_csv(out, result);
    auto meta = open_output(cfg.out + ".meta");
    bench::write_run_metadata(meta, cfg);
    return 0;
}

struct ToyArgs {
    std::size_t n_train = 50;
    std::size_t n_test = 50;
    double tau_w = 12.65;
    double tau_kl = 2.20;
    std::uint64_t seed = 7;
    std::string out;
};

int run_toy(const ToyArgs& args)
{
    const auto report = bench::toy_comparison(args.n_train, args.n_test, args.tau_w, args.tau_kl, args.seed);
    auto out = open_output(args.out);
    bench::write_toy_csv(out, report);
    std::cout << "test disagreements: " << report.test_disagreements << " of " << report.n_test << '\n';
    return 0;
}

struct TuneArgs {
    std::string dataset;
    std::string what = "bandwidth";
    std::string out;
    std::string label = "last";
    std::string reward = "deterministic";
    std::size_t n = 200;
    std::uint64_t seed = 0;
    double lambda = 1.0;
    std::size_t folds = 3;
};

int run_tune(const TuneArgs& args)
{
    require(args.what == "bandwidth" || args.what == "tau", "--what must be 'bandwidth' or 'tau'");
    const auto table = bench::load_table(args.dataset, args.label, true);
    const auto [train, test] = split_train_test(table, 0.7, bench::stage_seed(args.seed, 0, 1));
    const auto policies = bench::make_policies(train, bench::stage_seed(args.seed, 0, 2));
    const auto data = to_bandit(test, policies.logging, parse_reward_mode(args.reward), args.n,
                                bench::replicate_seed(args.seed, 0, args.n, 0));
    const auto in = prepare_inputs(data, policies.target, &policies.logging);
    auto base = fit_ridge(data, args.lambda, data.action_count, args.folds);
    const auto grid = default_bandwidth_grid();
    const auto fitted = fit_ib(data, std::move(base), in.weights, grid.values.front());
    const auto bandwidth = select_bandwidth(data, in, fitted, grid);

    auto out = open_output(args.out);
    if (args.what == "bandwidth") {
        write_trace_csv(out, bandwidth, "h");
        return 0;
    }
    const Matrix table_ib = ib_table(fitted.with_bandwidth(bandwidth.param), in.target_probs, in.logging_probs);
    write_trace_csv(out, select_tau(data, in, table_ib, kl_quantile_grid(in.kl), 1.0), "tau");
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Off-policy evaluation estimators and benchmark harness"};
    app.require_subcommand(1);

    ConvertArgs convert;
    auto* convert_cmd = app.add_subcommand("convert", "Convert a classification CSV into a logged bandit dump");
    convert_cmd->add_option("--input", convert.input, "Classification CSV")->required();
    convert_cmd->add_option("--label-col", convert.label, "Label column name or index ('last' by default)");
    convert_cmd->add_flag("--no-header", convert.no_header, "CSV has no header row");
    convert_cmd->add_option("--out", convert.out, "Output bandit CSV")->required();
    convert_cmd->add_option("--n", convert.n, "Samples to draw (default: table rows)");
    convert_cmd->add_option("--seed", convert.seed, "Random seed");
    convert_cmd->add_option("--reward", convert.reward, "deterministic | stochastic");
    convert_cmd->add_option("--logging", convert.logging, "uniform | trained");

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Replicated estimator benchmark");
    run_cmd->add_option("--config", run.config, "key = value config file");
    run_cmd->add_option("--dataset", run.dataset, "Classification CSV");
    run_cmd->add_option("--estimators", run.estimators, "Comma-separated estimator tags");
    run_cmd->add_option("--reward", run.reward, "deterministic | stochastic");
    run_cmd->add_option("--sizes", run.sizes, "Comma-separated sample sizes");
    run_cmd->add_option("--replicates", run.replicates, "Replicates per (seed, n)");
    run_cmd->add_option("--seeds", run.seeds, "Number of seeds");
    run_cmd->add_option("--out", run.out, "Result CSV");
    run_cmd->add_option("--label-col", run.label, "Label column name or index");
    run_cmd->add_option("--lambda", run.lambda, "Ridge penalty");
    run_cmd->add_option("--folds", run.folds, "Cross-fit folds (1 or 3)");
    run_cmd->add_option("--base-seed", run.base_seed, "Base seed");
    run_cmd->add_flag("--no-timing", run.no_timing, "Write wall_ms as 0");

    ToyArgs toy;
    auto* toy_cmd = app.add_subcommand("toy", "Compare weight- and KL-based switching on the two-action toy problem");
    toy_cmd->add_option("--n-train", toy.n_train);
    toy_cmd->add_option("--n-test", toy.n_test);
    toy_cmd->add_option("--tau-w", toy.tau_w);
    toy_cmd->add_option("--tau-kl", toy.tau_kl);
    toy_cmd->add_option("--seed", toy.seed);
    toy_cmd->add_option("--out", toy.out)->required();

    TuneArgs tune;
    auto* tune_cmd = app.add_subcommand("tune", "Dump the estimated-MSE trace for bandwidth or tau selection");
    tune_cmd->add_option("--dataset", tune.dataset)->required();
    tune_cmd->add_option("--what", tune.what, "bandwidth | tau");
    tune_cmd->add_option("--out", tune.out)->required();
    tune_cmd->add_option("--label-col", tune.label);
    tune_cmd->add_option("--reward", tune.reward);
    tune_cmd->add_option("--n", tune.n);
    tune_cmd->add_option("--seed", tune.seed);
    tune_cmd->add_option("--lambda", tune.lambda);
    tune_cmd->add_option("--folds", tune.folds);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*convert_cmd) return run_convert(convert);
        if (*run_cmd) return run_run(run, *run_cmd);
        if (*toy_cmd) return run_toy(toy);
        if (*tune_cmd) return run_tune(tune);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
