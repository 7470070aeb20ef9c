#pragma once

#include "ope/common.hpp"
#include "ope/data.hpp"
#include "ope/estimators.hpp"
#include "ope/grid.hpp"
#include "ope/policy.hpp"
#include "ope/reward.hpp"
#include "ope/tuning.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ope::bench {

inline const std::vector<std::string>& known_estimators()
{
    static const std::vector<std::string> tags = {"dm",     "ips",    "dr",     "switch-dr", "switch-dr-oracle",
                                                  "dm-ib",  "dr-ic",  "dr-ic-oracle", "dm-nw", "dr-nw",
                                                  "dm-anw", "dr-anw"};
    return tags;
}

struct ExperimentConfig {
    std::string dataset;  // path to a classification CSV
    std::string label_column = "last";
    bool has_header = true;
    RewardMode reward_mode = RewardMode::deterministic;
    std::vector<std::size_t> sample_sizes = {100, 200};
    std::size_t replicates = 300;
    std::size_t seeds = 10;
    std::vector<std::string> estimators = {"dm", "ips", "dr", "switch-dr", "dm-ib", "dr-ic", "dr-ic-oracle"};
    double train_fraction = 0.7;
    double ridge_lambda = 1.0;
    std::size_t cross_fit_folds = 3;
    BaseFit base_fit = BaseFit::ridge;
    double bandwidth_lo = 0.01;
    double bandwidth_hi = 15.0;
    std::size_t bandwidth_count = 30;
    std::size_t tau_count = 30;
    std::size_t switch_count = 25;
    std::size_t nw_count = 20;
    LogisticOptions logging_options{};
    LogisticOptions target_options{};
    std::uint64_t base_seed = 0;
    bool record_timing = true;
    std::string out;

    void validate() const
    {
        require(!dataset.empty(), "config needs a dataset");
        require(replicates >= 1, "replicates must be at least one");
        require(seeds >= 1, "seeds must be at least one");
        require(!sample_sizes.empty(), "config needs at least one sample size");
        for (std::size_t n : sample_sizes) require(n >= 2, "sample sizes must be at least two");
        require(!estimators.empty(), "config needs at least one estimator");
        for (const auto& e : estimators)
            require(std::find(known_estimators().begin(), known_estimators().end(), e) != known_estimators().end(),
                    "unknown estimator '" + e + "'");
        require(cross_fit_folds == 1 || cross_fit_folds == 3, "folds must be 1 or 3");
    }
};

struct ResultRow {
    std::string dataset;
    std::string estimator;
    std::size_t n = 0;
    std::size_t seed = 0;
    double mse = 0.0;
    double bias2 = 0.0;
    double var = 0.0;
    double param_h = std::numeric_limits<double>::quiet_NaN();
    double param_tau = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
    std::string error;
};

struct ExperimentResult {
    std::vector<ResultRow> rows;

    const ResultRow* find(const std::string& estimator, std::size_t n, std::size_t seed) const
    {
        for (const auto& r : rows)
            if (r.estimator == estimator && r.n == n && r.seed == seed) return &r;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Protocol pieces

struct PolicyPair {
    DiscretePolicy logging;
    DiscretePolicy target;
    std::uint64_t seed = 0;
};

/// Logging policy: logistic fit to uniformly random action labels. Target
/// policy: logistic fit to the true labels.
inline PolicyPair make_policies(const ClassificationTable& train, std::uint64_t seed,
                                LogisticOptions logging_options = {}, LogisticOptions target_options = {})
{
    train.validate();
    const std::size_t k = train.action_count;
    Rng rng(seed);
    std::vector<std::size_t> random_labels(train.labels.size());
    for (auto& label : random_labels) label = rng.index(k);
    logging_options.action_count = k;
    target_options.action_count = k;
    auto logging = train_multinomial_logistic(train.features, random_labels, logging_options);
    auto target = train_multinomial_logistic(train.features, train.labels, target_options);
    return {std::move(logging), std::move(target), seed};
}

/// V^pi = (1/m) sum_x sum_a pi(a|x) E[r|x,a], exact over the table rows.
inline double ground_truth(const ClassificationTable& test, const Matrix& target_probs, RewardMode mode)
{
    require(test.rows() >= 1, "ground truth needs a non-empty test set");
    double total = 0.0;
    for (Index i = 0; i < test.rows(); ++i)
        for (Index a = 0; a < target_probs.cols(); ++a)
            total += target_probs(i, a) *
                     expected_classification_reward(mode, static_cast<std::size_t>(a) == test.labels[static_cast<std::size_t>(i)]);
    return total / static_cast<double>(test.rows());
}

inline double ground_truth(const ClassificationTable& test, const DiscretePolicy& target, RewardMode mode)
{
    return ground_truth(test, target.probability_table(test.features), mode);
}

inline double clipped_squared_error(double estimate, double truth)
{
    if (!std::isfinite(estimate)) return 1.0;
    const double diff = estimate - truth;
    return std::min(diff * diff, 1.0);
}

inline double clipped_mse(const std::vector<double>& estimates, double truth)
{
    require(!estimates.empty(), "clipped MSE needs at least one estimate");
    double total = 0.0;
    for (double v : estimates) total += clipped_squared_error(v, truth);
    return total / static_cast<double>(estimates.size());
}

/// Index of the grid parameter whose replicate estimates have the smallest
/// clipped MSE against the truth; ties go to the smaller parameter.
inline std::size_t oracle_tune(const std::vector<double>& params, const std::vector<std::vector<double>>& estimates,
                               double truth)
{
    require(!params.empty() && params.size() == estimates.size(), "oracle tuning needs one estimate list per parameter");
    std::size_t best = 0;
    double best_mse = clipped_mse(estimates[0], truth);
    for (std::size_t k = 1; k < params.size(); ++k) {
        const double mse = clipped_mse(estimates[k], truth);
        if (mse < best_mse || (mse == best_mse && params[k] < params[best])) {
            best = k;
            best_mse = mse;
        }
    }
    return best;
}

inline std::uint64_t replicate_seed(std::uint64_t base_seed, std::size_t seed_index, std::size_t n, std::size_t replicate)
{
    return base_seed ^ hash_combine(hash_combine(mix64(seed_index), n), replicate);
}

inline std::uint64_t stage_seed(std::uint64_t base_seed, std::size_t seed_index, std::uint64_t stage)
{
    return hash_combine(hash_combine(base_seed, seed_index), stage);
}

// ---------------------------------------------------------------------------
// Replicated benchmark

namespace detail {

struct Accumulator {
    std::vector<double> estimates;
    double h_sum = 0.0, tau_sum = 0.0;
    std::size_t h_count = 0, tau_count = 0;
    double wall_ms = 0.0;
    std::size_t failures = 0;
    std::string first_error;

    void add(const EstimatorOutput& e)
    {
        estimates.push_back(e.value);
        if (!std::isnan(e.param_h)) h_sum += e.param_h, ++h_count;
        if (!std::isnan(e.param_tau)) tau_sum += e.param_tau, ++tau_count;
    }

    void fail(const std::string& what)
    {
        if (failures++ == 0) first_error = what;
    }
};

inline ResultRow summarize(const std::string& dataset, const std::string& estimator, std::size_t n, std::size_t seed,
                           const Accumulator& acc, double truth, bool record_timing)
{
    ResultRow row;
    row.dataset = dataset;
    row.estimator = estimator;
    row.n = n;
    row.seed = seed;
    if (acc.estimates.empty()) {
        row.mse = row.bias2 = row.var = std::numeric_limits<double>::quiet_NaN();
    } else {
        row.mse = clipped_mse(acc.estimates, truth);
        const auto count = static_cast<double>(acc.estimates.size());
        double mean = 0.0;
        for (double v : acc.estimates) mean += v;
        mean /= count;
        row.bias2 = (mean - truth) * (mean - truth);
        double var = 0.0;
        for (double v : acc.estimates) var += (v - mean) * (v - mean);
        row.var = var / count;
    }
    if (acc.h_count) row.param_h = acc.h_sum / static_cast<double>(acc.h_count);
    if (acc.tau_count) row.param_tau = acc.tau_sum / static_cast<double>(acc.tau_count);
    row.wall_ms = record_timing ? acc.wall_ms : 0.0;
    if (acc.failures)
        row.error = std::to_string(acc.failures) + " failed replicate(s): " + acc.first_error;
    return row;
}

class Stopwatch {
public:
    double elapsed_ms() const
    {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

/// Per-replicate estimator evaluation. Exposed so tests can run one replicate
/// without the surrounding protocol.
struct ReplicateContext {
    const ExperimentConfig& config;
    const DiscretePolicy& logging;
    const DiscretePolicy& target;
    double r_max = 1.0;
};

struct ReplicateEstimates {
    std::map<std::string, EstimatorOutput> outputs;
    std::map<std::string, std::string> errors;
    std::map<std::string, double> wall_ms;
    // Oracle estimators: one value per oracle grid point.
    std::map<std::string, std::vector<double>> oracle_values;
};

inline bool wants(const ExperimentConfig& config, const std::string& tag)
{
    return std::find(config.estimators.begin(), config.estimators.end(), tag) != config.estimators.end();
}

inline ReplicateEstimates estimate_replicate(const ReplicateContext& ctx, const LoggedDataset& data,
                                             const TuningGrid* oracle_tau_grid, const TuningGrid* oracle_switch_grid)
{
    const auto& cfg = ctx.config;
    ReplicateEstimates out;
    const auto in = prepare_inputs(data, ctx.target, &ctx.logging);

    auto run = [&](const std::string& tag, auto&& body) {
        if (!wants(cfg, tag)) return;
        detail::Stopwatch watch;
        try {
            body();
        } catch (const std::exception& e) {
            out.errors[tag] = e.what();
        }
        out.wall_ms[tag] += watch.elapsed_ms();
    };

    std::optional<RidgeModel> base;
    Matrix ridge_tab;
    const bool needs_ridge = wants(cfg, "dm") || wants(cfg, "dr") || wants(cfg, "switch-dr") ||
                             wants(cfg, "switch-dr-oracle") || wants(cfg, "dm-ib") || wants(cfg, "dr-ic") ||
                             wants(cfg, "dr-ic-oracle");
    std::string base_error;
    if (needs_ridge) {
        try {
            base = fit_ridge(data, cfg.ridge_lambda, data.action_count, cfg.cross_fit_folds, cfg.base_fit);
            ridge_tab = base->predict_table(data);
        } catch (const std::exception& e) {
            base_error = e.what();
        }
    }
    auto need_base = [&] {
        if (!base) throw NumericError("base reward fit failed: " + base_error);
    };

    run("dm", [&] {
        need_base();
        out.outputs["dm"] = dm(in, ridge_tab);
    });
    run("ips", [&] { out.outputs["ips"] = ips(data, in); });
    run("dr", [&] {
        need_base();
        out.outputs["dr"] = dr(data, in, ridge_tab);
    });
    run("switch-dr", [&] {
        need_base();
        const auto grid = weight_quantile_grid(in.weights.weights, cfg.switch_count);
        const auto sel = select_switch_threshold(data, in, ridge_tab, grid, ctx.r_max);
        out.outputs["switch-dr"] = switch_dr(data, in, ridge_tab, sel.param);
    });
    run("switch-dr-oracle", [&] {
        need_base();
        std::vector<double> values;
        for (double tau : oracle_switch_grid->values) values.push_back(switch_dr(data, in, ridge_tab, tau).value);
        out.oracle_values["switch-dr-oracle"] = std::move(values);
    });

    const bool needs_ib = wants(cfg, "dm-ib") || wants(cfg, "dr-ic") || wants(cfg, "dr-ic-oracle");
    std::optional<IBRewardModel> ib;
    Matrix ib_tab;
    std::string ib_error = base_error;
    if (needs_ib && base) {
        detail::Stopwatch watch;
        try {
            const auto grid = geometric_grid(cfg.bandwidth_lo, cfg.bandwidth_hi, cfg.bandwidth_count);
            const auto fitted = fit_ib(data, *base, in.weights, grid.values.front());
            const auto sel = select_bandwidth(data, in, fitted, grid);
            ib = fitted.with_bandwidth(sel.param);
            ib_tab = ib_table(*ib, in.target_probs, in.logging_probs);
        } catch (const std::exception& e) {
            ib_error = e.what();
        }
        // Bandwidth search is shared by the IB estimators; charge it to each.
        const double shared = watch.elapsed_ms();
        for (const char* tag : {"dm-ib", "dr-ic", "dr-ic-oracle"})
            if (wants(cfg, tag)) out.wall_ms[tag] += shared;
    }
    auto need_ib = [&] {
        if (!ib) throw NumericError("information-borrowing fit failed: " + ib_error);
    };
    run("dm-ib", [&] {
        need_ib();
        auto e = dm_ib(in, ib_tab);
        e.param_h = ib->bandwidth;
        out.outputs["dm-ib"] = std::move(e);
    });
    run("dr-ic", [&] {
        need_ib();
        const auto grid = kl_quantile_grid(in.kl, cfg.tau_count, true);
        const auto sel = select_tau(data, in, ib_tab, grid, ctx.r_max);
        auto e = dr_ic(data, in, ib_tab, sel.param);
        e.param_h = ib->bandwidth;
        out.outputs["dr-ic"] = std::move(e);
    });
    run("dr-ic-oracle", [&] {
        need_ib();
        std::vector<double> values;
        for (double tau : oracle_tau_grid->values) values.push_back(dr_ic(data, in, ib_tab, tau).value);
        out.oracle_values["dr-ic-oracle"] = std::move(values);
    });

    auto nw_pair = [&](const std::string& dm_tag, const std::string& dr_tag, NWVariant variant) {
        if (!wants(cfg, dm_tag) && !wants(cfg, dr_tag)) return;
        detail::Stopwatch watch;
        std::optional<Matrix> table;
        double h = 0.0;
        std::string error;
        try {
            const Vector train_w = variant == NWVariant::adaptive ? in.weights.weights : Vector();
            h = loo_cv_bandwidth(data, geometric_grid(0.01, 100.0, cfg.nw_count), variant, train_w);
            const auto model = make_nw(data, h, variant, train_w);
            const Vector test_w = variant == NWVariant::adaptive ? derived_weights(in.target_probs, in.logging_probs) : Vector();
            table = nw_table(model, test_w);
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double shared = watch.elapsed_ms();
        for (const auto* tag : {&dm_tag, &dr_tag}) {
            if (!wants(cfg, *tag)) continue;
            out.wall_ms[*tag] += shared;
            run(*tag, [&] {
                if (!table) throw NumericError("NW fit failed: " + error);
                auto e = *tag == dm_tag ? dm(in, *table, *tag) : dr(data, in, *table, *tag);
                e.param_h = h;
                out.outputs[*tag] = std::move(e);
            });
        }
    };
    nw_pair("dm-nw", "dr-nw", NWVariant::action_truncated);
    nw_pair("dm-anw", "dr-anw", NWVariant::adaptive);
    return out;
}

/// Oracle grid for the KL threshold: the KL-quantile grid over the test
/// contexts, plus one point above the maximum so full DR is a candidate.
inline TuningGrid oracle_kl_grid(const Matrix& target_probs, const Matrix& logging_probs, std::size_t count)
{
    Vector kl(target_probs.rows());
    for (Index i = 0; i < kl.size(); ++i)
        kl(i) = kl_divergence(Vector(target_probs.row(i).transpose()), Vector(logging_probs.row(i).transpose()));
    auto grid = kl_quantile_grid(kl, count, true);
    const double top = kl.maxCoeff();
    grid.values.push_back(top * (1.0 + 1e-9) + 1e-12);
    return make_grid(std::move(grid.values));
}

/// Oracle grid for the weight threshold, from the quantiles of w(x, a) with
/// a ~ mu over the test contexts, plus 0 (pure DM) and the maximum weight (pure DR).
inline TuningGrid oracle_weight_grid(const Matrix& target_probs, const Matrix& logging_probs, std::size_t count,
                                     std::uint64_t seed)
{
    Rng rng(seed);
    constexpr std::size_t pilot = 10000;
    Vector w(static_cast<Index>(pilot));
    double max_w = 0.0;
    for (Index i = 0; i < target_probs.rows(); ++i)
        for (Index a = 0; a < target_probs.cols(); ++a) max_w = std::max(max_w, target_probs(i, a) / logging_probs(i, a));
    for (std::size_t s = 0; s < pilot; ++s) {
        const auto row = static_cast<Index>(rng.index(static_cast<std::size_t>(target_probs.rows())));
        const auto a = static_cast<Index>(sample_from(logging_probs.row(row).transpose(), rng));
        w(static_cast<Index>(s)) = target_probs(row, a) / logging_probs(row, a);
    }
    auto grid = weight_quantile_grid(w, count);
    grid.values.push_back(0.0);
    grid.values.push_back(max_w);
    return make_grid(std::move(grid.values));
}

inline std::string dataset_name(const std::string& path)
{
    return std::filesystem::path(path).stem().string();
}

inline LabelColumn parse_label_column(const std::string& text)
{
    long long idx = 0;
    if (text != "last" && parse_int(text, idx) && idx >= 0) return static_cast<std::size_t>(idx);
    return text;
}

inline ClassificationTable load_table(const std::string& path, const std::string& label, bool has_header)
{
    if (label == "last") {
        // Resolve "last" by counting columns on the first line.
        std::ifstream probe(path);
        if (!probe) throw ValidationError("cannot open '" + path + "'");
        std::string first;
        std::getline(probe, first);
        const auto columns = static_cast<std::size_t>(std::count(first.begin(), first.end(), ',')) + 1;
        return load_classification_csv(path, columns - 1, has_header);
    }
    return load_classification_csv(path, parse_label_column(label), has_header);
}

/// Runs the full protocol for one table. Seeds and replicates are processed in
/// a fixed order; every random draw derives from (base_seed, seed, n, replicate).
inline ExperimentResult run_replicates(const ExperimentConfig& config, const ClassificationTable& table,
                                       const std::string& name)
{
    config.validate();
    table.validate();
    ExperimentResult result;

    for (std::size_t s = 0; s < config.seeds; ++s) {
        const auto [train, test] = split_train_test(table, config.train_fraction, stage_seed(config.base_seed, s, 1));
        const auto policies = make_policies(train, stage_seed(config.base_seed, s, 2), config.logging_options,
                                            config.target_options);
        const Matrix logging_test = policies.logging.probability_table(test.features);
        const Matrix target_test = policies.target.probability_table(test.features);
        const double truth = ground_truth(test, target_test, config.reward_mode);
        const auto tau_grid = oracle_kl_grid(target_test, logging_test, config.tau_count);
        const auto switch_grid =
            oracle_weight_grid(target_test, logging_test, config.switch_count, stage_seed(config.base_seed, s, 3));
        const ReplicateContext ctx{config, policies.logging, policies.target, 1.0};

        for (std::size_t n : config.sample_sizes) {
            std::map<std::string, detail::Accumulator> acc;
            std::map<std::string, std::vector<std::vector<double>>> oracle;  // tag -> [grid][replicate]
            for (const auto& tag : config.estimators) acc[tag];

            for (std::size_t rep = 0; rep < config.replicates; ++rep) {
                Rng rng(replicate_seed(config.base_seed, s, n, rep));
                const auto data = to_bandit(test, logging_test, config.reward_mode, n, rng);
                const auto est = estimate_replicate(ctx, data, &tau_grid, &switch_grid);
                for (const auto& tag : config.estimators) {
                    auto& a = acc[tag];
                    if (auto it = est.wall_ms.find(tag); it != est.wall_ms.end()) a.wall_ms += it->second;
                    if (auto it = est.errors.find(tag); it != est.errors.end()) {
                        a.fail(it->second);
                        continue;
                    }
                    if (auto it = est.outputs.find(tag); it != est.outputs.end()) a.add(it->second);
                    if (auto it = est.oracle_values.find(tag); it != est.oracle_values.end()) {
                        auto& columns = oracle[tag];
                        columns.resize(it->second.size());
                        for (std::size_t k = 0; k < it->second.size(); ++k) columns[k].push_back(it->second[k]);
                    }
                }
            }

            for (const auto& tag : config.estimators) {
                auto& a = acc[tag];
                std::optional<double> oracle_tau;
                if (auto it = oracle.find(tag); it != oracle.end() && !it->second.empty()) {
                    const auto& grid = tag == "dr-ic-oracle" ? tau_grid : switch_grid;
                    const std::size_t best = oracle_tune(grid.values, it->second, truth);
                    a.estimates = it->second[best];
                    oracle_tau = grid.values[best];
                }
                auto row = detail::summarize(name, tag, n, s, a, truth, config.record_timing);
                if (oracle_tau) row.param_tau = *oracle_tau;
                result.rows.push_back(std::move(row));
            }
        }
    }
    return result;
}

inline ExperimentResult run_replicates(const ExperimentConfig& config)
{
    config.validate();
    const auto table = load_table(config.dataset, config.label_column, config.has_header);
    return run_replicates(config, table, dataset_name(config.dataset));
}

inline void write_results_csv(std::ostream& out, const ExperimentResult& result)
{
    auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    out << "dataset,estimator,n,seed,mse,bias2,var,param_h,param_tau,wall_ms,error\n";
    for (const auto& r : result.rows) {
        std::string error = r.error;
        std::replace(error.begin(), error.end(), ',', ';');
        std::replace(error.begin(), error.end(), '\n', ' ');
        out << r.dataset << ',' << r.estimator << ',' << r.n << ',' << r.seed << ',' << num(r.mse) << ',' << num(r.bias2)
            << ',' << num(r.var) << ',' << num(r.param_h) << ',' << num(r.param_tau) << ','
            << format_double(std::round(r.wall_ms * 1000.0) / 1000.0) << ',' << error << '\n';
    }
}

inline void write_run_metadata(std::ostream& out, const ExperimentConfig& config)
{
    out << "# bandit samples are drawn with replacement from the test split (train/test = "
        << format_double(config.train_fraction) << ")\n"
        << "# reward=" << to_string(config.reward_mode) << " replicates=" << config.replicates
        << " seeds=" << config.seeds << " base_seed=" << config.base_seed << " lambda=" << format_double(config.ridge_lambda)
        << " folds=" << config.cross_fit_folds << '\n';
}

// ---------------------------------------------------------------------------
// Config file: flat "key = value" lines, keys mirroring the CLI flags.

inline std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ','))
        if (auto t = trim(item); !t.empty()) out.emplace_back(t);
    return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& text)
{
    std::vector<std::size_t> out;
    for (const auto& item : split_list(text)) {
        long long v = 0;
        if (!parse_int(item, v) || v < 0) throw ValidationError("bad size '" + item + "'");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

inline void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value)
{
    auto as_int = [&](const std::string& v) {
        long long x = 0;
        if (!parse_int(v, x) || x < 0) throw ValidationError("bad integer for '" + key + "': " + v);
        return static_cast<std::size_t>(x);
    };
    auto as_double = [&](const std::string& v) {
        double x = 0;
        if (!parse_double(v, x)) throw ValidationError("bad number for '" + key + "': " + v);
        return x;
    };
    auto as_bool = [&](const std::string& v) {
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ValidationError("bad boolean for '" + key + "': " + v);
    };

    if (key == "dataset") cfg.dataset = value;
    else if (key == "label-col") cfg.label_column = value;
    else if (key == "no-header") cfg.has_header = !as_bool(value);
    else if (key == "reward") cfg.reward_mode = parse_reward_mode(value);
    else if (key == "sizes") cfg.sample_sizes = parse_sizes(value);
    else if (key == "replicates") cfg.replicates = as_int(value);
    else if (key == "seeds") cfg.seeds = as_int(value);
    else if (key == "estimators") cfg.estimators = split_list(value);
    else if (key == "out") cfg.out = value;
    else if (key == "train-fraction") cfg.train_fraction = as_double(value);
    else if (key == "lambda") cfg.ridge_lambda = as_double(value);
    else if (key == "folds") cfg.cross_fit_folds = as_int(value);
    else if (key == "base-fit") {
        if (value == "ridge") cfg.base_fit = BaseFit::ridge;
        else if (value == "logistic") cfg.base_fit = BaseFit::logistic;
        else throw ValidationError("unknown base fit '" + value + "'");
    }
    else if (key == "bandwidth-lo") cfg.bandwidth_lo = as_double(value);
    else if (key == "bandwidth-hi") cfg.bandwidth_hi = as_double(value);
    else if (key == "bandwidth-count") cfg.bandwidth_count = as_int(value);
    else if (key == "tau-count") cfg.tau_count = as_int(value);
    else if (key == "switch-count") cfg.switch_count = as_int(value);
    else if (key == "policy-l2") cfg.logging_options.l2_penalty = cfg.target_options.l2_penalty = as_double(value);
    else if (key == "policy-iters") cfg.logging_options.max_iters = cfg.target_options.max_iters = static_cast<int>(as_int(value));
    else if (key == "policy-intercept") cfg.logging_options.intercept = cfg.target_options.intercept = as_bool(value);
    else if (key == "base-seed") cfg.base_seed = as_int(value);
    else if (key == "record-timing") cfg.record_timing = as_bool(value);
    else throw ValidationError("unknown config key '" + key + "'");
}

inline ExperimentConfig parse_config(std::istream& in)
{
    ExperimentConfig cfg;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        const auto text = trim(line);
        if (text.empty() || text.front() == '#') continue;
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected key = value", row);
        std::string key(trim(text.substr(0, eq)));
        std::replace(key.begin(), key.end(), '_', '-');
        apply_config_value(cfg, key, std::string(trim(text.substr(eq + 1))));
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Toy comparison of the weight-based and KL-based switching criteria

enum class Branch { dm, dr };

inline const char* to_string(Branch b) { return b == Branch::dm ? "DM" : "DR"; }

/// switch-DR keeps the DR term when w <= tau_w; DR-IC keeps it when D_KL < tau_kl.
inline Branch switch_branch(double weight, double tau_w) { return weight <= tau_w ? Branch::dr : Branch::dm; }
inline Branch kl_branch(double kl, double tau_kl) { return kl < tau_kl ? Branch::dr : Branch::dm; }

struct ToyRow {
    std::string split;
    std::size_t index = 0;
    double x = 0.0;
    std::size_t action = 0;
    double weight = 0.0;
    double kl = 0.0;
    Branch switch_choice = Branch::dr;
    Branch dric_choice = Branch::dr;
    bool agree() const noexcept { return switch_choice == dric_choice; }
};

struct ToyReport {
    std::vector<ToyRow> rows;
    std::size_t train_disagreements = 0;
    std::size_t test_disagreements = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
};

inline ToyReport toy_comparison(std::size_t n_train, std::size_t n_test, double tau_w, double tau_kl, std::uint64_t seed)
{
    require(n_train >= 1 && n_test >= 1, "toy comparison needs non-empty train and test sets");
    const auto train = sample_toy(n_train, hash_combine(seed, 1));
    const auto test = sample_toy(n_test, hash_combine(seed, 2));
    ToyReport report;
    report.n_train = n_train;
    report.n_test = n_test;
    auto add = [&](const std::string& split, const ToySample& sample, std::size_t& disagreements) {
        for (Index i = 0; i < sample.data.size(); ++i) {
            const auto x = sample.data.contexts.row(i);
            const std::size_t a = sample.data.actions[static_cast<std::size_t>(i)];
            ToyRow row{split, static_cast<std::size_t>(i), x(0), a,
                       importance_weight(sample.target, sample.logging, x, a),
                       kl_divergence(sample.target, sample.logging, x)};
            row.switch_choice = switch_branch(row.weight, tau_w);
            row.dric_choice = kl_branch(row.kl, tau_kl);
            if (!row.agree()) ++disagreements;
            report.rows.push_back(row);
        }
    };
    add("train", train, report.train_disagreements);
    add("test", test, report.test_disagreements);
    return report;
}

inline void write_toy_csv(std::ostream& out, const ToyReport& report)
{
    out << "split,index,x,action,weight,kl,switch_branch,dric_branch,agree\n";
    for (const auto& r : report.rows)
        out << r.split << ',' << r.index << ',' << format_double(r.x) << ',' << r.action << ',' << format_double(r.weight)
            << ',' << format_double(r.kl) << ',' << to_string(r.switch_choice) << ',' << to_string(r.dric_choice) << ','
            << (r.agree() ? 1 : 0) << '\n';
    out << "summary_train," << report.n_train << ",,,,,,," << report.train_disagreements << '\n';
    out << "summary_test," << report.n_test << ",,,,,,," << report.test_disagreements << '\n';
}

/// Closed-form scan over a uniform grid on [-1, 1]: contexts where, for some
/// action, the two criteria pick different branches.
inline std::vector<double> toy_disagreement_scan(double tau_w, double tau_kl, std::size_t points = 201)
{
    require(points >= 2, "scan needs at least two points");
    std::vector<double> out;
    for (std::size_t k = 0; k < points; ++k) {
        const double x = -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(points - 1);
        const double kl = 5.0 * x * std::tanh(2.5 * x);
        for (double w : {std::exp(5.0 * x), std::exp(-5.0 * x)}) {
            if (switch_branch(w, tau_w) != kl_branch(kl, tau_kl)) {
                out.push_back(x);
                break;
            }
        }
    }
    return out;
}

}  // namespace ope::bench
