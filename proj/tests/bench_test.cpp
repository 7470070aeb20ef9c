#include "ope/bench.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace {

using namespace ope;
using namespace ope::bench;

ExperimentConfig small_config()
{
    ExperimentConfig cfg;
    cfg.dataset = fixtures::data_path("iris.csv");
    cfg.sample_sizes = {40};
    cfg.replicates = 4;
    cfg.seeds = 2;
    cfg.record_timing = false;
    cfg.estimators = known_estimators();
    return cfg;
}

TEST(ClippedMse, ClipsAtOne)
{
    EXPECT_EQ(clipped_squared_error(3.0, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(clipped_squared_error(0.5, 0.2), 0.09);
    EXPECT_EQ(clipped_squared_error(std::nan(""), 0.0), 1.0);
    EXPECT_DOUBLE_EQ(clipped_mse({0.1, 5.0}, 0.0), (0.01 + 1.0) / 2.0);
    EXPECT_NEAR(clipped_mse({0.1, 1.2}, 0.0), 0.505, 1e-15);
    EXPECT_EQ(clipped_mse({0.3, 0.3}, 0.3), 0.0);
    EXPECT_EQ(clipped_mse({2.3, 2.3}, 0.3), 1.0);
}

TEST(OracleTune, PicksLowestClippedMseWithTiesToSmaller)
{
    const std::vector<double> params = {0.1, 0.2, 0.3};
    const std::vector<std::vector<double>> est = {{1.0, 1.0}, {0.5, 0.5}, {0.5, 0.5}};
    EXPECT_EQ(oracle_tune(params, est, 0.5), 1u);
}

TEST(GroundTruth, DeterministicAndStochasticRewards)
{
    ClassificationTable test;
    test.features = Matrix::Zero(2, 1);
    test.features(1, 0) = 1.0;
    test.labels = {0, 1};
    test.action_count = 2;
    Matrix pi(2, 2);
    pi << 0.8, 0.2, 0.4, 0.6;
    EXPECT_DOUBLE_EQ(ground_truth(test, pi, RewardMode::deterministic), 0.7);
    EXPECT_DOUBLE_EQ(ground_truth(test, pi, RewardMode::stochastic), 0.5 * ((0.8 * 0.7 + 0.2 * 0.3) + (0.4 * 0.3 + 0.6 * 0.7)));
}

TEST(MakePolicies, TargetBeatsLogging)
{
    const auto table = load_table(fixtures::data_path("wine.csv"), "last", true);
    const auto [train, test] = split_train_test(table, 0.7, 1);
    const auto policies = make_policies(train, 2);
    const double v_target = ground_truth(test, policies.target, RewardMode::deterministic);
    const double v_logging = ground_truth(test, policies.logging, RewardMode::deterministic);
    EXPECT_GT(v_target, v_logging);
    EXPECT_GT(v_target, 0.8);
}

TEST(RunReplicates, ProducesOneRowPerCombination)
{
    const auto cfg = small_config();
    const auto result = run_replicates(cfg);
    EXPECT_EQ(result.rows.size(), cfg.seeds * cfg.sample_sizes.size() * cfg.estimators.size());
    for (const auto& r : result.rows) {
        EXPECT_EQ(r.dataset, "iris");
        EXPECT_TRUE(r.error.empty()) << r.estimator << ": " << r.error;
        EXPECT_GE(r.mse, 0.0);
        EXPECT_LE(r.mse, 1.0);
        EXPECT_EQ(r.wall_ms, 0.0);
    }
    EXPECT_FALSE(std::isnan(result.find("dr-ic-oracle", 40, 1)->param_tau));
    EXPECT_FALSE(std::isnan(result.find("dm-ib", 40, 0)->param_h));
}

TEST(RunReplicates, OutputIsDeterministic)
{
    const auto cfg = small_config();
    std::ostringstream a, b;
    write_results_csv(a, run_replicates(cfg));
    write_results_csv(b, run_replicates(cfg));
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "dataset,estimator,n,seed,mse,bias2,var,param_h,param_tau,wall_ms,error");
}

TEST(RunReplicates, EstimatorSubsetDoesNotChangeValues)
{
    auto cfg = small_config();
    const auto full = run_replicates(cfg);
    cfg.estimators = {"dr"};
    const auto subset = run_replicates(cfg);
    EXPECT_EQ(subset.find("dr", 40, 1)->mse, full.find("dr", 40, 1)->mse);
}

TEST(RunReplicates, BiasVarianceDecomposition)
{
    const auto result = run_replicates(small_config());
    for (const auto& r : result.rows) {
        // Without clipping mse = bias2 + var; clipping can only lower it.
        EXPECT_LE(r.mse, r.bias2 + r.var + 1e-12) << r.estimator;
    }
}

TEST(Config, ParsesKeysAndRejectsUnknown)
{
    std::istringstream in("# comment\ndataset = data.csv\nsizes = 100, 200\nreplicates = 7\nestimators = dm,ips\n"
                          "record_timing = false\nreward = stochastic\n");
    const auto cfg = parse_config(in);
    EXPECT_EQ(cfg.dataset, "data.csv");
    EXPECT_EQ(cfg.sample_sizes, (std::vector<std::size_t>{100, 200}));
    EXPECT_EQ(cfg.replicates, 7u);
    EXPECT_EQ(cfg.estimators, (std::vector<std::string>{"dm", "ips"}));
    EXPECT_FALSE(cfg.record_timing);
    EXPECT_EQ(cfg.reward_mode, RewardMode::stochastic);

    std::istringstream bad("colour = blue\n");
    EXPECT_THROW(parse_config(bad), ValidationError);
    std::istringstream malformed("no equals sign\n");
    EXPECT_THROW(parse_config(malformed), ParseError);
}

TEST(Config, ValidateRejectsUnknownEstimator)
{
    auto cfg = small_config();
    cfg.estimators = {"dm", "magic"};
    EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Seeds, ReplicateSeedsAreDistinct)
{
    std::set<std::uint64_t> seen;
    for (std::size_t s = 0; s < 5; ++s)
        for (std::size_t n : {100u, 200u})
            for (std::size_t r = 0; r < 50; ++r) seen.insert(replicate_seed(0, s, n, r));
    EXPECT_EQ(seen.size(), 500u);
}

TEST(ToyComparison, ScanFindsDisagreement)
{
    const auto xs = toy_disagreement_scan(12.65, 2.20);
    EXPECT_FALSE(xs.empty());
    const auto report = toy_comparison(50, 50, 12.65, 2.20, 7);
    EXPECT_EQ(report.rows.size(), 100u);
    std::ostringstream out;
    write_toy_csv(out, report);
    EXPECT_NE(out.str().find("summary_test,50,"), std::string::npos);
}

TEST(ToyComparison, IdenticalThresholdBehaviourAtZero)
{
    // At x = 0 both policies agree, so w = 1 and KL = 0: both criteria keep DR.
    EXPECT_EQ(switch_branch(1.0, 12.65), Branch::dr);
    EXPECT_EQ(kl_branch(0.0, 2.20), Branch::dr);
}

TEST(LibraryExample, EndToEndOnToy)
{
    auto toy = sample_toy(200, 1);
    auto in = prepare_inputs(toy.data, toy.target, &toy.logging);
    auto base = fit_ridge(toy.data, 1.0, 2, 3);
    auto fitted = fit_ib(toy.data, base, in.weights, 0.1);
    auto h = select_bandwidth(toy.data, in, fitted, default_bandwidth_grid());
    auto table = ib_table(fitted.with_bandwidth(h.param), in.target_probs, in.logging_probs);
    auto tau = select_tau(toy.data, in, table, kl_quantile_grid(in.kl), 1.0);
    const double value = dr_ic(toy.data, in, table, tau.param).value;
    EXPECT_TRUE(std::isfinite(value));
}

}  // namespace
