#include "ope/tuning.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace {

using namespace ope;

TEST(VarianceEstimate, ReferenceValue)
{
    Vector y(2);
    y << 0.0, 1.0;
    EXPECT_DOUBLE_EQ(variance_estimate(y), 0.125);
    EXPECT_EQ(variance_estimate(Vector::Constant(5, 3.0)), 0.0);
}

TEST(BiasUpperBound, Endpoints)
{
    Vector kl(4);
    kl << 0.1, 0.5, 1.0, 2.0;
    EXPECT_EQ(bias_ub(kl, 2.5, 1.0), 0.0);
    EXPECT_EQ(bias_ub(kl, 0.05, 3.0), 3.0);
    EXPECT_DOUBLE_EQ(bias_ub(kl, 0.5, 1.0), 0.75);
    EXPECT_THROW(bias_ub(kl, 0.5, 0.0), ValidationError);
}

TEST(MseEstimate, BiasIsMinOfTildeAndBound)
{
    Rng rng(3);
    for (int t = 0; t < 500; ++t) {
        Vector y(10);
        for (Index i = 0; i < 10; ++i) y(i) = rng.normal();
        const double est = rng.normal(), ref = rng.normal(), bound = rng.uniform();
        const auto m = mse_estimate(y, est, ref, bound);
        EXPECT_NEAR(m.bias_sq_hat, std::min((est - ref) * (est - ref), bound * bound), 1e-12);
        EXPECT_NEAR(m.total, m.bias_sq_hat + variance_estimate(y), 1e-12);
    }
}

TEST(Grids, GeometricAndQuantile)
{
    const auto g = default_bandwidth_grid();
    ASSERT_EQ(g.size(), 30u);
    EXPECT_EQ(g.values.front(), 0.01);
    EXPECT_EQ(g.values.back(), 15.0);
    EXPECT_NEAR(g.values[1], 0.012868276625921584, 1e-15);
    EXPECT_THROW(geometric_grid(1.0, 1.0, 3), ValidationError);
    EXPECT_DOUBLE_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 0.5), 2.5);
}

TEST(Grids, KlQuantileGridIncludesMinimumAndMaximum)
{
    Vector kl(50);
    for (Index i = 0; i < 50; ++i) kl(i) = 0.01 * static_cast<double>(i * i);
    const auto grid = kl_quantile_grid(kl);
    EXPECT_EQ(grid.values.front(), 0.0);
    EXPECT_DOUBLE_EQ(grid.values.back(), kl.maxCoeff());
    EXPECT_NO_THROW(grid.validate());
    const auto without = kl_quantile_grid(kl, 30, false);
    EXPECT_GT(without.values.front(), 0.0);
}

TEST(Grids, DegenerateKlGridCollapses)
{
    const auto grid = kl_quantile_grid(Vector::Zero(10));
    EXPECT_NO_THROW(grid.validate());
    EXPECT_LE(grid.size(), 2u);
}

TEST(Argmin, TiesGoToSmallerParameter)
{
    std::vector<TracePoint> trace(3);
    for (std::size_t k = 0; k < 3; ++k) trace[k].param = static_cast<double>(k + 1);
    trace[0].mse.total = 0.5;
    trace[1].mse.total = 0.2;
    trace[2].mse.total = 0.2;
    EXPECT_EQ(detail::argmin_trace(trace).param, 2.0);
    trace[2].mse.total = 0.2 - 1e-16;
    EXPECT_EQ(detail::argmin_trace(trace).param, 2.0);
}

struct TuningSetup {
    ToySample toy;
    PolicyInputs in;
    IBRewardModel fitted;
};

TuningSetup toy_setup(std::size_t n, std::uint64_t seed)
{
    auto toy = sample_toy(n, seed);
    auto in = prepare_inputs(toy.data, toy.target, &toy.logging);
    auto fitted = fit_ib(toy.data, fit_ridge(toy.data, 1.0, 2, 1), in.weights, 0.01);
    return {std::move(toy), std::move(in), std::move(fitted)};
}

TEST(SelectTau, PicksMinimumOfTrace)
{
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto s = toy_setup(80, seed);
        const Matrix table = ib_table(s.fitted.with_bandwidth(0.5), s.in.target_probs, s.in.logging_probs);
        const auto grid = kl_quantile_grid(s.in.kl);
        const auto sel = select_tau(s.toy.data, s.in, table, grid, 1.0);
        ASSERT_EQ(sel.trace.size(), grid.size());
        for (const auto& p : sel.trace) EXPECT_GE(p.mse.total, sel.best().mse.total - kTieTolerance);
        // Every trace point is reproducible from the public formulas.
        const double ips_value = ips(s.toy.data, s.in).value;
        for (const auto& p : sel.trace) {
            const auto e = dr_ic(s.toy.data, s.in, table, p.param);
            EXPECT_EQ(p.value, e.value);
            const double b = bias_ub(s.in.kl, p.param, 1.0);
            EXPECT_NEAR(p.mse.total, std::min(bias_tilde_sq(e.value, ips_value), b * b) + variance_estimate(e.per_sample),
                        1e-12);
        }
    }
}

TEST(SelectBandwidth, ScoresDrIcAtInfinityAndPicksGridPoint)
{
    const auto s = toy_setup(60, 4);
    const auto grid = default_bandwidth_grid();
    const auto sel = select_bandwidth(s.toy.data, s.in, s.fitted, grid);
    ASSERT_EQ(sel.trace.size(), 30u);
    for (const auto& p : sel.trace) {
        const Matrix table = ib_table(s.fitted.with_bandwidth(p.param), s.in.target_probs, s.in.logging_probs);
        EXPECT_EQ(p.value, dr(s.toy.data, s.in, table).value);
        EXPECT_GE(p.mse.total, sel.best().mse.total - kTieTolerance);
    }
    const auto via_policies = select_bandwidth(s.toy.data, s.toy.target, s.toy.logging, grid, 1.0, 1);
    EXPECT_EQ(via_policies.param, sel.param);
}

TEST(SelectSwitchThreshold, ReturnsGridValue)
{
    const auto s = toy_setup(60, 5);
    const Matrix ridge = s.fitted.base.predict_table(s.toy.data);
    const auto grid = weight_quantile_grid(s.in.weights.weights);
    const auto sel = select_switch_threshold(s.toy.data, s.in, ridge, grid, 1.0);
    EXPECT_NE(std::find(grid.values.begin(), grid.values.end(), sel.param), grid.values.end());
}

TEST(TraceCsv, MarksSelectedRow)
{
    Selection sel;
    sel.param = 2.0;
    sel.trace.resize(2);
    sel.trace[0].param = 1.0;
    sel.trace[1].param = 2.0;
    std::ostringstream out;
    write_trace_csv(out, sel, "tau");
    const std::string text = out.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "tau,value,bias2_tilde,bias_ub,bias2,var,total,selected");
    EXPECT_NE(text.find("2,0,0,0,0,0,0,1\n"), std::string::npos);
}

}  // namespace
