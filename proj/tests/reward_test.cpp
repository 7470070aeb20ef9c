#include "ope/reward.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using namespace ope;

// r_IB from an explicit Sigma matrix, no log-space tricks.
Vector brute_force_ib(const IBRewardModel& model, const LoggedDataset& data, const DerivedDataset& derived,
                      const Vector& test_weights)
{
    const Matrix sigma = build_cross_covariance(derived, data, test_weights, model.weights.weights, model.bandwidth);
    const Matrix s = sigma / model.sigma_r;
    Vector out(static_cast<Index>(derived.size()));
    for (std::size_t j = 0; j < derived.size(); ++j) {
        const auto [c, a] = derived.pairs[j];
        const double base = model.base.predict(data.contexts.row(static_cast<Index>(c)), a, c);
        const double d = s.row(static_cast<Index>(j)).sum();
        out(static_cast<Index>(j)) = d < kRowSumFloor ? base : base + s.row(static_cast<Index>(j)).dot(model.residuals) / d;
    }
    return out;
}

TEST(Kernel, ReferenceValues)
{
    Eigen::RowVectorXd a(1), b(1);
    a << 0.0;
    b << 0.0;
    EXPECT_NEAR(kernel_value(a, b, true, 1.0, 1.0, 1.0), 0.3989422804014327, 1e-15);
    b << 1.0;
    EXPECT_NEAR(kernel_value(a, b, true, 1.0, 1.0, 1.0), 0.24197072451914335, 1e-15);
    EXPECT_EQ(kernel_value(a, b, false, 1.0, 1.0, 1.0), 0.0);
    // Weights act as a bandwidth multiplier sqrt(w w~).
    EXPECT_NEAR(kernel_value(a, b, true, 2.0, 2.0, 1.0), kernel_value(a, b, true, 1.0, 1.0, 2.0), 1e-15);
}

TEST(RidgeSolve, MatchesNormalEquations)
{
    Rng rng(1);
    Matrix z(30, 4);
    Vector r(30);
    for (Index i = 0; i < 30; ++i) {
        for (Index c = 0; c < 4; ++c) z(i, c) = rng.normal();
        r(i) = rng.normal();
    }
    const Vector theta = ridge_solve(z, r, 0.5);
    const Vector residual = (z.transpose() * z + 0.5 * Matrix::Identity(4, 4)) * theta - z.transpose() * r;
    EXPECT_LT(residual.norm(), 1e-12);
}

TEST(RidgeSolve, SingularSystemWithoutPenaltyThrows)
{
    Matrix z = Matrix::Zero(5, 2);
    z.col(0).setOnes();
    z.col(1).setOnes();
    EXPECT_THROW(ridge_solve(z, Vector::Ones(5), 0.0), NumericError);
    EXPECT_NO_THROW(ridge_solve(z, Vector::Ones(5), 1e-3));
}

TEST(FitRidge, CrossFitRoutesByFold)
{
    Rng rng(2);
    const auto data = fixtures::random_logged(30, 2, 3, rng);
    const auto model = fit_ridge(data, 1.0, 3, 3);
    ASSERT_EQ(model.folds(), 3u);
    const Matrix table = model.predict_table(data);
    for (Index i = 0; i < data.size(); ++i) {
        const auto fold = static_cast<std::size_t>(i) % 3;
        const Vector& theta = model.fold_theta(fold);
        for (Index a = 0; a < 3; ++a) {
            const Vector z = encode_pair(data.contexts.row(i), static_cast<std::size_t>(a), 3);
            EXPECT_NEAR(table(i, a), z.dot(theta), 1e-13);
        }
    }
    // Each fold's fit never saw its own samples: refit on the complement reproduces it.
    LoggedDataset complement;
    complement.action_count = 3;
    std::vector<Index> keep;
    for (Index i = 0; i < data.size(); ++i)
        if (i % 3 != 1) keep.push_back(i);
    complement.contexts.resize(static_cast<Index>(keep.size()), 2);
    complement.rewards.resize(static_cast<Index>(keep.size()));
    complement.logging_probs.resize(static_cast<Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        complement.contexts.row(static_cast<Index>(k)) = data.contexts.row(keep[k]);
        complement.rewards(static_cast<Index>(k)) = data.rewards(keep[k]);
        complement.logging_probs(static_cast<Index>(k)) = data.logging_probs(keep[k]);
        complement.actions.push_back(data.actions[static_cast<std::size_t>(keep[k])]);
    }
    const auto refit = fit_ridge(complement, 1.0, 3, 1);
    EXPECT_LT((refit.theta() - model.fold_theta(1)).norm(), 1e-12);
}

TEST(FitRidge, RejectsBadFoldCount)
{
    Rng rng(3);
    const auto data = fixtures::random_logged(10, 1, 2, rng);
    EXPECT_THROW(fit_ridge(data, 1.0, 2, 2), ValidationError);
}

TEST(FitRidge, LogisticBaseStaysInUnitInterval)
{
    Rng rng(4);
    const auto data = fixtures::random_logged(40, 2, 2, rng);
    const auto model = fit_ridge(data, 1.0, 2, 1, BaseFit::logistic);
    const Matrix table = model.predict_table(data);
    EXPECT_TRUE((table.array() > 0.0).all() && (table.array() < 1.0).all());
}

TEST(EstimateSigma, PopulationVarianceWithFloor)
{
    Vector r(4);
    r << 1.0, 2.0, 3.0, 4.0;
    EXPECT_DOUBLE_EQ(estimate_sigma_r(r), 1.25);
    EXPECT_DOUBLE_EQ(estimate_sigma_r(Vector::Constant(3, 0.7)), kSigmaFloor);
}

TEST(InformationBorrowing, MatchesBruteForceMatrix)
{
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 5 + trial;
        auto data = fixtures::random_logged(n, 2, 3, rng);
        const auto target = fixtures::random_tabular(data.contexts, 3, rng);
        const auto logging = fixtures::random_tabular(data.contexts, 3, rng);
        data = fixtures::logged_from_policy(data.contexts, logging, rng);
        const Matrix pi = target.probability_table(data.contexts);
        const Matrix mu = logging.probability_table(data.contexts);
        const auto base = fit_ridge(data, 0.5, 3, trial % 2 ? 3 : 1);
        const double h = 0.3 + 0.1 * trial;
        const auto model = fit_ib(data, base, logged_weights(data, pi), h);
        const auto derived = derive_all_actions(data, 3);
        const Vector fast = predict_ib(model, derived, pi, mu);
        const Vector slow = brute_force_ib(model, data, derived, derived_weights(pi, mu));
        for (Index j = 0; j < fast.size(); ++j) EXPECT_NEAR(fast(j), slow(j), 1e-10) << "trial " << trial;
    }
}

TEST(InformationBorrowing, TinyBandwidthInterpolatesLoggedRewards)
{
    Rng rng(6);
    const Index n = 12;
    auto data = fixtures::random_logged(n, 2, 2, rng);
    const auto logging = fixtures::random_tabular(data.contexts, 2, rng);
    const auto target = fixtures::random_tabular(data.contexts, 2, rng);
    data = fixtures::logged_from_policy(data.contexts, logging, rng);
    const Matrix pi = target.probability_table(data.contexts);
    const Matrix mu = logging.probability_table(data.contexts);
    const auto model = fit_ib(data, fit_ridge(data, 1.0, 2, 1), logged_weights(data, pi), 1e-6);
    const Matrix table = ib_table(model, pi, mu);
    for (Index i = 0; i < n; ++i)
        EXPECT_NEAR(table(i, static_cast<Index>(data.actions[static_cast<std::size_t>(i)])), data.rewards(i), 1e-6);
}

TEST(InformationBorrowing, FarPairsFallBackToBase)
{
    LoggedDataset data;
    data.action_count = 2;
    data.contexts.resize(2, 1);
    data.contexts << 0.0, 1000.0;
    data.actions = {0, 1};
    data.rewards.resize(2);
    data.rewards << 0.2, 0.9;
    data.logging_probs = Vector::Constant(2, 0.5);
    const Matrix pi = Matrix::Constant(2, 2, 0.5);
    const Matrix mu = Matrix::Constant(2, 2, 0.5);
    const auto model = fit_ib(data, fit_ridge(data, 1.0, 2, 1), logged_weights(data, pi), 0.01);
    const auto derived = derive_all_actions(data, 2);
    const auto pred = predict_ib_detailed(model, derived, pi, mu);
    // (x=0, a=1) only has a same-action sample at distance 1000.
    const std::size_t j = derived.index_of(0, 1);
    EXPECT_TRUE(pred.ridge_fallback[j]);
    EXPECT_DOUBLE_EQ(pred.values(static_cast<Index>(j)), model.base.predict(data.contexts.row(0), 1, 0));
    EXPECT_FALSE(pred.ridge_fallback[derived.index_of(0, 0)]);
}

TEST(InformationBorrowing, NonPositiveWeightsRejected)
{
    Rng rng(7);
    const auto data = fixtures::random_logged(6, 1, 2, rng);
    WeightProfile w{Vector::Ones(6), std::nullopt};
    w.weights(3) = 0.0;
    EXPECT_THROW(fit_ib(data, fit_ridge(data, 1.0, 2, 1), w, 1.0), ValidationError);
    EXPECT_THROW(fit_ib(data, fit_ridge(data, 1.0, 2, 1), WeightProfile{Vector::Ones(6), std::nullopt}, 0.0),
                 ValidationError);
}

TEST(InformationBorrowing, LargeBandwidthApproachesMeanResidualShift)
{
    Rng rng(8);
    auto data = fixtures::random_logged(15, 1, 2, rng);
    for (auto& a : data.actions) a = 1;
    // Equal weights on all samples: the huge-bandwidth limit is the plain mean residual.
    WeightProfile w{Vector::Ones(15), std::nullopt};
    const auto model = fit_ib(data, fit_ridge(data, 1.0, 2, 1), w, 1e6);
    const auto derived = derive_all_actions(data, 2);
    const Vector values = predict_ib(model, derived, Matrix::Constant(15, 2, 0.5), Matrix::Constant(15, 2, 0.5));
    const double shift = model.residuals.mean();
    for (Index i = 0; i < 15; ++i)
        EXPECT_NEAR(values(static_cast<Index>(derived.index_of(static_cast<std::size_t>(i), 1))),
                    model.base.predict(data.contexts.row(i), 1, static_cast<std::size_t>(i)) + shift, 1e-9);
}

TEST(DerivedWeights, RowMajorRatios)
{
    Matrix pi(2, 2), mu(2, 2);
    pi << 0.2, 0.8, 0.5, 0.5;
    mu << 0.4, 0.6, 0.25, 0.75;
    const Vector w = derived_weights(pi, mu);
    EXPECT_DOUBLE_EQ(w(0), 0.5);
    EXPECT_DOUBLE_EQ(w(1), 0.8 / 0.6);
    EXPECT_DOUBLE_EQ(w(2), 2.0);
    EXPECT_DOUBLE_EQ(w(3), 0.5 / 0.75);
    mu(0, 0) = 0.0;
    mu(0, 1) = 1.0;
    EXPECT_THROW(derived_weights(pi, mu), SupportError);
}

TEST(NadarayaWatson, TruncatedAveragesSameActionOnly)
{
    LoggedDataset data;
    data.action_count = 2;
    data.contexts.resize(3, 1);
    data.contexts << 0.0, 0.1, 0.2;
    data.actions = {0, 0, 1};
    data.rewards.resize(3);
    data.rewards << 1.0, 3.0, 100.0;
    data.logging_probs = Vector::Constant(3, 0.5);
    Eigen::RowVectorXd x(1);
    x << 0.05;
    const auto model = make_nw(data, 1e-9, NWVariant::action_truncated);
    EXPECT_NEAR(predict_nw(model, x, 0).value, 2.0, 1e-6);
    const auto plain = make_nw(data, 1e-9, NWVariant::plain);
    EXPECT_NEAR(predict_nw(plain, x, 0).value, 104.0 / 3.0, 1e-6);
}

TEST(NadarayaWatson, MissingActionFallsBackToGlobalAverage)
{
    LoggedDataset data;
    data.action_count = 3;
    data.contexts.resize(2, 1);
    data.contexts << 0.0, 1.0;
    data.actions = {0, 1};
    data.rewards.resize(2);
    data.rewards << 0.0, 1.0;
    data.logging_probs = Vector::Constant(2, 0.5);
    const auto model = make_nw(data, 1.0, NWVariant::action_truncated);
    Eigen::RowVectorXd x(1);
    x << 0.5;
    const auto pred = predict_nw(model, x, 2);
    EXPECT_TRUE(pred.fallback);
    EXPECT_NEAR(pred.value, 0.5, 1e-12);
}

TEST(NadarayaWatson, LeaveOneOutPicksGridPoint)
{
    Rng rng(9);
    const auto data = fixtures::random_logged(30, 1, 2, rng);
    const auto grid = default_nw_grid();
    const double h = loo_cv_bandwidth(data, grid, NWVariant::action_truncated);
    EXPECT_NE(std::find(grid.values.begin(), grid.values.end(), h), grid.values.end());
}

TEST(NadarayaWatson, LargeExponentsStayFinite)
{
    Rng rng(10);
    auto data = fixtures::random_logged(10, 2, 2, rng);
    data.contexts *= 1e4;
    const Matrix table = nw_table(make_nw(data, 100.0, NWVariant::action_truncated));
    EXPECT_TRUE(table.allFinite());
}

}  // namespace
