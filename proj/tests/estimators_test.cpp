#include "ope/estimators.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace {

using namespace ope;

struct Instance {
    LoggedDataset data;
    DiscretePolicy target = DiscretePolicy::uniform(1);
    DiscretePolicy logging = DiscretePolicy::uniform(1);
    PolicyInputs in;
    Matrix ridge;
    Matrix ib;
};

Instance random_instance(Rng& rng)
{
    Instance s;
    const Index n = 2 + static_cast<Index>(rng.index(49));
    const std::size_t k = 2 + rng.index(4);
    const Index d = 1 + static_cast<Index>(rng.index(3));
    const auto contexts = fixtures::random_logged(n, d, k, rng).contexts;
    s.logging = fixtures::random_tabular(contexts, k, rng);
    s.target = fixtures::random_tabular(contexts, k, rng);
    s.data = fixtures::logged_from_policy(contexts, s.logging, rng);
    s.in = prepare_inputs(s.data, s.target, &s.logging);
    const auto base = fit_ridge(s.data, 1.0, k, n >= 6 ? 3 : 1);
    s.ridge = base.predict_table(s.data);
    const auto model = fit_ib(s.data, base, s.in.weights, 0.5 + rng.uniform());
    s.ib = ib_table(model, s.in.target_probs, s.in.logging_probs);
    return s;
}

TEST(Estimators, ExactIdentitiesOnRandomInstances)
{
    Rng rng(101);
    for (int t = 0; t < 50; ++t) {
        const auto s = random_instance(rng);
        EXPECT_EQ(dr_ic(s.data, s.in, s.ib, 0.0).per_sample, dm_ib(s.in, s.ib).per_sample);
        EXPECT_EQ(dr_ic(s.data, s.in, s.ib, kInfinity).per_sample, dr(s.data, s.in, s.ib).per_sample);
        EXPECT_EQ(dr(s.data, s.in, Matrix::Zero(s.ridge.rows(), s.ridge.cols())).per_sample, ips(s.data, s.in).per_sample);
        EXPECT_EQ(switch_dr(s.data, s.in, s.ridge, kInfinity, SwitchBase::ips).per_sample, ips(s.data, s.in).per_sample);
        EXPECT_EQ(switch_dr(s.data, s.in, s.ridge, kInfinity).per_sample, dr(s.data, s.in, s.ridge).per_sample);
        EXPECT_EQ(switch_dr(s.data, s.in, s.ridge, 0.0 - 1.0).per_sample, dm(s.in, s.ridge).per_sample);
    }
}

TEST(Estimators, ValueIsMeanOfPerSampleTerms)
{
    Rng rng(7);
    const auto s = random_instance(rng);
    const auto e = dr(s.data, s.in, s.ridge);
    EXPECT_NEAR(e.value, e.per_sample.mean(), 1e-15);
    EXPECT_EQ(e.tag, "dr");
}

TEST(Estimators, IpsHandExample)
{
    LoggedDataset data;
    data.action_count = 2;
    data.contexts = Matrix::Zero(2, 1);
    data.contexts(1, 0) = 1.0;
    data.actions = {1, 0};
    data.rewards.resize(2);
    data.rewards << 1.0, 0.5;
    data.logging_probs.resize(2);
    data.logging_probs << 0.5, 0.25;
    std::map<std::vector<double>, std::vector<double>> rows;
    rows[{0.0}] = {0.2, 0.8};
    rows[{1.0}] = {0.5, 0.5};
    const auto target = DiscretePolicy::tabular(2, rows);
    const auto e = ips(data, target);
    EXPECT_DOUBLE_EQ(e.per_sample(0), 1.6);
    EXPECT_DOUBLE_EQ(e.per_sample(1), 1.0);
    EXPECT_DOUBLE_EQ(e.value, 1.3);
}

TEST(Estimators, DrIcAppliesCorrectionBelowThresholdOnly)
{
    const auto toy = sample_toy(40, 3);
    const auto in = prepare_inputs(toy.data, toy.target, &toy.logging);
    const auto base = fit_ridge(toy.data, 1.0, 2, 1);
    const auto model = fit_ib(toy.data, base, in.weights, 0.3);
    const Matrix table = ib_table(model, in.target_probs, in.logging_probs);
    const double tau = 2.2;
    const auto mixed = dr_ic(toy.data, in, table, tau);
    const auto plain = dm_ib(in, table);
    const auto full = dr(toy.data, in, table);
    for (Index i = 0; i < toy.data.size(); ++i) {
        if (in.kl(i) < tau) EXPECT_EQ(mixed.per_sample(i), full.per_sample(i));
        else EXPECT_EQ(mixed.per_sample(i), plain.per_sample(i));
    }
    EXPECT_EQ(mixed.param_tau, tau);
}

TEST(Estimators, DrIcNeedsKl)
{
    Rng rng(9);
    const auto s = random_instance(rng);
    const auto without = prepare_inputs(s.data, s.target);
    EXPECT_THROW(dr_ic(s.data, without, s.ib, 1.0), ValidationError);
    EXPECT_THROW(dr_ic(s.data, s.in, s.ib, -1.0), ValidationError);
}

TEST(Estimators, ShapeMismatchRejected)
{
    Rng rng(10);
    const auto s = random_instance(rng);
    EXPECT_THROW(dm(s.in, Matrix::Zero(s.ridge.rows() + 1, s.ridge.cols())), ValidationError);
}

TEST(Estimators, ModelFormsAgreeWithTableForms)
{
    Rng rng(11);
    const auto s = random_instance(rng);
    const auto model = fit_ridge(s.data, 1.0, s.data.action_count, 1);
    const Matrix table = model.predict_table(s.data);
    EXPECT_EQ(dm(s.data, s.target, model).value, dm(s.in, table).value);
    EXPECT_EQ(dr(s.data, s.target, model).value, dr(s.data, s.in, table).value);
    EXPECT_EQ(ips(s.data, s.target).value, ips(s.data, s.in).value);
    const auto ib = fit_ib(s.data, model, s.in.weights, 1.0);
    const auto e = dr_ic(s.data, s.target, s.logging, ib, 0.5);
    EXPECT_EQ(e.param_h, 1.0);
    EXPECT_EQ(e.value, dr_ic(s.data, s.in, ib_table(ib, s.in.target_probs, s.in.logging_probs), 0.5).value);
}

TEST(Estimators, IdenticalPoliciesGiveZeroKlAndUnitWeights)
{
    Rng rng(12);
    const auto s = random_instance(rng);
    const auto in = prepare_inputs(s.data, s.logging, &s.logging);
    for (Index i = 0; i < s.data.size(); ++i) {
        EXPECT_EQ(in.kl(i), 0.0);
        EXPECT_NEAR(in.weights.weights(i), 1.0, 1e-15);
    }
}

TEST(Estimators, CsvOutput)
{
    EstimatorOutput e = make_output("dr-ic", Vector::Constant(2, 0.25));
    e.param_tau = 0.5;
    std::ostringstream out;
    write_estimate_csv_header(out);
    write_estimate_csv(out, e);
    EXPECT_EQ(out.str(), "tag,param_h,param_tau,value\ndr-ic,,0.5,0.25\n");
}

}  // namespace
