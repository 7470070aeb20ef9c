#pragma once

#include "ope/common.hpp"
#include "ope/data.hpp"
#include "ope/policy.hpp"
#include "ope/reward.hpp"

#include <limits>
#include <optional>
#include <ostream>
#include <string>

namespace ope {

/// Point estimate plus the per-sample terms Y_i whose mean it is.
struct EstimatorOutput {
    double value = 0.0;
    Vector per_sample;
    std::string tag;
    double param_h = std::numeric_limits<double>::quiet_NaN();
    double param_tau = std::numeric_limits<double>::quiet_NaN();
};

inline EstimatorOutput make_output(std::string tag, Vector per_sample)
{
    require(per_sample.size() >= 1, "estimator needs at least one sample");
    EstimatorOutput out;
    double total = 0.0;
    for (Index i = 0; i < per_sample.size(); ++i) total += per_sample(i);
    out.value = total / static_cast<double>(per_sample.size());
    out.per_sample = std::move(per_sample);
    out.tag = std::move(tag);
    return out;
}

/// Policy quantities over the logged contexts, computed once per dataset.
struct PolicyInputs {
    Matrix target_probs;   // pi(a|x_i), n x |A|
    Matrix logging_probs;  // mu(a|x_i) from the logging policy; empty if not supplied
    WeightProfile weights;   // w_i = pi(a_i|x_i) / mu_i from recorded propensities
    Vector kl;             // D_KL(x_i); empty if no logging policy
};

inline PolicyInputs prepare_inputs(const LoggedDataset& dataset, const DiscretePolicy& target,
                                   const DiscretePolicy* logging = nullptr, std::optional<double> cap = std::nullopt)
{
    dataset.validate();
    require(target.action_count() == dataset.action_count, "target policy action count does not match dataset");
    PolicyInputs in;
    in.target_probs = target.probability_table(dataset.contexts);
    in.weights = logged_weights(dataset, in.target_probs, cap);
    if (logging) {
        require(logging->action_count() == dataset.action_count, "logging policy action count does not match dataset");
        in.logging_probs = logging->probability_table(dataset.contexts);
        in.kl.resize(dataset.size());
        for (Index i = 0; i < dataset.size(); ++i)
            in.kl(i) = kl_divergence(Vector(in.target_probs.row(i).transpose()), Vector(in.logging_probs.row(i).transpose()));
    }
    return in;
}

/// sum_a pi(a|x_i) r_hat(x_i, a), per logged context.
inline Vector dm_terms(const Matrix& target_probs, const Matrix& reward_table)
{
    require(target_probs.rows() == reward_table.rows() && target_probs.cols() == reward_table.cols(),
            "reward table does not match policy table");
    Vector out(target_probs.rows());
    for (Index i = 0; i < target_probs.rows(); ++i) {
        double s = 0.0;
        for (Index a = 0; a < target_probs.cols(); ++a) s += target_probs(i, a) * reward_table(i, a);
        out(i) = s;
    }
    return out;
}

inline double logged_prediction(const LoggedDataset& dataset, const Matrix& reward_table, Index i)
{
    return reward_table(i, static_cast<Index>(dataset.actions[static_cast<std::size_t>(i)]));
}

// --- table forms -----------------------------------------------------------

inline EstimatorOutput dm(const PolicyInputs& in, const Matrix& reward_table, std::string tag = "dm")
{
    return make_output(std::move(tag), dm_terms(in.target_probs, reward_table));
}

inline EstimatorOutput ips(const LoggedDataset& dataset, const PolicyInputs& in)
{
    Vector y(dataset.size());
    for (Index i = 0; i < dataset.size(); ++i) y(i) = in.weights.weights(i) * dataset.rewards(i);
    return make_output("ips", std::move(y));
}

inline EstimatorOutput dr(const LoggedDataset& dataset, const PolicyInputs& in, const Matrix& reward_table,
                          std::string tag = "dr")
{
    Vector y = dm_terms(in.target_probs, reward_table);
    for (Index i = 0; i < dataset.size(); ++i)
        y(i) = y(i) + in.weights.weights(i) * (dataset.rewards(i) - logged_prediction(dataset, reward_table, i));
    return make_output(std::move(tag), std::move(y));
}

enum class SwitchBase { ips, dr };

/// Per sample: the IPS (or DR) term when w_i <= tau_w, the DM term otherwise.
inline EstimatorOutput switch_dr(const LoggedDataset& dataset, const PolicyInputs& in, const Matrix& reward_table,
                                 double tau_w, SwitchBase base = SwitchBase::dr)
{
    const Vector direct = dm_terms(in.target_probs, reward_table);
    Vector y(dataset.size());
    for (Index i = 0; i < dataset.size(); ++i) {
        const double w = in.weights.weights(i);
        if (w <= tau_w) {
            y(i) = base == SwitchBase::ips
                       ? w * dataset.rewards(i)
                       : direct(i) + w * (dataset.rewards(i) - logged_prediction(dataset, reward_table, i));
        } else {
            y(i) = direct(i);
        }
    }
    auto out = make_output("switch-dr", std::move(y));
    out.param_tau = tau_w;
    return out;
}

inline EstimatorOutput dm_ib(const PolicyInputs& in, const Matrix& ib_reward_table)
{
    return make_output("dm-ib", dm_terms(in.target_probs, ib_reward_table));
}

/// Y_i(tau) = DM-IB term + w_i (r_i - r_IB(x_i, a_i)) when D_KL(x_i) < tau.
inline EstimatorOutput dr_ic(const LoggedDataset& dataset, const PolicyInputs& in, const Matrix& ib_reward_table,
                             double tau)
{
    require(in.kl.size() == dataset.size(), "dr-ic needs per-context KL divergences");
    require(tau >= 0.0, "threshold must be non-negative");
    Vector y = dm_terms(in.target_probs, ib_reward_table);
    for (Index i = 0; i < dataset.size(); ++i) {
        if (in.kl(i) < tau)
            y(i) = y(i) + in.weights.weights(i) * (dataset.rewards(i) - logged_prediction(dataset, ib_reward_table, i));
    }
    auto out = make_output("dr-ic", std::move(y));
    out.param_tau = tau;
    return out;
}

// --- model / policy forms --------------------------------------------------

inline Matrix reward_table(const RidgeModel& model, const LoggedDataset& dataset) { return model.predict_table(dataset); }

inline Matrix reward_table(const NWModel& model, const LoggedDataset&) { return nw_table(model); }

template <class RewardModel>
EstimatorOutput dm(const LoggedDataset& dataset, const DiscretePolicy& target, const RewardModel& model)
{
    return dm(prepare_inputs(dataset, target), reward_table(model, dataset));
}

inline EstimatorOutput ips(const LoggedDataset& dataset, const DiscretePolicy& target)
{
    return ips(dataset, prepare_inputs(dataset, target));
}

template <class RewardModel>
EstimatorOutput dr(const LoggedDataset& dataset, const DiscretePolicy& target, const RewardModel& model)
{
    return dr(dataset, prepare_inputs(dataset, target), reward_table(model, dataset));
}

template <class RewardModel>
EstimatorOutput switch_dr(const LoggedDataset& dataset, const DiscretePolicy& target, const RewardModel& model,
                          double tau_w, SwitchBase base = SwitchBase::dr)
{
    return switch_dr(dataset, prepare_inputs(dataset, target), reward_table(model, dataset), tau_w, base);
}

inline EstimatorOutput dm_ib(const LoggedDataset& dataset, const DiscretePolicy& target, const DiscretePolicy& logging,
                             const IBRewardModel& ib)
{
    const auto in = prepare_inputs(dataset, target, &logging);
    auto out = dm_ib(in, ib_table(ib, in.target_probs, in.logging_probs));
    out.param_h = ib.bandwidth;
    return out;
}

inline EstimatorOutput dr_ic(const LoggedDataset& dataset, const DiscretePolicy& target, const DiscretePolicy& logging,
                             const IBRewardModel& ib, double tau)
{
    const auto in = prepare_inputs(dataset, target, &logging);
    auto out = dr_ic(dataset, in, ib_table(ib, in.target_probs, in.logging_probs), tau);
    out.param_h = ib.bandwidth;
    return out;
}

inline void write_estimate_csv_header(std::ostream& out) { out << "tag,param_h,param_tau,value\n"; }

inline void write_estimate_csv(std::ostream& out, const EstimatorOutput& e)
{
    auto param = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    out << e.tag << ',' << param(e.param_h) << ',' << param(e.param_tau) << ',' << format_double(e.value) << '\n';
}

}  // namespace ope
