#pragma once

#include "ope/common.hpp"
#include "ope/estimators.hpp"
#include "ope/grid.hpp"
#include "ope/reward.hpp"

#include <ostream>
#include <vector>

namespace ope {

/// Estimated MSE decomposition for one tuning value.
struct MseEstimate {
    double bias_sq_tilde = 0.0;  // (V_hat - V_ips)^2
    double bias_ub = 0.0;
    double bias_sq_hat = 0.0;    // min(bias_sq_tilde, bias_ub^2)
    double variance_hat = 0.0;
    double total = 0.0;
};

struct TracePoint {
    double param = 0.0;
    double value = 0.0;  // estimator value at this parameter
    MseEstimate mse;
};

struct Selection {
    double param = 0.0;
    std::vector<TracePoint> trace;

    const TracePoint& best() const
    {
        for (const auto& p : trace)
            if (p.param == param) return p;
        throw ValidationError("selected parameter missing from trace");
    }
};

/// Variance of the mean: (1/n^2) sum (Y_i - Y_bar)^2.
inline double variance_estimate(const Vector& per_sample)
{
    require(per_sample.size() >= 1, "variance needs at least one sample");
    const auto n = static_cast<double>(per_sample.size());
    const double mean = per_sample.sum() / n;
    return (per_sample.array() - mean).square().sum() / (n * n);
}

inline double bias_tilde_sq(double estimate, double ips_value)
{
    const double diff = estimate - ips_value;
    return diff * diff;
}

/// r_max * (fraction of logged contexts with D_KL(x_i) >= tau); equal to the
/// double sum over actions since sum_a pi(a|x_i) = 1.
inline double bias_ub(const Vector& kl_values, double tau, double r_max)
{
    require(kl_values.size() >= 1, "bias bound needs at least one sample");
    require(r_max > 0.0, "r_max must be positive");
    Index count = 0;
    for (Index i = 0; i < kl_values.size(); ++i)
        if (kl_values(i) >= tau) ++count;
    return r_max * static_cast<double>(count) / static_cast<double>(kl_values.size());
}

inline MseEstimate mse_estimate(const Vector& per_sample, double estimate, double ips_value,
                                std::optional<double> bias_bound)
{
    MseEstimate m;
    m.bias_sq_tilde = bias_tilde_sq(estimate, ips_value);
    m.bias_ub = bias_bound.value_or(kInfinity);
    m.bias_sq_hat = bias_bound ? std::min(m.bias_sq_tilde, *bias_bound * *bias_bound) : m.bias_sq_tilde;
    m.variance_hat = variance_estimate(per_sample);
    m.total = m.bias_sq_hat + m.variance_hat;
    return m;
}

inline constexpr double kTieTolerance = 1e-15;

namespace detail {

// Ascending scan; a later point must beat the incumbent by more than the tie tolerance.
inline Selection argmin_trace(std::vector<TracePoint> trace)
{
    require(!trace.empty(), "grid must not be empty");
    std::size_t best = 0;
    for (std::size_t k = 1; k < trace.size(); ++k) {
        const bool better = trace[k].mse.total < trace[best].mse.total - kTieTolerance;
        const bool tie = std::abs(trace[k].mse.total - trace[best].mse.total) <= kTieTolerance;
        if (better || (tie && trace[k].param < trace[best].param)) best = k;
    }
    const double param = trace[best].param;
    return {param, std::move(trace)};
}

}  // namespace detail

/// KL threshold minimizing min(B~ias^2, BiasUB^2) + Var over the grid.
inline Selection select_tau(const LoggedDataset& dataset, const PolicyInputs& in, const Matrix& ib_reward_table,
                            const TuningGrid& grid, double r_max)
{
    grid.validate();
    const double ips_value = ips(dataset, in).value;
    std::vector<TracePoint> trace;
    trace.reserve(grid.size());
    for (double tau : grid.values) {
        const auto est = dr_ic(dataset, in, ib_reward_table, tau);
        trace.push_back({tau, est.value, mse_estimate(est.per_sample, est.value, ips_value, bias_ub(in.kl, tau, r_max))});
    }
    return detail::argmin_trace(std::move(trace));
}

inline Selection select_tau(const LoggedDataset& dataset, const DiscretePolicy& target, const DiscretePolicy& logging,
                            const IBRewardModel& ib, const TuningGrid& grid, double r_max)
{
    const auto in = prepare_inputs(dataset, target, &logging);
    return select_tau(dataset, in, ib_table(ib, in.target_probs, in.logging_probs), grid, r_max);
}

/// Geometric grid between the 0.01 and 1.0 quantiles of the KL values,
/// optionally with the minimum (0th quantile) prepended.
inline TuningGrid kl_quantile_grid(const Vector& kl_values, std::size_t count = 30, bool include_zero_quantile = true)
{
    require(kl_values.size() >= 1, "KL grid needs at least one value");
    require(count >= 2, "KL grid needs at least two points");
    const std::vector<double> values(kl_values.data(), kl_values.data() + kl_values.size());
    constexpr double floor_value = 1e-9;
    const double lo = std::max(quantile(values, 0.01), floor_value);
    const double hi = std::max(quantile(values, 1.0), floor_value);
    std::vector<double> points;
    if (hi > lo) points = geometric_grid(lo, hi, count).values;
    else points.push_back(lo);
    if (include_zero_quantile) points.push_back(quantile(values, 0.0));
    return make_grid(std::move(points));
}

/// Geometric grid between the given quantiles of the logged importance weights.
inline TuningGrid weight_quantile_grid(const Vector& weights, std::size_t count = 25, double lo_level = 0.05,
                                       double hi_level = 0.95)
{
    require(weights.size() >= 1, "weight grid needs at least one value");
    const std::vector<double> values(weights.data(), weights.data() + weights.size());
    const double lo = std::max(quantile(values, lo_level), 1e-12);
    const double hi = std::max(quantile(values, hi_level), 1e-12);
    if (!(hi > lo)) return make_grid({lo});
    return geometric_grid(lo, hi, count);
}

inline TuningGrid default_bandwidth_grid() { return geometric_grid(0.01, 15.0, 30); }

/// Bandwidth minimizing B~ias^2 + Var of DR-IC at tau = infinity (the bias
/// bound is inactive there). `base` is the fitted ridge model shared across h.
inline Selection select_bandwidth(const LoggedDataset& dataset, const PolicyInputs& in, const IBRewardModel& fitted,
                                  const TuningGrid& grid)
{
    grid.validate();
    require(in.logging_probs.size() > 0, "bandwidth selection needs the logging policy table");
    const double ips_value = ips(dataset, in).value;
    std::vector<TracePoint> trace;
    trace.reserve(grid.size());
    for (double h : grid.values) {
        const auto model = fitted.with_bandwidth(h);
        const auto est = dr_ic(dataset, in, ib_table(model, in.target_probs, in.logging_probs), kInfinity);
        trace.push_back({h, est.value, mse_estimate(est.per_sample, est.value, ips_value, std::nullopt)});
    }
    return detail::argmin_trace(std::move(trace));
}

inline Selection select_bandwidth(const LoggedDataset& dataset, const DiscretePolicy& target,
                                  const DiscretePolicy& logging, const TuningGrid& grid, double lambda,
                                  std::size_t folds = 1)
{
    const auto in = prepare_inputs(dataset, target, &logging);
    auto base = fit_ridge(dataset, lambda, dataset.action_count, folds);
    const auto fitted = fit_ib(dataset, std::move(base), in.weights, grid.values.front());
    return select_bandwidth(dataset, in, fitted, grid);
}

/// Weight threshold for switch-DR by the same estimated-MSE criterion, with
/// the bias bound r_max * fraction(w_i > tau).
inline Selection select_switch_threshold(const LoggedDataset& dataset, const PolicyInputs& in,
                                         const Matrix& reward_table, const TuningGrid& grid, double r_max,
                                         SwitchBase base = SwitchBase::dr)
{
    grid.validate();
    const double ips_value = ips(dataset, in).value;
    const auto n = static_cast<double>(dataset.size());
    std::vector<TracePoint> trace;
    for (double tau : grid.values) {
        const auto est = switch_dr(dataset, in, reward_table, tau, base);
        double above = 0.0;
        for (Index i = 0; i < dataset.size(); ++i)
            if (in.weights.weights(i) > tau) above += 1.0;
        trace.push_back({tau, est.value, mse_estimate(est.per_sample, est.value, ips_value, r_max * above / n)});
    }
    return detail::argmin_trace(std::move(trace));
}

inline void write_trace_csv(std::ostream& out, const Selection& selection, const std::string& param_name)
{
    out << param_name << ",value,bias2_tilde,bias_ub,bias2,var,total,selected\n";
    for (const auto& p : selection.trace) {
        out << format_double(p.param) << ',' << format_double(p.value) << ',' << format_double(p.mse.bias_sq_tilde) << ','
            << format_double(p.mse.bias_ub) << ',' << format_double(p.mse.bias_sq_hat) << ','
            << format_double(p.mse.variance_hat) << ',' << format_double(p.mse.total) << ','
            << (p.param == selection.param ? 1 : 0) << '\n';
    }
}

}  // namespace ope
