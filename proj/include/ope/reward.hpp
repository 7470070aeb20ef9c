#pragma once

#include "ope/common.hpp"
#include "ope/data.hpp"
#include "ope/grid.hpp"
#include "ope/policy.hpp"

#include <optional>
#include <ostream>
#include <vector>

namespace ope {

// ---------------------------------------------------------------------------
// Linear base fit on z = (x, onehot(a))

enum class BaseFit { ridge, logistic };

inline Vector encode_pair(const ContextView& x, std::size_t action, std::size_t action_count)
{
    Vector z = Vector::Zero(x.size() + static_cast<Index>(action_count));
    z.head(x.size()) = x.transpose();
    z(x.size() + static_cast<Index>(action)) = 1.0;
    return z;
}

inline Matrix encode_logged(const LoggedDataset& data)
{
    const Index d = data.dimension();
    Matrix z = Matrix::Zero(data.size(), d + static_cast<Index>(data.action_count));
    z.leftCols(d) = data.contexts;
    for (Index i = 0; i < data.size(); ++i) z(i, d + static_cast<Index>(data.actions[static_cast<std::size_t>(i)])) = 1.0;
    return z;
}

/// theta = (Z^T Z + lambda I)^{-1} Z^T r.
inline Vector ridge_solve(const Matrix& z, const Vector& r, double lambda)
{
    require(lambda >= 0.0, "ridge lambda must be non-negative");
    Matrix gram = z.transpose() * z;
    gram.diagonal().array() += lambda;
    Eigen::LDLT<Matrix> ldlt(gram);
    const Vector pivots = ldlt.vectorD().cwiseAbs();
    const bool singular = pivots.size() > 0 && !(pivots.minCoeff() > 1e-13 * pivots.maxCoeff());
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || singular)
        throw NumericError("singular ridge system; use lambda > 0");
    Vector theta = ldlt.solve(z.transpose() * r);
    if (!theta.allFinite()) throw NumericError("non-finite ridge solution; use lambda > 0");
    return theta;
}

/// Penalized logistic fit on soft targets in [0, 1] (Newton iterations).
inline Vector logistic_base_solve(const Matrix& z, const Vector& r, double lambda, int max_iters = 100)
{
    require(lambda >= 0.0, "lambda must be non-negative");
    require((r.array() >= 0.0).all() && (r.array() <= 1.0).all(), "logistic base fit needs rewards in [0, 1]");
    Vector theta = Vector::Zero(z.cols());
    // A tiny ridge keeps separable fits finite when lambda = 0.
    const double penalty = std::max(lambda, 1e-8);
    for (int iter = 0; iter < max_iters; ++iter) {
        Vector p = (z * theta).unaryExpr([](double t) { return logistic(t); });
        Vector grad = z.transpose() * (r - p) - penalty * theta;
        Vector curvature = (p.array() * (1.0 - p.array())).matrix();
        Matrix hessian = z.transpose() * curvature.asDiagonal() * z;
        hessian.diagonal().array() += penalty;
        Vector delta = hessian.ldlt().solve(grad);
        if (!delta.allFinite()) throw NumericError("logistic base fit diverged");
        theta += delta;
        if (delta.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    return theta;
}

/// Base reward fit. With cross-fitting, sample i (and every derived pair
/// built from context i) is predicted by the fit that excluded fold i mod k.
class RidgeModel {
public:
    RidgeModel() = default;

    double lambda() const noexcept { return lambda_; }
    std::size_t folds() const noexcept { return fold_thetas_.size(); }
    std::size_t action_count() const noexcept { return action_count_; }
    BaseFit kind() const noexcept { return kind_; }
    /// Fit on all samples.
    const Vector& theta() const noexcept { return full_theta_; }
    const Vector& fold_theta(std::size_t fold) const { return fold_thetas_.at(fold); }

    double predict(const ContextView& x, std::size_t action, std::optional<std::size_t> origin = std::nullopt) const
    {
        require(action < action_count_, "action out of range");
        const Vector& theta = origin && folds() > 1 ? fold_thetas_[*origin % folds()] : full_theta_;
        const Index d = x.size();
        require(d + static_cast<Index>(action_count_) == theta.size(), "context dimension does not match model");
        const double linear = x.dot(theta.head(d).transpose()) + theta(d + static_cast<Index>(action));
        return kind_ == BaseFit::logistic ? logistic(linear) : linear;
    }

    /// r_hat(x_i, a) for every logged context and action (n x |A|).
    Matrix predict_table(const LoggedDataset& data) const
    {
        const Index d = data.dimension();
        const auto k = static_cast<Index>(action_count_);
        require(d + k == full_theta_.size(), "context dimension does not match model");
        Matrix table(data.size(), k);
        for (Index i = 0; i < data.size(); ++i) {
            const Vector& theta = folds() > 1 ? fold_thetas_[static_cast<std::size_t>(i) % folds()] : full_theta_;
            const double shared = data.contexts.row(i).dot(theta.head(d).transpose());
            for (Index a = 0; a < k; ++a) {
                const double linear = shared + theta(d + a);
                table(i, a) = kind_ == BaseFit::logistic ? logistic(linear) : linear;
            }
        }
        return table;
    }

    /// r - Z theta, with cross-fit routing.
    Vector residuals(const LoggedDataset& data) const
    {
        const Matrix table = predict_table(data);
        Vector out(data.size());
        for (Index i = 0; i < data.size(); ++i)
            out(i) = data.rewards(i) - table(i, static_cast<Index>(data.actions[static_cast<std::size_t>(i)]));
        return out;
    }

    friend RidgeModel fit_ridge(const LoggedDataset&, double, std::size_t, std::size_t, BaseFit);

private:
    std::vector<Vector> fold_thetas_;
    Vector full_theta_;
    double lambda_ = 0.0;
    std::size_t action_count_ = 0;
    BaseFit kind_ = BaseFit::ridge;
};

inline RidgeModel fit_ridge(const LoggedDataset& dataset, double lambda, std::size_t action_count,
                            std::size_t cross_fit_folds = 1, BaseFit kind = BaseFit::ridge)
{
    require(dataset.size() >= 1, "ridge fit needs at least one sample");
    require(cross_fit_folds == 1 || cross_fit_folds == 3, "cross-fit folds must be 1 or 3");
    require(action_count >= 1, "ridge fit needs at least one action");
    for (std::size_t a : dataset.actions) require(a < action_count, "action out of range");

    RidgeModel model;
    model.lambda_ = lambda;
    model.action_count_ = action_count;
    model.kind_ = kind;

    LoggedDataset encoded_view = dataset;
    encoded_view.action_count = action_count;
    const Matrix z = encode_logged(encoded_view);
    auto solve = [&](const Matrix& zz, const Vector& rr) {
        return kind == BaseFit::ridge ? ridge_solve(zz, rr, lambda) : logistic_base_solve(zz, rr, lambda);
    };
    model.full_theta_ = solve(z, dataset.rewards);

    if (cross_fit_folds == 1) {
        model.fold_thetas_.push_back(model.full_theta_);
        return model;
    }
    for (std::size_t fold = 0; fold < cross_fit_folds; ++fold) {
        std::vector<Index> keep;
        for (Index i = 0; i < dataset.size(); ++i)
            if (static_cast<std::size_t>(i) % cross_fit_folds != fold) keep.push_back(i);
        Matrix zf(static_cast<Index>(keep.size()), z.cols());
        Vector rf(static_cast<Index>(keep.size()));
        for (std::size_t k = 0; k < keep.size(); ++k) {
            zf.row(static_cast<Index>(k)) = z.row(keep[k]);
            rf(static_cast<Index>(k)) = dataset.rewards(keep[k]);
        }
        model.fold_thetas_.push_back(solve(zf, rf));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Information-borrowing kernel

inline constexpr double kInvSqrtTwoPi = 0.39894228040143267793994605993438;
inline constexpr double kRowSumFloor = 1e-12;
inline constexpr double kSigmaFloor = 1e-12;

/// Gaussian kernel truncated at equal actions, with bandwidth scaled by sqrt(w_test w_train):
///   exp(-|x_test - x_train|^2 / (2 h^2 w_test w_train)) / (sqrt(2 pi) h sqrt(w_test w_train)).
inline double kernel_value(const ContextView& x_test, const ContextView& x_train, bool same_action, double w_test,
                           double w_train, double h)
{
    if (!same_action) return 0.0;
    const double ww = w_test * w_train;
    const double scale = h * std::sqrt(ww);
    return kInvSqrtTwoPi / scale * std::exp(-(x_test - x_train).squaredNorm() / (2.0 * h * h * ww));
}

/// [Sigma(r~, r)]_{ji} over derived pairs j and logged samples i.
inline Matrix build_cross_covariance(const DerivedDataset& derived, const LoggedDataset& dataset,
                                     const Vector& test_weights, const Vector& train_weights, double h)
{
    require(h > 0.0, "bandwidth must be positive");
    require(derived.parent_n == static_cast<std::size_t>(dataset.size()), "derived dataset does not match logged dataset");
    require(test_weights.size() == static_cast<Index>(derived.size()), "one test weight per derived pair required");
    require(train_weights.size() == dataset.size(), "one train weight per logged sample required");
    Matrix sigma(static_cast<Index>(derived.size()), dataset.size());
    for (std::size_t j = 0; j < derived.size(); ++j) {
        const auto [context, action] = derived.pairs[j];
        for (Index i = 0; i < dataset.size(); ++i) {
            sigma(static_cast<Index>(j), i) =
                kernel_value(dataset.contexts.row(static_cast<Index>(context)), dataset.contexts.row(i),
                             action == dataset.actions[static_cast<std::size_t>(i)], test_weights(static_cast<Index>(j)),
                             train_weights(i), h);
        }
    }
    return sigma;
}

/// Population variance floored at 1e-12.
inline double estimate_sigma_r(const Vector& residuals)
{
    require(residuals.size() >= 1, "residuals must be non-empty");
    const double mean = residuals.mean();
    const double var = (residuals.array() - mean).square().sum() / static_cast<double>(residuals.size());
    return std::max(var, kSigmaFloor);
}

/// w~_j = pi(a|x_i) / mu(a|x_i) for every derived pair (i, a), row-major.
inline Vector derived_weights(const Matrix& target_probs, const Matrix& logging_probs)
{
    require(target_probs.rows() == logging_probs.rows() && target_probs.cols() == logging_probs.cols(),
            "policy tables differ in shape");
    Vector out(target_probs.size());
    for (Index i = 0; i < target_probs.rows(); ++i)
        for (Index a = 0; a < target_probs.cols(); ++a) {
            const double mu = logging_probs(i, a);
            const double pi = target_probs(i, a);
            if (mu <= 0.0 && pi > 0.0) throw SupportError("logging probability is zero where target is positive");
            out(i * target_probs.cols() + a) = mu > 0.0 ? pi / mu : 0.0;
        }
    return out;
}

/// Fitted information-borrowing reward model. Holds the logged contexts,
/// actions, base residuals and weights it borrows from.
struct IBRewardModel {
    RidgeModel base;
    double bandwidth = 1.0;
    double sigma_r = 1.0;
    Matrix contexts;
    std::vector<std::size_t> actions;
    Vector residuals;
    WeightProfile weights;
    // Squared context distances between logged samples; shared across bandwidths.
    Matrix squared_distances;

    Index size() const noexcept { return contexts.rows(); }
    std::size_t action_count() const noexcept { return base.action_count(); }

    IBRewardModel with_bandwidth(double h) const
    {
        require(h > 0.0, "bandwidth must be positive");
        IBRewardModel copy = *this;
        copy.bandwidth = h;
        return copy;
    }
};

inline Matrix pairwise_squared_distances(const Matrix& contexts)
{
    const Vector norms = contexts.rowwise().squaredNorm();
    Matrix d = (-2.0 * contexts * contexts.transpose()).colwise() + norms;
    d.rowwise() += norms.transpose();
    d = d.cwiseMax(0.0);
    d.diagonal().setZero();
    return d;
}

/// Builds r_IB from a fitted base. `train_weights` are w_i for the logged samples.
inline IBRewardModel fit_ib(const LoggedDataset& dataset, RidgeModel base, const WeightProfile& train_weights, double h)
{
    require(h > 0.0, "bandwidth must be positive");
    require(train_weights.weights.size() == dataset.size(), "one weight per logged sample required");
    require((train_weights.weights.array() > 0.0).all() && train_weights.weights.allFinite(),
            "information borrowing needs strictly positive finite weights");
    IBRewardModel model;
    model.residuals = base.residuals(dataset);
    model.sigma_r = estimate_sigma_r(model.residuals);
    model.base = std::move(base);
    model.bandwidth = h;
    model.contexts = dataset.contexts;
    model.actions = dataset.actions;
    model.weights = train_weights;
    model.squared_distances = pairwise_squared_distances(dataset.contexts);
    return model;
}

inline IBRewardModel fit_ib(const LoggedDataset& dataset, const DiscretePolicy& target, double h, double lambda,
                            std::size_t folds = 1, BaseFit kind = BaseFit::ridge)
{
    auto base = fit_ridge(dataset, lambda, dataset.action_count, folds, kind);
    return fit_ib(dataset, std::move(base), logged_weights(dataset, target), h);
}

struct IBPrediction {
    Vector values;                   // r_IB per derived pair
    std::vector<bool> ridge_fallback;  // true where the kernel row sum fell below the floor
};

/// r_IB(z~_j) = z~_j theta + (1/D_j) sum_i S_ji (r_i - z_i theta), S = Sigma(r~, r) / sigma_r,
/// D_j = sum_i S_ji. Computed in log space; rows with D_j < 1e-12 keep the base prediction.
inline IBPrediction predict_ib_detailed(const IBRewardModel& model, const DerivedDataset& derived,
                                        const Matrix& target_probs, const Matrix& logging_probs)
{
    const Index n = model.size();
    const auto k = static_cast<Index>(model.action_count());
    require(derived.parent_n == static_cast<std::size_t>(n) && derived.action_count == model.action_count(),
            "derived dataset does not match the model");
    require(target_probs.rows() == n && target_probs.cols() == k, "target table has the wrong shape");
    const Vector test_weights = derived_weights(target_probs, logging_probs);

    LoggedDataset view;
    view.contexts = model.contexts;
    view.actions = model.actions;
    view.action_count = model.action_count();
    const Matrix base_table = model.base.predict_table(view);

    std::vector<std::vector<Index>> by_action(static_cast<std::size_t>(k));
    for (Index i = 0; i < n; ++i) by_action[model.actions[static_cast<std::size_t>(i)]].push_back(i);

    const double h = model.bandwidth;
    const double log_prefactor = std::log(kInvSqrtTwoPi / h) - std::log(model.sigma_r);
    const double log_floor = std::log(kRowSumFloor);
    const Vector& w = model.weights.weights;

    IBPrediction out{Vector(static_cast<Index>(derived.size())), std::vector<bool>(derived.size(), false)};
    std::vector<double> logs;
    for (std::size_t j = 0; j < derived.size(); ++j) {
        const auto [context, action] = derived.pairs[j];
        const auto c = static_cast<Index>(context);
        const double base = base_table(c, static_cast<Index>(action));
        const double wt = test_weights(static_cast<Index>(j));
        const auto& members = by_action[action];
        if (members.empty() || !(wt > 0.0)) {
            out.values(static_cast<Index>(j)) = base;
            out.ridge_fallback[j] = true;
            continue;
        }
        logs.resize(members.size());
        double top = -kInfinity;
        for (std::size_t m = 0; m < members.size(); ++m) {
            const Index i = members[m];
            const double ww = wt * w(i);
            logs[m] = log_prefactor - 0.5 * std::log(ww) - model.squared_distances(c, i) / (2.0 * h * h * ww);
            top = std::max(top, logs[m]);
        }
        double total = 0.0, borrowed = 0.0;
        for (std::size_t m = 0; m < members.size(); ++m) {
            const double e = std::exp(logs[m] - top);
            total += e;
            borrowed += e * model.residuals(members[m]);
        }
        const double log_row_sum = top + std::log(total);
        if (!(log_row_sum >= log_floor)) {
            out.values(static_cast<Index>(j)) = base;
            out.ridge_fallback[j] = true;
            continue;
        }
        const double value = base + borrowed / total;
        if (!std::isfinite(value))
            throw NumericError("non-finite information-borrowing prediction at derived pair (" +
                               std::to_string(context) + ", " + std::to_string(action) + ")");
        out.values(static_cast<Index>(j)) = value;
    }
    return out;
}

inline Vector predict_ib(const IBRewardModel& model, const DerivedDataset& derived, const Matrix& target_probs,
                         const Matrix& logging_probs)
{
    return predict_ib_detailed(model, derived, target_probs, logging_probs).values;
}

inline Vector predict_ib(const IBRewardModel& model, const DerivedDataset& derived, const DiscretePolicy& target,
                         const DiscretePolicy& logging)
{
    return predict_ib(model, derived, target.probability_table(model.contexts), logging.probability_table(model.contexts));
}

/// Reshapes per-derived-pair values into an n x |A| table.
inline Matrix pairs_to_table(const Vector& values, std::size_t action_count)
{
    const auto k = static_cast<Index>(action_count);
    require(values.size() % k == 0, "value count is not a multiple of the action count");
    Matrix table(values.size() / k, k);
    for (Index i = 0; i < table.rows(); ++i)
        for (Index a = 0; a < k; ++a) table(i, a) = values(i * k + a);
    return table;
}

/// r_IB for every (x_i, a), as an n x |A| table.
inline Matrix ib_table(const IBRewardModel& model, const Matrix& target_probs, const Matrix& logging_probs)
{
    DerivedDataset derived;
    derived.parent_n = static_cast<std::size_t>(model.size());
    derived.action_count = model.action_count();
    for (std::size_t i = 0; i < derived.parent_n; ++i)
        for (std::size_t a = 0; a < derived.action_count; ++a) derived.pairs.emplace_back(i, a);
    return pairs_to_table(predict_ib(model, derived, target_probs, logging_probs), model.action_count());
}

// ---------------------------------------------------------------------------
// Diagnostics

struct RewardDiagnostics {
    Vector residuals;
    Vector ib_bias_probe;  // r_IB - E[r|x,a] per derived pair; empty without an oracle
};

inline RewardDiagnostics reward_diagnostics(const IBRewardModel& model, const Matrix& ib_predictions,
                                            const SyntheticEnvironment* oracle = nullptr)
{
    RewardDiagnostics diag{model.residuals, Vector()};
    if (oracle) {
        const auto k = static_cast<Index>(model.action_count());
        diag.ib_bias_probe.resize(model.size() * k);
        for (Index i = 0; i < model.size(); ++i)
            for (Index a = 0; a < k; ++a)
                diag.ib_bias_probe(i * k + a) =
                    ib_predictions(i, a) - oracle->expected_reward(model.contexts.row(i), static_cast<std::size_t>(a));
    }
    return diag;
}

inline void write_diagnostics_csv(std::ostream& out, const RewardDiagnostics& diag, std::size_t action_count)
{
    out << "kind,context,action,value\n";
    for (Index i = 0; i < diag.residuals.size(); ++i) out << "residual," << i << ",," << format_double(diag.residuals(i)) << '\n';
    const auto k = static_cast<Index>(action_count);
    for (Index j = 0; j < diag.ib_bias_probe.size(); ++j)
        out << "ib_bias," << j / k << ',' << j % k << ',' << format_double(diag.ib_bias_probe(j)) << '\n';
}

// ---------------------------------------------------------------------------
// Nadaraya-Watson baselines, K = exp(-h |z - z_i|)

enum class NWVariant { plain, action_truncated, adaptive };

struct NWModel {
    double bandwidth = 1.0;
    NWVariant variant = NWVariant::action_truncated;
    Matrix contexts;
    std::vector<std::size_t> actions;
    Vector rewards;
    Vector weights;  // w_i; used by the adaptive variant
    std::size_t action_count = 0;
};

inline NWModel make_nw(const LoggedDataset& data, double h, NWVariant variant, const Vector& weights = Vector())
{
    require(h > 0.0, "bandwidth must be positive");
    require(data.size() >= 1, "NW model needs at least one sample");
    require(variant != NWVariant::adaptive || weights.size() == data.size(), "adaptive NW needs one weight per sample");
    return NWModel{h, variant, data.contexts, data.actions, data.rewards,
                   weights.size() ? weights : Vector::Ones(data.size()), data.action_count};
}

struct NWPrediction {
    double value = 0.0;
    bool fallback = false;  // truncated variant had no same-action sample
};

namespace detail {

// Plain variant: one-hot action encoding, so |z - z_i|^2 = |x - x_i|^2 + 2 [a != a_i].
inline NWPrediction nw_average(const NWModel& model, const ContextView& x, std::size_t action, double w_test,
                               std::optional<Index> exclude, bool truncate)
{
    const bool adaptive = model.variant == NWVariant::adaptive && truncate;
    std::vector<std::pair<double, double>> terms;  // (exponent, reward)
    double top = -kInfinity;
    for (Index i = 0; i < model.contexts.rows(); ++i) {
        if (exclude && *exclude == i) continue;
        const bool same = model.actions[static_cast<std::size_t>(i)] == action;
        if (truncate && !same) continue;
        double sq = (model.contexts.row(i) - x).squaredNorm();
        if (!truncate && !same) sq += 2.0;
        double exponent = -model.bandwidth * std::sqrt(sq);
        if (adaptive) exponent /= w_test * model.weights(i);
        terms.emplace_back(exponent, model.rewards(i));
        top = std::max(top, exponent);
    }
    if (terms.empty()) return {0.0, true};
    double num = 0.0, den = 0.0;
    for (const auto& [exponent, reward] : terms) {
        const double k = std::exp(exponent - top);
        num += k * reward;
        den += k;
    }
    return {num / den, false};
}

}  // namespace detail

inline NWPrediction predict_nw(const NWModel& model, const ContextView& x, std::size_t action, double w_test = 1.0,
                               std::optional<Index> exclude = std::nullopt)
{
    require(model.contexts.rows() >= 1, "NW model is empty");
    const bool truncate = model.variant != NWVariant::plain;
    auto result = detail::nw_average(model, x, action, w_test, exclude, truncate);
    if (truncate && result.fallback) {
        result = detail::nw_average(model, x, action, w_test, exclude, false);
        result.fallback = true;
    }
    return result;
}

/// NW predictions for every (x_i, a), as an n x |A| table. `test_weights` is
/// row-major per derived pair (used by the adaptive variant).
inline Matrix nw_table(const NWModel& model, const Vector& test_weights = Vector())
{
    const auto k = static_cast<Index>(model.action_count);
    Matrix table(model.contexts.rows(), k);
    for (Index i = 0; i < table.rows(); ++i)
        for (Index a = 0; a < k; ++a) {
            const double wt = test_weights.size() ? test_weights(i * k + a) : 1.0;
            table(i, a) = predict_nw(model, model.contexts.row(i), static_cast<std::size_t>(a), wt).value;
        }
    return table;
}

inline TuningGrid default_nw_grid() { return geometric_grid(0.01, 100.0, 20); }

/// Grid bandwidth minimizing leave-one-out squared error; ties go to the smaller bandwidth.
inline double loo_cv_bandwidth(const LoggedDataset& dataset, const TuningGrid& grid, NWVariant variant,
                               const Vector& weights = Vector())
{
    require(dataset.size() >= 2, "leave-one-out needs at least two samples");
    require(!grid.empty(), "bandwidth grid must not be empty");
    double best_h = 0.0, best_err = kInfinity;
    for (double h : grid.values) {
        const NWModel model = make_nw(dataset, h, variant, weights);
        double err = 0.0;
        for (Index i = 0; i < dataset.size(); ++i) {
            const double wt = variant == NWVariant::adaptive ? model.weights(i) : 1.0;
            const auto pred = predict_nw(model, dataset.contexts.row(i), dataset.actions[static_cast<std::size_t>(i)], wt, i);
            const double diff = pred.value - dataset.rewards(i);
            err += diff * diff;
        }
        err /= static_cast<double>(dataset.size());
        if (err < best_err || (err == best_err && h < best_h)) {
            best_err = err;
            best_h = h;
        }
    }
    return best_h;
}

}  // namespace ope
