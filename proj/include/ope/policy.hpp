#pragma once

#include "ope/common.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace ope {

using ContextView = Eigen::Ref<const Eigen::RowVectorXd>;

/// Conditional action distribution pi(a|x) over a finite action set.
///
/// Four forms are supported:
///   - uniform over all actions;
///   - tabular, keyed by exact context value;
///   - multinomial logistic, softmax(x W) with an optional trailing bias row;
///   - the two-action closed form pi(1|x) = logistic(slope * x_0).
class DiscretePolicy {
public:
    struct Uniform {};
    struct Tabular {
        std::map<std::vector<double>, std::vector<double>> rows;
        Index dimension = 0;
    };
    struct Logistic {
        Matrix weights;  // (d [+1 if intercept]) x |A|
        bool intercept = false;
    };
    struct ClosedForm {
        double slope = 0.0;
    };
    using Form = std::variant<Uniform, Tabular, Logistic, ClosedForm>;

    static DiscretePolicy uniform(std::size_t action_count)
    {
        require(action_count >= 1, "uniform policy needs at least one action");
        return DiscretePolicy(Uniform{}, action_count);
    }

    static DiscretePolicy tabular(std::size_t action_count,
                                  std::map<std::vector<double>, std::vector<double>> rows)
    {
        require(action_count >= 1, "tabular policy needs at least one action");
        require(!rows.empty(), "tabular policy needs at least one row");
        const auto dimension = static_cast<Index>(rows.begin()->first.size());
        for (const auto& [context, probs] : rows) {
            require(static_cast<Index>(context.size()) == dimension,
                    "tabular policy contexts must share one dimension");
            require(probs.size() == action_count, "tabular row has wrong action count");
            double total = 0.0;
            for (double p : probs) {
                require(std::isfinite(p) && p >= 0.0, "tabular probabilities must be non-negative");
                total += p;
            }
            require(std::abs(total - 1.0) <= 1e-9, "tabular probabilities must sum to one");
        }
        return DiscretePolicy(Tabular{std::move(rows), dimension}, action_count);
    }

    static DiscretePolicy logistic(Matrix weights, bool intercept = false)
    {
        require(weights.cols() >= 1, "logistic policy needs at least one action");
        require(weights.allFinite(), "logistic weights must be finite");
        require(!intercept || weights.rows() >= 1, "intercept requires a bias row");
        const auto actions = static_cast<std::size_t>(weights.cols());
        return DiscretePolicy(Logistic{std::move(weights), intercept}, actions);
    }

    /// Two actions, pi(1|x) = logistic(slope * x_0).
    static DiscretePolicy closed_form(double slope)
    {
        require(std::isfinite(slope), "slope must be finite");
        return DiscretePolicy(ClosedForm{slope}, 2);
    }

    std::size_t action_count() const noexcept { return action_count_; }
    const Form& form() const noexcept { return form_; }

    std::string form_name() const
    {
        return std::visit(
            [](const auto& f) -> std::string {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, Uniform>) return "uniform";
                else if constexpr (std::is_same_v<T, Tabular>) return "tabular";
                else if constexpr (std::is_same_v<T, Logistic>) return "logistic";
                else return "closed_form";
            },
            form_);
    }

    /// Context dimension the policy expects; nullopt if any dimension is accepted.
    std::optional<Index> dimension() const
    {
        if (const auto* t = std::get_if<Tabular>(&form_)) return t->dimension;
        if (const auto* l = std::get_if<Logistic>(&form_))
            return l->weights.rows() - (l->intercept ? 1 : 0);
        return std::nullopt;
    }

    Vector probabilities(const ContextView& x) const
    {
        if (auto d = dimension()) {
            if (x.size() != *d)
                throw ValidationError("context dimension " + std::to_string(x.size()) +
                                      " does not match policy dimension " + std::to_string(*d));
        }
        return std::visit([&](const auto& f) { return eval(f, x); }, form_);
    }

    /// Probabilities for every row of `contexts` (n x |A|).
    Matrix probability_table(const Matrix& contexts) const
    {
        if (const auto* l = std::get_if<Logistic>(&form_)) {
            const Index d = l->weights.rows() - (l->intercept ? 1 : 0);
            require(contexts.cols() == d, "context dimension does not match policy dimension");
            Matrix scores = contexts * l->weights.topRows(d);
            if (l->intercept) scores.rowwise() += l->weights.row(d);
            softmax_rows(scores);
            return scores;
        }
        Matrix table(contexts.rows(), static_cast<Index>(action_count_));
        for (Index i = 0; i < contexts.rows(); ++i) table.row(i) = probabilities(contexts.row(i)).transpose();
        return table;
    }

    static void softmax_rows(Matrix& scores)
    {
        for (Index i = 0; i < scores.rows(); ++i) {
            auto row = scores.row(i);
            row.array() -= row.maxCoeff();
            row = row.array().exp().matrix();
            row /= row.sum();
        }
    }

private:
    DiscretePolicy(Form form, std::size_t action_count)
        : form_(std::move(form)), action_count_(action_count) {}

    Vector eval(const Uniform&, const ContextView&) const
    {
        return Vector::Constant(static_cast<Index>(action_count_), 1.0 / static_cast<double>(action_count_));
    }

    Vector eval(const Tabular& t, const ContextView& x) const
    {
        std::vector<double> key(x.data(), x.data() + x.size());
        auto it = t.rows.find(key);
        if (it == t.rows.end()) throw ValidationError("context not present in tabular policy");
        return Eigen::Map<const Vector>(it->second.data(), static_cast<Index>(it->second.size()));
    }

    Vector eval(const Logistic& l, const ContextView& x) const
    {
        const Index d = x.size();
        Eigen::RowVectorXd scores = x * l.weights.topRows(d);
        if (l.intercept) scores += l.weights.row(d);
        Matrix m = scores;
        softmax_rows(m);
        return m.row(0).transpose();
    }

    Vector eval(const ClosedForm& c, const ContextView& x) const
    {
        require(x.size() >= 1, "closed-form policy needs a non-empty context");
        // Both branches from the logistic directly; 1 - p cancels badly near p = 1.
        const double t = c.slope * x(0);
        Vector out(2);
        out << ope::logistic(-t), ope::logistic(t);
        return out;
    }

    Form form_;
    std::size_t action_count_;
};

inline Vector action_probabilities(const DiscretePolicy& policy, const ContextView& context)
{
    return policy.probabilities(context);
}

/// pi(a|x) / mu(a|x), optionally min-ed with `cap`.
inline double importance_weight(const DiscretePolicy& target, const DiscretePolicy& logging,
                                const ContextView& context, std::size_t action,
                                std::optional<double> cap = std::nullopt)
{
    require(action < target.action_count() && action < logging.action_count(), "action index out of range");
    const double pi = target.probabilities(context)(static_cast<Index>(action));
    const double mu = logging.probabilities(context)(static_cast<Index>(action));
    if (mu <= 0.0) {
        if (pi <= 0.0) return 0.0;
        throw SupportError("logging probability is zero where the target probability is positive");
    }
    const double w = pi / mu;
    return cap ? std::min(w, *cap) : w;
}

/// KL(p || q) for two probability vectors, with 0 log(0/q) = 0.
inline double kl_divergence(const Vector& p, const Vector& q)
{
    require(p.size() == q.size(), "distributions differ in support size");
    double total = 0.0;
    for (Index a = 0; a < p.size(); ++a) {
        if (p(a) <= 0.0) continue;
        if (q(a) <= 0.0) throw SupportError("KL divergence undefined: q(a) = 0 where p(a) > 0");
        total += p(a) * std::log(p(a) / q(a));
    }
    return std::max(total, 0.0);
}

/// Context-specific D_KL(pi(.|x) || mu(.|x)).
inline double kl_divergence(const DiscretePolicy& target, const DiscretePolicy& logging, const ContextView& context)
{
    require(target.action_count() == logging.action_count(), "policies differ in action count");
    return kl_divergence(target.probabilities(context), logging.probabilities(context));
}

/// Inverse-CDF draw from a probability vector using one uniform variate.
inline std::size_t sample_from(const Vector& probs, Rng& rng)
{
    const double u = rng.uniform();
    double cdf = 0.0;
    Index last_positive = 0;
    for (Index a = 0; a < probs.size(); ++a) {
        if (probs(a) <= 0.0) continue;
        last_positive = a;
        cdf += probs(a);
        if (u < cdf) return static_cast<std::size_t>(a);
    }
    return static_cast<std::size_t>(last_positive);
}

inline std::size_t sample_action(const DiscretePolicy& policy, const ContextView& context, Rng& rng)
{
    return sample_from(policy.probabilities(context), rng);
}

// ---------------------------------------------------------------------------
// Multinomial logistic training

struct LogisticOptions {
    double l2_penalty = 1e-4;
    int max_iters = 500;
    double tolerance = 1e-6;
    bool intercept = false;
    std::size_t action_count = 0;  // 0: infer as max label + 1
};

namespace detail {

inline double logistic_objective(const Matrix& x, const std::vector<std::size_t>& y, const Matrix& w,
                                 double l2, Matrix* probs_out)
{
    Matrix scores = x * w;
    double loglik = 0.0;
    for (Index i = 0; i < scores.rows(); ++i) {
        auto row = scores.row(i);
        const double top = row.maxCoeff();
        const double lse = top + std::log((row.array() - top).exp().sum());
        loglik += row(static_cast<Index>(y[static_cast<std::size_t>(i)])) - lse;
        if (probs_out) probs_out->row(i) = (row.array() - lse).exp().matrix();
    }
    return loglik / static_cast<double>(x.rows()) - 0.5 * l2 * w.squaredNorm();
}

}  // namespace detail

/// Fits a multinomial logistic policy by full-batch gradient ascent with a
/// backtracking (Armijo) step. The objective is the mean log-likelihood minus
/// (l2/2)||W||^2; column 0 is pinned to zero as the reference class.
inline DiscretePolicy train_multinomial_logistic(const Matrix& features, const std::vector<std::size_t>& targets,
                                                 const LogisticOptions& options = {})
{
    require(features.rows() >= 1, "training requires at least one row");
    require(static_cast<std::size_t>(features.rows()) == targets.size(), "features and targets differ in length");
    require(features.allFinite(), "training features must be finite");
    require(options.l2_penalty >= 0.0, "l2 penalty must be non-negative");
    require(options.tolerance > 0.0, "tolerance must be positive");

    std::size_t classes = options.action_count;
    if (classes == 0) classes = *std::max_element(targets.begin(), targets.end()) + 1;
    std::vector<bool> seen(classes, false);
    std::size_t distinct = 0;
    for (std::size_t t : targets) {
        require(t < classes, "target label exceeds action count");
        if (!seen[t]) {
            seen[t] = true;
            ++distinct;
        }
    }
    require(distinct >= 2, "training requires at least two distinct target classes");

    Matrix x = features;
    if (options.intercept) {
        x.conservativeResize(Eigen::NoChange, features.cols() + 1);
        x.col(features.cols()).setOnes();
    }
    const Index m = x.rows();
    const Index k = static_cast<Index>(classes);

    Matrix onehot = Matrix::Zero(m, k);
    for (Index i = 0; i < m; ++i) onehot(i, static_cast<Index>(targets[static_cast<std::size_t>(i)])) = 1.0;

    Matrix w = Matrix::Zero(x.cols(), k);
    Matrix probs(m, k);
    double value = detail::logistic_objective(x, targets, w, options.l2_penalty, &probs);
    double step = 1.0;

    for (int iter = 0; iter < options.max_iters; ++iter) {
        Matrix grad = x.transpose() * (onehot - probs) / static_cast<double>(m) - options.l2_penalty * w;
        grad.col(0).setZero();
        if (!grad.allFinite()) throw NumericError("non-finite gradient in logistic training");
        const double gnorm_inf = grad.cwiseAbs().maxCoeff();
        if (gnorm_inf < options.tolerance) break;

        const double gnorm_sq = grad.squaredNorm();
        step = std::min(step * 2.0, 1e6);
        Matrix candidate;
        double candidate_value = 0.0;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving) {
            candidate = w + step * grad;
            candidate_value = detail::logistic_objective(x, targets, candidate, options.l2_penalty, nullptr);
            if (std::isfinite(candidate_value) && candidate_value >= value + 1e-4 * step * gnorm_sq) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        w = std::move(candidate);
        value = detail::logistic_objective(x, targets, w, options.l2_penalty, &probs);
    }
    if (!w.allFinite()) throw NumericError("logistic training diverged");
    return DiscretePolicy::logistic(std::move(w), options.intercept);
}

// ---------------------------------------------------------------------------
// Text serialization. Doubles are written in shortest round-trip form so a
// reloaded policy is bit-identical.

inline void write_policy(std::ostream& out, const DiscretePolicy& policy)
{
    const auto k = policy.action_count();
    std::visit(
        [&](const auto& f) {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, DiscretePolicy::Uniform>) {
                out << "policy,uniform," << k << '\n';
            } else if constexpr (std::is_same_v<T, DiscretePolicy::ClosedForm>) {
                out << "policy,closed_form," << k << ',' << format_double(f.slope) << '\n';
            } else if constexpr (std::is_same_v<T, DiscretePolicy::Logistic>) {
                out << "policy,logistic," << k << ',' << f.weights.rows() << ',' << (f.intercept ? 1 : 0) << '\n';
                for (Index r = 0; r < f.weights.rows(); ++r) {
                    for (Index c = 0; c < f.weights.cols(); ++c)
                        out << (c ? "," : "") << format_double(f.weights(r, c));
                    out << '\n';
                }
            } else {
                out << "policy,tabular," << k << ',' << f.rows.size() << ',' << f.dimension << '\n';
                for (const auto& [context, probs] : f.rows) {
                    bool first = true;
                    for (double v : context) {
                        out << (first ? "" : ",") << format_double(v);
                        first = false;
                    }
                    for (double p : probs) {
                        out << (first ? "" : ",") << format_double(p);
                        first = false;
                    }
                    out << '\n';
                }
            }
        },
        policy.form());
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> fields;
    std::string field;
    std::istringstream stream(line);
    while (std::getline(stream, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline std::vector<double> parse_number_row(const std::string& line, std::size_t expected, std::size_t row)
{
    auto fields = split_csv_line(line);
    if (fields.size() != expected) throw ParseError("expected " + std::to_string(expected) + " fields", row);
    std::vector<double> values(expected);
    for (std::size_t i = 0; i < expected; ++i)
        if (!parse_double(fields[i], values[i])) throw ParseError("non-numeric value '" + fields[i] + "'", row);
    return values;
}

}  // namespace detail

inline DiscretePolicy read_policy(std::istream& in)
{
    std::string line;
    std::size_t row = 1;
    if (!std::getline(in, line)) throw ParseError("missing policy header", row);
    auto header = detail::split_csv_line(std::string(trim(line)));
    if (header.size() < 3 || header[0] != "policy") throw ParseError("malformed policy header", row);
    long long k = 0;
    if (!parse_int(header[2], k) || k < 1) throw ParseError("bad action count", row);
    const auto actions = static_cast<std::size_t>(k);

    const std::string& form = header[1];
    if (form == "uniform") return DiscretePolicy::uniform(actions);
    if (form == "closed_form") {
        double slope = 0.0;
        if (header.size() != 4 || !parse_double(header[3], slope)) throw ParseError("bad closed-form header", row);
        return DiscretePolicy::closed_form(slope);
    }
    if (form == "logistic") {
        long long rows = 0, intercept = 0;
        if (header.size() != 5 || !parse_int(header[3], rows) || !parse_int(header[4], intercept) || rows < 0)
            throw ParseError("bad logistic header", row);
        Matrix w(rows, static_cast<Index>(actions));
        for (Index r = 0; r < rows; ++r) {
            ++row;
            if (!std::getline(in, line)) throw ParseError("truncated weight matrix", row);
            auto values = detail::parse_number_row(std::string(trim(line)), actions, row);
            for (Index c = 0; c < w.cols(); ++c) w(r, c) = values[static_cast<std::size_t>(c)];
        }
        return DiscretePolicy::logistic(std::move(w), intercept != 0);
    }
    if (form == "tabular") {
        long long entries = 0, dimension = 0;
        if (header.size() != 5 || !parse_int(header[3], entries) || !parse_int(header[4], dimension))
            throw ParseError("bad tabular header", row);
        std::map<std::vector<double>, std::vector<double>> table;
        const auto d = static_cast<std::size_t>(dimension);
        for (long long e = 0; e < entries; ++e) {
            ++row;
            if (!std::getline(in, line)) throw ParseError("truncated tabular policy", row);
            auto values = detail::parse_number_row(std::string(trim(line)), d + actions, row);
            table.emplace(std::vector<double>(values.begin(), values.begin() + static_cast<long>(d)),
                          std::vector<double>(values.begin() + static_cast<long>(d), values.end()));
        }
        return DiscretePolicy::tabular(actions, std::move(table));
    }
    throw ParseError("unknown policy form '" + form + "'", row);
}

}  // namespace ope
