#pragma once

#include "ope/common.hpp"
#include "ope/policy.hpp"

#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace ope {

// ---------------------------------------------------------------------------
// Domain types

/// Multi-class table: standardized features plus dense labels in [0, action_count).
struct ClassificationTable {
    Matrix features;
    std::vector<std::size_t> labels;
    std::size_t action_count = 0;
    std::vector<std::string> label_names;  // label_names[k] is the original label of class k
    std::vector<std::string> feature_names;

    Index rows() const noexcept { return features.rows(); }
    Index dimension() const noexcept { return features.cols(); }

    void validate() const
    {
        require(features.rows() >= 2, "classification table needs at least two rows");
        require(features.cols() >= 1, "classification table needs at least one feature");
        require(static_cast<std::size_t>(features.rows()) == labels.size(), "labels and features differ in length");
        require(features.allFinite(), "classification features must be finite");
        for (std::size_t label : labels) require(label < action_count, "label out of range");
    }

    ClassificationTable subset(const std::vector<std::size_t>& rows_to_keep) const
    {
        ClassificationTable out;
        out.features.resize(static_cast<Index>(rows_to_keep.size()), features.cols());
        out.labels.reserve(rows_to_keep.size());
        for (std::size_t i = 0; i < rows_to_keep.size(); ++i) {
            out.features.row(static_cast<Index>(i)) = features.row(static_cast<Index>(rows_to_keep[i]));
            out.labels.push_back(labels[rows_to_keep[i]]);
        }
        out.action_count = action_count;
        out.label_names = label_names;
        out.feature_names = feature_names;
        return out;
    }
};

/// n logged (context, action, reward) triples with the logging propensity mu(a_i|x_i).
struct LoggedDataset {
    Matrix contexts;
    std::vector<std::size_t> actions;
    Vector rewards;
    Vector logging_probs;
    std::size_t action_count = 0;
    // Source row of each sample in the table it was drawn from, when known.
    std::vector<std::size_t> source_rows;

    Index size() const noexcept { return contexts.rows(); }
    Index dimension() const noexcept { return contexts.cols(); }

    void validate() const
    {
        const auto n = contexts.rows();
        require(n >= 1, "logged dataset must contain at least one sample");
        require(static_cast<Index>(actions.size()) == n && rewards.size() == n && logging_probs.size() == n,
                "logged dataset columns differ in length");
        require(rewards.allFinite(), "rewards must be finite");
        require(contexts.allFinite(), "contexts must be finite");
        for (Index i = 0; i < n; ++i) {
            require(logging_probs(i) > 0.0 && logging_probs(i) <= 1.0, "logging probabilities must lie in (0, 1]");
            require(actions[static_cast<std::size_t>(i)] < action_count, "action out of range");
        }
    }
};

/// Every logged context paired with every action, in row-major order
/// (context index outer, action inner).
struct DerivedDataset {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t parent_n = 0;
    std::size_t action_count = 0;

    std::size_t size() const noexcept { return pairs.size(); }
    std::size_t index_of(std::size_t context, std::size_t action) const noexcept { return context * action_count + action; }
};

inline DerivedDataset derive_all_actions(const LoggedDataset& dataset, std::size_t action_count)
{
    require(action_count >= 1, "derived dataset needs at least one action");
    DerivedDataset derived;
    derived.parent_n = static_cast<std::size_t>(dataset.size());
    derived.action_count = action_count;
    derived.pairs.reserve(derived.parent_n * action_count);
    for (std::size_t i = 0; i < derived.parent_n; ++i)
        for (std::size_t a = 0; a < action_count; ++a) derived.pairs.emplace_back(i, a);
    return derived;
}

// ---------------------------------------------------------------------------
// Importance weights of the logged samples

struct WeightProfile {
    Vector weights;
    std::optional<double> cap;
};

/// w_i = pi(a_i|x_i) / mu_i using the recorded logging propensities.
inline WeightProfile logged_weights(const LoggedDataset& dataset, const Matrix& target_probs,
                                    std::optional<double> cap = std::nullopt)
{
    require(!cap || *cap > 0.0, "weight cap must be positive");
    WeightProfile profile{Vector(dataset.size()), cap};
    for (Index i = 0; i < dataset.size(); ++i) {
        const double pi = target_probs(i, static_cast<Index>(dataset.actions[static_cast<std::size_t>(i)]));
        double w = pi / dataset.logging_probs(i);
        if (cap) w = std::min(w, *cap);
        profile.weights(i) = w;
    }
    return profile;
}

inline WeightProfile logged_weights(const LoggedDataset& dataset, const DiscretePolicy& target,
                                    std::optional<double> cap = std::nullopt)
{
    return logged_weights(dataset, target.probability_table(dataset.contexts), cap);
}

// ---------------------------------------------------------------------------
// CSV ingestion

using LabelColumn = std::variant<std::size_t, std::string>;

namespace detail {

inline std::vector<std::string> split_fields(std::string_view line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    for (auto& field : out)
        if (field.size() >= 2 && field.front() == '"' && field.back() == '"') field = field.substr(1, field.size() - 2);
    return out;
}

}  // namespace detail

/// Population-variance standardization per column; constant columns become zeros.
inline void standardize_columns(Matrix& features)
{
    const auto m = static_cast<double>(features.rows());
    for (Index c = 0; c < features.cols(); ++c) {
        auto col = features.col(c);
        const double mean = col.sum() / m;
        col.array() -= mean;
        const double var = col.squaredNorm() / m;
        if (var > 0.0) col /= std::sqrt(var);
        else col.setZero();
    }
}

inline ClassificationTable read_classification_csv(std::istream& in, const LabelColumn& label_column, bool has_header)
{
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> labels;
    std::vector<std::string> label_names;
    std::unordered_map<std::string, std::size_t> label_index;
    std::optional<std::size_t> label_col;
    std::size_t width = 0;

    auto resolve_label = [&](std::size_t columns, std::size_t row) {
        if (const auto* idx = std::get_if<std::size_t>(&label_column)) {
            if (*idx >= columns) throw ParseError("label column index out of range", row);
            return *idx;
        }
        const auto& name = std::get<std::string>(label_column);
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return c;
        long long numeric = 0;
        if (parse_int(name, numeric) && numeric >= 0 && static_cast<std::size_t>(numeric) < columns)
            return static_cast<std::size_t>(numeric);
        throw ValidationError("label column '" + name + "' not found");
    };

    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        auto fields = detail::split_fields(line);
        if (has_header && header.empty() && rows.empty() && !label_col) {
            header = std::move(fields);
            width = header.size();
            label_col = resolve_label(width, row);
            continue;
        }
        if (width == 0) {
            width = fields.size();
            label_col = resolve_label(width, row);
        }
        if (fields.size() != width)
            throw ParseError("expected " + std::to_string(width) + " columns, found " + std::to_string(fields.size()), row);
        std::vector<double> values;
        values.reserve(width - 1);
        for (std::size_t c = 0; c < width; ++c) {
            if (c == *label_col) continue;
            double v = 0.0;
            if (!parse_double(fields[c], v) || !std::isfinite(v))
                throw ParseError("non-numeric feature value '" + fields[c] + "' in column " + std::to_string(c), row);
            values.push_back(v);
        }
        const auto& raw = fields[*label_col];
        auto [it, inserted] = label_index.try_emplace(raw, label_names.size());
        if (inserted) label_names.push_back(raw);
        labels.push_back(it->second);
        rows.push_back(std::move(values));
    }

    require(!rows.empty(), "CSV contains no data rows");
    require(width >= 2, "CSV needs at least one feature column besides the label");
    require(label_names.size() >= 2, "classification table has a single class");

    ClassificationTable table;
    table.features.resize(static_cast<Index>(rows.size()), static_cast<Index>(width - 1));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < rows[i].size(); ++c) table.features(static_cast<Index>(i), static_cast<Index>(c)) = rows[i][c];
    standardize_columns(table.features);
    table.labels = std::move(labels);
    table.action_count = label_names.size();
    table.label_names = std::move(label_names);
    for (std::size_t c = 0; c < width; ++c) {
        if (c == *label_col) continue;
        table.feature_names.push_back(header.empty() ? "x_" + std::to_string(table.feature_names.size()) : header[c]);
    }
    table.validate();
    return table;
}

inline ClassificationTable load_classification_csv(const std::string& path, const LabelColumn& label_column,
                                                   bool has_header = true)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    return read_classification_csv(in, label_column, has_header);
}

// ---------------------------------------------------------------------------
// Splitting and bandit conversion

inline std::pair<ClassificationTable, ClassificationTable> split_train_test(const ClassificationTable& table,
                                                                            double train_fraction, std::uint64_t seed)
{
    require(train_fraction > 0.0 && train_fraction < 1.0, "train fraction must lie in (0, 1)");
    const auto m = static_cast<std::size_t>(table.rows());
    const auto train_size = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(m)));
    require(train_size >= 1 && train_size < m, "train fraction yields an empty split");

    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    Rng rng(seed);
    shuffle(order, rng);
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<long>(train_size));
    std::vector<std::size_t> test(order.begin() + static_cast<long>(train_size), order.end());
    return {table.subset(train), table.subset(test)};
}

enum class RewardMode { deterministic, stochastic };

inline constexpr double kStochasticRewardAccuracy = 0.7;

inline RewardMode parse_reward_mode(std::string_view text)
{
    if (text == "deterministic") return RewardMode::deterministic;
    if (text == "stochastic") return RewardMode::stochastic;
    throw ValidationError("unknown reward mode '" + std::string(text) + "'");
}

inline std::string to_string(RewardMode mode)
{
    return mode == RewardMode::deterministic ? "deterministic" : "stochastic";
}

/// E[r | x, a] for a classification-derived bandit.
inline double expected_classification_reward(RewardMode mode, bool correct)
{
    if (mode == RewardMode::deterministic) return correct ? 1.0 : 0.0;
    return correct ? kStochasticRewardAccuracy : 1.0 - kStochasticRewardAccuracy;
}

/// Bandit conversion with a precomputed logging probability table (rows of `table` x |A|).
inline LoggedDataset to_bandit(const ClassificationTable& table, const Matrix& logging_probs, RewardMode mode,
                               std::size_t n, Rng& rng)
{
    require(n >= 1, "bandit dataset size must be at least one");
    require(logging_probs.rows() == table.rows() &&
                logging_probs.cols() == static_cast<Index>(table.action_count),
            "logging probability table has the wrong shape");
    LoggedDataset out;
    out.action_count = table.action_count;
    out.contexts.resize(static_cast<Index>(n), table.dimension());
    out.actions.resize(n);
    out.rewards.resize(static_cast<Index>(n));
    out.logging_probs.resize(static_cast<Index>(n));
    out.source_rows.resize(n);
    const auto m = static_cast<std::size_t>(table.rows());
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t row = rng.index(m);
        const auto probs = logging_probs.row(static_cast<Index>(row));
        if ((probs.array() <= 0.0).any())
            throw ValidationError("logging policy assigns zero probability to an action at row " + std::to_string(row));
        const std::size_t action = sample_from(probs.transpose(), rng);
        const bool correct = action == table.labels[row];
        double reward = correct ? 1.0 : 0.0;
        if (mode == RewardMode::stochastic && !rng.bernoulli(kStochasticRewardAccuracy)) reward = 1.0 - reward;

        const auto i = static_cast<Index>(s);
        out.contexts.row(i) = table.features.row(static_cast<Index>(row));
        out.actions[s] = action;
        out.rewards(i) = reward;
        out.logging_probs(i) = probs(static_cast<Index>(action));
        out.source_rows[s] = row;
    }
    return out;
}

inline LoggedDataset to_bandit(const ClassificationTable& table, const DiscretePolicy& logging, RewardMode mode,
                               std::size_t n, std::uint64_t seed)
{
    require(logging.action_count() == table.action_count, "logging policy action count does not match table");
    Rng rng(seed);
    return to_bandit(table, logging.probability_table(table.features), mode, n, rng);
}

// ---------------------------------------------------------------------------
// Synthetic environments

struct SyntheticEnvironment {
    struct UniformContexts {
        double lo = -1.0;
        double hi = 1.0;
    };
    struct NormalContexts {};
    struct NoNoise {};
    // r ~ Bernoulli(mean), then flipped with probability `flip`.
    struct BernoulliFlip {
        double flip = 0.0;
    };
    struct GaussianNoise {
        double sigma = 0.0;
    };

    Index dimension = 1;
    std::size_t action_count = 2;
    std::variant<UniformContexts, NormalContexts> contexts = UniformContexts{};
    std::function<double(const ContextView&, std::size_t)> mean_reward;
    std::variant<NoNoise, BernoulliFlip, GaussianNoise> noise = NoNoise{};
    double r_max = 1.0;

    Eigen::RowVectorXd sample_context(Rng& rng) const
    {
        Eigen::RowVectorXd x(dimension);
        for (Index k = 0; k < dimension; ++k) {
            if (const auto* u = std::get_if<UniformContexts>(&contexts)) x(k) = rng.uniform(u->lo, u->hi);
            else x(k) = rng.normal();
        }
        return x;
    }

    double expected_reward(const ContextView& x, std::size_t action) const
    {
        const double mean = mean_reward(x, action);
        if (const auto* b = std::get_if<BernoulliFlip>(&noise)) return (1.0 - b->flip) * mean + b->flip * (1.0 - mean);
        return mean;
    }

    double sample_reward(const ContextView& x, std::size_t action, Rng& rng) const
    {
        const double mean = mean_reward(x, action);
        if (!std::isfinite(mean) || mean < 0.0 || mean > r_max)
            throw ValidationError("mean reward outside [0, r_max]");
        if (const auto* b = std::get_if<BernoulliFlip>(&noise)) {
            double r = rng.bernoulli(mean) ? 1.0 : 0.0;
            if (rng.bernoulli(b->flip)) r = 1.0 - r;
            return r;
        }
        if (const auto* g = std::get_if<GaussianNoise>(&noise)) return mean + g->sigma * rng.normal();
        return mean;
    }
};

inline LoggedDataset sample_environment(const SyntheticEnvironment& env, const DiscretePolicy& logging, std::size_t n,
                                        Rng& rng)
{
    require(n >= 1, "sample size must be at least one");
    require(static_cast<bool>(env.mean_reward), "environment has no mean-reward function");
    require(logging.action_count() == env.action_count, "logging policy action count does not match environment");
    LoggedDataset out;
    out.action_count = env.action_count;
    out.contexts.resize(static_cast<Index>(n), env.dimension);
    out.actions.resize(n);
    out.rewards.resize(static_cast<Index>(n));
    out.logging_probs.resize(static_cast<Index>(n));
    for (std::size_t s = 0; s < n; ++s) {
        const auto i = static_cast<Index>(s);
        out.contexts.row(i) = env.sample_context(rng);
        const Vector probs = logging.probabilities(out.contexts.row(i));
        const std::size_t action = sample_from(probs, rng);
        out.actions[s] = action;
        out.logging_probs(i) = probs(static_cast<Index>(action));
        out.rewards(i) = env.sample_reward(out.contexts.row(i), action, rng);
    }
    return out;
}

inline constexpr double kToyLogit = 5.0;

/// Two actions, contexts uniform on [-1, 1], noiseless reward 1{a=1} (1 + x) / 2.
inline SyntheticEnvironment toy_environment()
{
    SyntheticEnvironment env;
    env.dimension = 1;
    env.action_count = 2;
    env.contexts = SyntheticEnvironment::UniformContexts{-1.0, 1.0};
    env.mean_reward = [](const ContextView& x, std::size_t a) { return a == 1 ? 0.5 * (1.0 + x(0)) : 0.0; };
    return env;
}

inline DiscretePolicy toy_logging_policy() { return DiscretePolicy::closed_form(kToyLogit); }
inline DiscretePolicy toy_target_policy() { return DiscretePolicy::closed_form(-kToyLogit); }

struct ToySample {
    LoggedDataset data;
    DiscretePolicy logging;
    DiscretePolicy target;
};

inline ToySample sample_toy(std::size_t n, std::uint64_t seed)
{
    require(n >= 1, "toy sample size must be at least one");
    Rng rng(seed);
    auto logging = toy_logging_policy();
    auto data = sample_environment(toy_environment(), logging, n, rng);
    return {std::move(data), std::move(logging), toy_target_policy()};
}

// ---------------------------------------------------------------------------
// Bandit dump: x_0..x_{d-1},action,reward,logging_prob

inline void write_logged_csv(std::ostream& out, const LoggedDataset& data)
{
    for (Index k = 0; k < data.dimension(); ++k) out << "x_" << k << ',';
    out << "action,reward,logging_prob\n";
    for (Index i = 0; i < data.size(); ++i) {
        for (Index k = 0; k < data.dimension(); ++k) out << format_double(data.contexts(i, k)) << ',';
        out << data.actions[static_cast<std::size_t>(i)] << ',' << format_double(data.rewards(i)) << ','
            << format_double(data.logging_probs(i)) << '\n';
    }
}

inline LoggedDataset read_logged_csv(std::istream& in, std::size_t action_count = 0)
{
    std::string line;
    std::size_t row = 1;
    if (!std::getline(in, line)) throw ParseError("missing header", row);
    const auto header = detail::split_fields(line);
    require(header.size() >= 3 && header[header.size() - 3] == "action" && header[header.size() - 2] == "reward" &&
                header.back() == "logging_prob",
            "bandit dump header must end with action,reward,logging_prob");
    const std::size_t d = header.size() - 3;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        rows.push_back(detail::parse_number_row(std::string(trim(line)), header.size(), row));
    }
    LoggedDataset out;
    const auto n = static_cast<Index>(rows.size());
    out.contexts.resize(n, static_cast<Index>(d));
    out.rewards.resize(n);
    out.logging_probs.resize(n);
    std::size_t max_action = 0;
    for (Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < d; ++k) out.contexts(i, static_cast<Index>(k)) = r[k];
        const double a = r[d];
        if (a < 0 || a != std::floor(a)) throw ParseError("action must be a non-negative integer", static_cast<std::size_t>(i) + 2);
        out.actions.push_back(static_cast<std::size_t>(a));
        max_action = std::max(max_action, out.actions.back());
        out.rewards(i) = r[d + 1];
        out.logging_probs(i) = r[d + 2];
    }
    out.action_count = action_count ? action_count : max_action + 1;
    out.validate();
    return out;
}

}  // namespace ope
