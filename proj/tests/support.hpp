#pragma once

#include "ope/data.hpp"
#include "ope/policy.hpp"

#include <map>
#include <string>
#include <vector>

namespace ope::fixtures {

inline std::string data_path(const std::string& name) { return std::string(OPE_TEST_DATA_DIR) + "/" + name; }

inline Vector random_simplex(Index k, Rng& rng, double floor = 0.0)
{
    Vector p(k);
    for (Index a = 0; a < k; ++a) p(a) = floor + rng.uniform() + 1e-3;
    return p / p.sum();
}

/// Random logged dataset with distinct contexts and positive propensities.
inline LoggedDataset random_logged(Index n, Index d, std::size_t k, Rng& rng)
{
    LoggedDataset data;
    data.action_count = k;
    data.contexts.resize(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < d; ++c) data.contexts(i, c) = rng.normal();
    data.actions.resize(static_cast<std::size_t>(n));
    data.rewards.resize(n);
    data.logging_probs.resize(n);
    for (Index i = 0; i < n; ++i) {
        data.actions[static_cast<std::size_t>(i)] = rng.index(k);
        data.rewards(i) = rng.uniform();
        data.logging_probs(i) = 0.05 + 0.95 * rng.uniform();
    }
    return data;
}

/// Tabular policy over the rows of `contexts`, with random strictly positive probabilities.
inline DiscretePolicy random_tabular(const Matrix& contexts, std::size_t k, Rng& rng)
{
    std::map<std::vector<double>, std::vector<double>> rows;
    for (Index i = 0; i < contexts.rows(); ++i) {
        const Vector p = random_simplex(static_cast<Index>(k), rng);
        std::vector<double> key(static_cast<std::size_t>(contexts.cols()));
        for (Index c = 0; c < contexts.cols(); ++c) key[static_cast<std::size_t>(c)] = contexts(i, c);
        rows[key] = std::vector<double>(p.data(), p.data() + p.size());
    }
    return DiscretePolicy::tabular(k, std::move(rows));
}

/// Logged data whose propensities come from `logging` exactly.
inline LoggedDataset logged_from_policy(const Matrix& contexts, const DiscretePolicy& logging, Rng& rng)
{
    LoggedDataset data;
    data.action_count = logging.action_count();
    data.contexts = contexts;
    const Index n = contexts.rows();
    data.actions.resize(static_cast<std::size_t>(n));
    data.rewards.resize(n);
    data.logging_probs.resize(n);
    for (Index i = 0; i < n; ++i) {
        const Vector p = logging.probabilities(contexts.row(i));
        const std::size_t a = sample_from(p, rng);
        data.actions[static_cast<std::size_t>(i)] = a;
        data.logging_probs(i) = p(static_cast<Index>(a));
        data.rewards(i) = rng.uniform();
    }
    return data;
}

}  // namespace ope::fixtures
