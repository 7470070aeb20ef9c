#pragma once

#include "ope/common.hpp"

#include <algorithm>
#include <vector>

namespace ope {

/// Strictly ascending, finite hyperparameter grid.
struct TuningGrid {
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    bool empty() const noexcept { return values.empty(); }
    double operator[](std::size_t i) const { return values[i]; }

    void validate() const
    {
        require(!values.empty(), "grid must not be empty");
        for (std::size_t i = 0; i < values.size(); ++i) {
            require(std::isfinite(values[i]), "grid values must be finite");
            if (i > 0) require(values[i] > values[i - 1], "grid must be strictly ascending");
        }
    }
};

/// lo * (hi/lo)^(k/(count-1)), k = 0..count-1. Endpoints are exact.
inline TuningGrid geometric_grid(double lo, double hi, std::size_t count)
{
    require(lo > 0.0 && std::isfinite(hi), "geometric grid needs 0 < lo");
    require(lo < hi, "geometric grid needs lo < hi");
    require(count >= 2, "geometric grid needs at least two points");
    TuningGrid grid;
    grid.values.reserve(count);
    const double ratio = hi / lo;
    for (std::size_t k = 0; k < count; ++k) {
        if (k == 0) grid.values.push_back(lo);
        else if (k + 1 == count) grid.values.push_back(hi);
        else grid.values.push_back(lo * std::pow(ratio, static_cast<double>(k) / static_cast<double>(count - 1)));
    }
    return grid;
}

/// Quantile at level q in [0, 1] with linear interpolation between order statistics.
inline double quantile(std::vector<double> values, double level)
{
    require(!values.empty(), "quantile of an empty sample");
    require(level >= 0.0 && level <= 1.0, "quantile level must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double position = level * static_cast<double>(values.size() - 1);
    const auto lower = static_cast<std::size_t>(std::floor(position));
    const std::size_t upper = std::min(lower + 1, values.size() - 1);
    const double frac = position - static_cast<double>(lower);
    if (frac == 0.0) return values[lower];
    return values[lower] + frac * (values[upper] - values[lower]);
}

/// Sorted, de-duplicated grid from arbitrary values.
inline TuningGrid make_grid(std::vector<double> values)
{
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    TuningGrid grid{std::move(values)};
    grid.validate();
    return grid;
}

}  // namespace ope
