#pragma once

#include "standgp/error.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace standgp {

/// Lower nearest-rank empirical quantile: the ceil(p N)-th smallest value.
/// Sorts a copy; throws DomainError on empty input.
template <typename T>
[[nodiscard]] T quantile_nearest_rank(std::vector<T> values, double p) {
    if (values.empty()) {
        throw DomainError("quantile of an empty sample");
    }
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    // The tolerance keeps exact products such as 0.025 * 200 from rounding up a rank.
    auto rank = static_cast<long>(std::ceil(p * n - 1e-9));
    rank = std::clamp(rank, 1L, static_cast<long>(values.size()));
    return values[static_cast<std::size_t>(rank - 1)];
}

/// Median and equal-tailed 95% interval of a sample.
struct Interval {
    double median = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

template <typename T>
[[nodiscard]] Interval summarize_interval(const std::vector<T>& values) {
    return {static_cast<double>(quantile_nearest_rank(values, 0.5)),
            static_cast<double>(quantile_nearest_rank(values, 0.025)),
            static_cast<double>(quantile_nearest_rank(values, 0.975))};
}

[[nodiscard]] inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Sample variance with the n - 1 denominator.
[[nodiscard]] inline double sample_variance(const std::vector<double>& v) {
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return s / static_cast<double>(v.size() - 1);
}

}  // namespace standgp
