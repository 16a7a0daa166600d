#pragma once

#include "standgp/covariance.hpp"
#include "standgp/model.hpp"
#include "standgp/sampler.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace standgp {

/// New locations with their design rows. `design` holds one n0 x p matrix
/// per (species, class), index i*m + j, with the intercept in column 0.
struct PredictionRequest {
    SiteSet new_sites;
    std::vector<Eigen::MatrixXd> design;
    /// Use at most this many posterior draws, evenly spaced through the pool.
    std::optional<long> draw_subsample;
};

/// Per-class pieces of the kriging formula for one posterior draw:
/// the factored Sigma_l(theta_l) and alpha_l = Sigma_l^{-1} (w_l - w_{l-1}).
struct ClassKriging {
    CoregParams theta;
    BlockCovariance cov;
    Eigen::VectorXd alpha;
};

/// Factorizes every class covariance of `draw`; throws SingularCovariance
/// naming the class.
[[nodiscard]] std::vector<ClassKriging> prepare_kriging(const ParamState& draw, const SiteSet& sites);

/// Conditional mean and covariance of the class-l increment u_l(s0).
struct Increment {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};
[[nodiscard]] Increment kriging_increment(const Eigen::Vector2d& s0, const ClassKriging& ck, const SiteSet& sites);

/// Conditional distribution of w_1(s0)..w_J(s0): the running sums of the
/// increment means and covariances, plus one joint draw (cumulative sum of
/// independently sampled increments) when an RNG is supplied.
struct ConditionalW {
    std::vector<Eigen::VectorXd> mean;
    std::vector<Eigen::MatrixXd> cov;
    std::vector<Eigen::VectorXd> sample;
};

[[nodiscard]] ConditionalW conditional_w(const Eigen::Vector2d& s0, const ParamState& draw, const SiteSet& sites,
                                         int upto_class, Rng* rng = nullptr);
/// Same, reusing prepared per-class factors.
[[nodiscard]] ConditionalW conditional_w(const Eigen::Vector2d& s0, const std::vector<ClassKriging>& prepared,
                                         const SiteSet& sites, int upto_class, Rng* rng = nullptr);

/// Draw from N(mean, cov) for a small positive semi-definite cov.
[[nodiscard]] Eigen::VectorXd sample_normal_psd(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng);

/// One predictive count and intensity per retained posterior draw, per
/// (new site, species, class).
struct PredictiveDraws {
    int n0 = 0;
    int q = 0;
    int m = 0;
    std::vector<std::vector<long>> counts;
    std::vector<std::vector<double>> lambda;

    [[nodiscard]] std::size_t cell(int site, int i, int j) const {
        return static_cast<std::size_t>((site * q + i) * m + j);
    }
};

/// Composition sampling: for every (subsampled) draw, sample w(s0), form
/// lambda = exp(x'beta + w) and draw y ~ Poisson(lambda).
[[nodiscard]] PredictiveDraws predictive_counts(const PredictionRequest& request, const std::vector<ParamState>& draws,
                                                const Dataset& data, const ModelSpec& spec, Rng& rng);

struct PredictiveSummary {
    double median = 0.0;
    double lower95 = 0.0;
    double upper95 = 0.0;
    double range = 0.0;
};

/// Nearest-rank (lower) quantiles of the predictive counts, multiplied by `scale`
/// (e.g. the per-hectare area factor). Throws DomainError when empty.
[[nodiscard]] PredictiveSummary summarize_predictive(const std::vector<long>& draws, double scale = 1.0);

/// Indices of at most `limit` draws evenly spaced through a pool of `pool` draws.
[[nodiscard]] std::vector<std::size_t> subsample_indices(std::size_t pool, std::optional<long> limit);

}  // namespace standgp
