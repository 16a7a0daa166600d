#pragma once

#include "standgp/covariance.hpp"
#include "standgp/model.hpp"
#include "standgp/sampler.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace standgp {

/// Generating configuration for synthetic stand tables.
struct SimConfig {
    int n = 50;
    int q = 2;
    int m = 4;
    /// Design width including the intercept.
    int p = 2;
    /// Extra sites simulated jointly with the training sites and returned as a holdout set.
    int n_holdout = 0;
    /// Side of the square the sites are drawn uniformly from.
    double side = 4.0;
    /// Fixed training + holdout coordinates; overrides the uniform layout.
    std::optional<Eigen::MatrixX2d> coords;

    /// beta_i0 ~ N(beta0_mean, beta0_sd^2 I), then beta_ij = beta_{i,j-1} + eta_ij.
    Eigen::VectorXd beta0_mean;
    double beta0_sd = 0.0;
    /// Random-walk covariance Sigma_eta (p x p).
    Eigen::MatrixXd sigma_eta;
    /// One coregionalization per class.
    std::vector<CoregParams> theta;
    /// When false, w is identically zero.
    bool spatial = true;
    /// Covariates shared by all (species, class) cells of a site (else drawn per cell).
    bool site_covariates = true;
    double area_factor = 1.0;
    std::uint64_t seed = 1;

    /// Throws ConfigError on inconsistent shapes or invalid parameters.
    void validate() const;
};

/// Desk-scale setup: q = 2, m = 4, n = 50, p = 2, with the square side chosen
/// so the median inter-site distance is about one effective range.
[[nodiscard]] SimConfig desk_scale_config(std::uint64_t seed);

struct SimResult {
    Dataset train;
    /// Holdout sites (empty dataset when n_holdout = 0).
    Dataset holdout;
    /// Generating parameters; w covers the training sites only.
    ParamState truth;
    /// w_j at the holdout sites, site-major (n_holdout * q each).
    std::vector<Eigen::VectorXd> w_holdout;
};

/// Forward simulation of the dynamic model. Reproducible by seed. Throws
/// ConfigError if an intensity would overflow.
[[nodiscard]] SimResult simulate(const SimConfig& config);

}  // namespace standgp
