#pragma once

#include "standgp/covariance.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace standgp {

/// Observed stand tables: counts y[i][j][k] for species i, diameter class j
/// and site k, with design rows x_ij(s_k) whose first column is the intercept.
struct Dataset {
    SiteSet sites;
    int q = 0;
    int m = 0;
    /// Design width including the intercept column.
    int p = 1;
    /// Flat storage, index (i*m + j)*n + k.
    std::vector<long> counts;
    /// One n x p design matrix per (i, j), index i*m + j.
    std::vector<Eigen::MatrixXd> design;
    /// Multiplier converting plot counts to per-hectare values at reporting time.
    double area_factor = 1.0;

    [[nodiscard]] int n() const { return static_cast<int>(sites.size()); }
    [[nodiscard]] long count(int i, int j, int k) const {
        return counts[static_cast<std::size_t>((i * m + j) * n() + k)];
    }
    [[nodiscard]] long& count(int i, int j, int k) {
        return counts[static_cast<std::size_t>((i * m + j) * n() + k)];
    }
    [[nodiscard]] const Eigen::MatrixXd& x(int i, int j) const {
        return design[static_cast<std::size_t>(i * m + j)];
    }
    [[nodiscard]] Eigen::MatrixXd& x(int i, int j) { return design[static_cast<std::size_t>(i * m + j)]; }

    /// Throws DataError when storage sizes or invariants are inconsistent.
    void validate() const;
    [[nodiscard]] long total_count(int i) const;
};

bool operator==(const Dataset& a, const Dataset& b);

enum class Variant { NonspatialCovariates, SpatialNoCovariates, SpatialCovariates };
enum class BetaDynamics { Markov, Independent, Flat };

[[nodiscard]] std::string to_string(Variant v);
[[nodiscard]] std::string to_string(BetaDynamics d);
[[nodiscard]] Variant parse_variant(const std::string& s);
[[nodiscard]] BetaDynamics parse_dynamics(const std::string& s);

struct PhiBounds {
    double lo = 0.1;
    double hi = 6.0;
};

/// Model variant and prior constants. Defaults follow the candidate-model
/// setup: m0 = 0, Sigma0 = 1000 I, IW(p+1, 0.01 I) on Sigma_eta,
/// IW(q+1, 0.01 I) on Gamma_j = A_j A_j', phi ~ U(0.1, 6).
struct ModelSpec {
    Variant variant = Variant::SpatialCovariates;
    BetaDynamics beta_dynamics = BetaDynamics::Markov;
    bool shared_sigma_eta = true;
    double m0 = 0.0;
    double sigma0 = 1000.0;
    std::optional<double> r_eta;  // defaults to p + 1
    double upsilon_eta = 0.01;
    std::optional<double> r_gamma;  // defaults to q + 1
    double upsilon_gamma = 0.01;
    PhiBounds phi_default;
    /// Per-element overrides keyed by (species, class), 0-based.
    std::map<std::pair<int, int>, PhiBounds> phi_overrides;

    [[nodiscard]] bool spatial() const { return variant != Variant::NonspatialCovariates; }
    [[nodiscard]] bool uses_covariates() const { return variant != Variant::SpatialNoCovariates; }
    [[nodiscard]] bool has_beta0() const { return beta_dynamics == BetaDynamics::Markov; }
    [[nodiscard]] bool has_sigma_eta() const { return beta_dynamics != BetaDynamics::Flat; }
    [[nodiscard]] PhiBounds phi_bounds(int i, int j) const;
    [[nodiscard]] double r_eta_for(int p) const { return r_eta.value_or(p + 1.0); }
    [[nodiscard]] double r_gamma_for(int q) const { return r_gamma.value_or(q + 1.0); }

    /// Throws ConfigError when constants violate their constraints for
    /// regression width p and species count q.
    void validate(int p, int q) const;
};

/// Dimensions of the fitted model (p is the regression width actually used).
struct Dims {
    int q = 0;
    int m = 0;
    int n = 0;
    int p = 0;
};

[[nodiscard]] Dims model_dims(const Dataset& data, const ModelSpec& spec);

/// One complete draw of every model parameter. Sigma_eta is stored through
/// its Cholesky factor V; w_j is stacked site-major (w_j(s_1)', ..., w_j(s_n)')'.
struct ParamState {
    std::vector<Eigen::VectorXd> beta0;  // q entries under Markov dynamics, else empty
    std::vector<Eigen::VectorXd> beta;   // q*m entries, index i*m + j
    std::vector<Eigen::MatrixXd> V;      // 1 (shared) or m factors, empty under flat prior
    std::vector<CoregParams> theta;      // m entries for spatial variants
    std::vector<Eigen::VectorXd> w;      // m entries of length nq for spatial variants

    [[nodiscard]] const Eigen::VectorXd& b(int i, int j, int m) const {
        return beta[static_cast<std::size_t>(i * m + j)];
    }
    [[nodiscard]] Eigen::VectorXd& b(int i, int j, int m) { return beta[static_cast<std::size_t>(i * m + j)]; }
    /// Sigma_eta factor for class j (shared factor when only one is stored).
    [[nodiscard]] const Eigen::MatrixXd& v_for(int j) const {
        return V.size() == 1 ? V.front() : V[static_cast<std::size_t>(j)];
    }
};

bool operator==(const ParamState& a, const ParamState& b);

/// Throws DomainError if the state's shapes do not match the model.
void check_shape(const ParamState& state, const Dims& dims, const ModelSpec& spec);

enum class TransformKind { Identity, Log, Logit };

/// Map between a constrained parameter and the real line used for proposals.
struct Transform {
    TransformKind kind = TransformKind::Identity;
    double lo = 0.0;
    double hi = 1.0;

    static Transform identity() { return {}; }
    static Transform log() { return {TransformKind::Log, 0.0, 0.0}; }
    static Transform logit(double lo, double hi) { return {TransformKind::Logit, lo, hi}; }

    /// constrained -> unconstrained. Throws DomainError outside the support.
    [[nodiscard]] double forward(double constrained) const;
    /// unconstrained -> constrained.
    [[nodiscard]] double inverse(double unconstrained) const;
    /// log |d constrained / d unconstrained| at the unconstrained value.
    [[nodiscard]] double log_jacobian(double unconstrained) const;
};

// Individual log-density terms. Each returns -inf outside the support.

/// sum_k [y (x'b + w) - exp(x'b + w)] for one (species, class); `w` may be null.
[[nodiscard]] double poisson_cell_term(const Dataset& data, int i, int j, const Eigen::VectorXd& beta,
                                       const Eigen::VectorXd* w, int p);
/// log N(x | mean, L L') for lower-triangular L.
[[nodiscard]] double normal_chol_logdensity(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                                            const Eigen::MatrixXd& L);
/// Inverse-Wishart IW(L L' | r, upsilon I) log-density plus the log-Jacobian of
/// the map from a covariance to its Cholesky factor.
[[nodiscard]] double iw_cholesky_logdensity(const Eigen::MatrixXd& L, double r, double upsilon);
/// log|J| of Sigma = L L' -> L: d log 2 + sum_i (d - i + 1) log L_ii.
[[nodiscard]] double cholesky_map_log_jacobian(const Eigen::MatrixXd& L);
/// Prior density of beta_ij given its predecessor under the spec's dynamics.
[[nodiscard]] double beta_step_term(const ModelSpec& spec, const ParamState& state, int i, int j, int m);
/// IW on Gamma_j plus uniform densities of phi_j.
[[nodiscard]] double theta_prior_term(const ModelSpec& spec, const CoregParams& theta, int j);

[[nodiscard]] double log_poisson_term(const Dataset& data, const ParamState& state, const ModelSpec& spec);
[[nodiscard]] double log_beta_prior(const ParamState& state, const ModelSpec& spec, const Dims& dims);
[[nodiscard]] double log_hyper_priors(const ParamState& state, const ModelSpec& spec, const Dims& dims);
/// Sum of the spatial process terms log N(w_j | w_{j-1}, Sigma_j(theta_j)).
[[nodiscard]] double log_spatial_term(const Dataset& data, const ParamState& state, const ModelSpec& spec);
/// Unnormalized log posterior (log y! constants omitted).
[[nodiscard]] double log_joint(const Dataset& data, const ParamState& state, const ModelSpec& spec);

/// Poisson log-likelihood including the -log y! constants, for a given
/// linear predictor set: beta and (optionally) w.
[[nodiscard]] double full_log_likelihood(const Dataset& data, const ParamState& state, const ModelSpec& spec);

}  // namespace standgp
