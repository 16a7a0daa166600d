#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

namespace standgp {

/// A set of n planar locations. Distances are Euclidean in the coordinate
/// units, which must match the units of the decay-parameter bounds.
struct SiteSet {
    Eigen::MatrixX2d coords;
    std::vector<std::string> ids;

    [[nodiscard]] Eigen::Index size() const { return coords.rows(); }
    [[nodiscard]] double distance(Eigen::Index k, Eigen::Index l) const {
        return (coords.row(k) - coords.row(l)).norm();
    }
    /// Pairwise n x n distance matrix.
    [[nodiscard]] Eigen::MatrixXd distances() const;
};

/// Coregionalization parameters of one diameter class: lower-triangular
/// loading matrix A (positive diagonal) and q exponential decays.
struct CoregParams {
    Eigen::MatrixXd A;
    Eigen::VectorXd phi;

    [[nodiscard]] Eigen::Index q() const { return A.rows(); }
};

/// Symmetric positive-definite nq x nq covariance together with its
/// lower Cholesky factor. Immutable once constructed.
class BlockCovariance {
public:
    /// Factorizes `matrix`; throws SingularCovariance when it is not
    /// numerically positive definite. `what` names the source in the message.
    explicit BlockCovariance(Eigen::MatrixXd matrix, const std::string& what = "covariance");

    [[nodiscard]] Eigen::Index dim() const { return matrix_.rows(); }
    [[nodiscard]] const Eigen::MatrixXd& matrix() const { return matrix_; }
    [[nodiscard]] const Eigen::LLT<Eigen::MatrixXd>& llt() const { return llt_; }
    [[nodiscard]] Eigen::MatrixXd factor() const { return llt_.matrixL(); }
    [[nodiscard]] double log_det() const { return log_det_; }

    /// Returns cov^{-1} b via two triangular solves.
    [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt_.solve(b); }
    /// Returns L^{-1} b.
    [[nodiscard]] Eigen::MatrixXd whiten(const Eigen::MatrixXd& b) const {
        return llt_.matrixL().solve(b);
    }
    /// (x)' cov^{-1} (x).
    [[nodiscard]] double quad_form(const Eigen::VectorXd& x) const {
        return llt_.matrixL().solve(x).squaredNorm();
    }

private:
    Eigen::MatrixXd matrix_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double log_det_ = 0.0;
};

/// exp(-phi * d). Throws DomainError for d < 0 or phi <= 0.
[[nodiscard]] double exp_correlation(double d, double phi);

/// Distance at which the exponential correlation falls to 0.05: ln(20)/phi.
[[nodiscard]] double effective_range(double phi);

/// A D(rho(|s-t|)) A' for the coregionalized exponential model.
[[nodiscard]] Eigen::MatrixXd cross_covariance(const Eigen::Vector2d& s, const Eigen::Vector2d& t,
                                               const CoregParams& theta);

/// Per-species n x n correlation matrices R_r[k,l] = exp(-phi_r d_kl).
[[nodiscard]] std::vector<Eigen::MatrixXd> correlation_matrices(const Eigen::MatrixXd& dist,
                                                                const Eigen::VectorXd& phi);

/// Site-major nq x nq matrix whose (k,l) block is sum_r A[:,r] A[:,r]' R_r[k,l].
[[nodiscard]] Eigen::MatrixXd combine_block(const Eigen::MatrixXd& A,
                                            const std::vector<Eigen::MatrixXd>& corr);

/// Block covariance of w(s_1..s_n) stacked site-major; throws
/// SingularCovariance for duplicate sites or rank-deficient A.
[[nodiscard]] BlockCovariance assemble_block(const SiteSet& sites, const CoregParams& theta);

/// exp(-phi d) over one site set together with its Cholesky factor.
struct SpeciesCorrelation {
    Eigen::MatrixXd matrix;
    Eigen::LLT<Eigen::MatrixXd> llt;
    double log_det = 0.0;

    /// Throws SingularCovariance when the factorization fails or a pivot is
    /// numerically zero (duplicate sites).
    SpeciesCorrelation(const Eigen::MatrixXd& dist, double phi, const std::string& what);
};

/// Structured square root M of the site-major class covariance A D(R) A':
/// M = P (A kron I) blockdiag(L_1..L_q), with L_r the Cholesky factor of R_r
/// and P the species-major to site-major permutation. Sigma = M M' and
/// log|Sigma| = 2n sum_r log A_rr + sum_r log|R_r|. Changing A needs no new
/// factorization; changing phi_r needs only L_r.
class CoregFactor {
public:
    /// Throws SingularCovariance for a zero diagonal loading.
    CoregFactor(Eigen::MatrixXd A, std::vector<std::shared_ptr<const SpeciesCorrelation>> species);

    [[nodiscard]] Eigen::Index dim() const { return n_ * q(); }
    [[nodiscard]] Eigen::Index q() const { return A_.rows(); }
    [[nodiscard]] const Eigen::MatrixXd& A() const { return A_; }
    [[nodiscard]] const std::vector<std::shared_ptr<const SpeciesCorrelation>>& species() const { return species_; }
    [[nodiscard]] double log_det() const { return log_det_; }

    /// M^{-1} u.
    [[nodiscard]] Eigen::VectorXd whiten(const Eigen::VectorXd& u) const;
    /// M z.
    [[nodiscard]] Eigen::VectorXd color(const Eigen::VectorXd& z) const;
    /// u' Sigma^{-1} u.
    [[nodiscard]] double quad_form(const Eigen::VectorXd& u) const { return whiten(u).squaredNorm(); }
    /// Dense Sigma^{-1}.
    [[nodiscard]] Eigen::MatrixXd precision() const;
    /// Dense Sigma.
    [[nodiscard]] Eigen::MatrixXd covariance() const;

private:
    Eigen::MatrixXd A_;
    std::vector<std::shared_ptr<const SpeciesCorrelation>> species_;
    Eigen::Index n_ = 0;
    double log_det_ = 0.0;
};

/// log N(x | mean, cov) computed through the Cholesky factor.
[[nodiscard]] double mvn_logdensity(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                                    const BlockCovariance& cov);

/// Validates CoregParams invariants (shape, lower triangle, positive diagonal,
/// finite decays); throws DomainError.
void validate(const CoregParams& theta);

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
inline constexpr double kLog20 = 2.9957322735539909934352235761425;

}  // namespace standgp
