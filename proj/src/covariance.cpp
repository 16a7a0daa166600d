#include "standgp/covariance.hpp"

#include "standgp/error.hpp"

#include <cmath>
#include <string>

namespace standgp {

namespace {

// Relative pivot floor below which a factorization is reported as singular.
// Exact rank deficiency (duplicate sites) rounds to pivots of order 1e-16.
constexpr double kPivotFloor = 1e-13;

}  // namespace

Eigen::MatrixXd SiteSet::distances() const {
    const Eigen::Index n = size();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index l = 0; l < n; ++l) {
        for (Eigen::Index k = l + 1; k < n; ++k) {
            d(k, l) = distance(k, l);
            d(l, k) = d(k, l);
        }
    }
    return d;
}

BlockCovariance::BlockCovariance(Eigen::MatrixXd matrix, const std::string& what)
    : matrix_(std::move(matrix)) {
    if (matrix_.rows() != matrix_.cols()) {
        throw DomainError(what + ": covariance matrix is not square");
    }
    if (!matrix_.allFinite()) {
        throw SingularCovariance(what + ": covariance has non-finite entries");
    }
    llt_.compute(matrix_);
    if (llt_.info() != Eigen::Success) {
        throw SingularCovariance(what + ": Cholesky factorization failed (matrix not positive definite; "
                                        "check for duplicate sites or a rank-deficient loading matrix)");
    }
    const auto& lower = llt_.matrixLLT();
    const double scale = matrix_.diagonal().cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < lower.rows(); ++i) {
        const double pivot = lower(i, i);
        if (!(pivot * pivot > kPivotFloor * scale)) {
            throw SingularCovariance(what + ": numerically singular at row " + std::to_string(i) +
                                     " (duplicate sites or rank-deficient loading matrix)");
        }
        log_det_ += 2.0 * std::log(pivot);
    }
}

SpeciesCorrelation::SpeciesCorrelation(const Eigen::MatrixXd& dist, double phi, const std::string& what)
    : matrix((-phi * dist.array()).exp().matrix()) {
    if (!matrix.allFinite()) {
        throw SingularCovariance(what + ": correlation has non-finite entries");
    }
    llt.compute(matrix);
    if (llt.info() != Eigen::Success) {
        throw SingularCovariance(what + ": correlation matrix not positive definite (duplicate sites?)");
    }
    const auto& lower = llt.matrixLLT();
    for (Eigen::Index i = 0; i < lower.rows(); ++i) {
        const double pivot = lower(i, i);
        if (!(pivot * pivot > kPivotFloor)) {
            throw SingularCovariance(what + ": correlation numerically singular at row " + std::to_string(i) +
                                     " (duplicate sites)");
        }
        log_det += 2.0 * std::log(pivot);
    }
}

CoregFactor::CoregFactor(Eigen::MatrixXd A, std::vector<std::shared_ptr<const SpeciesCorrelation>> species)
    : A_(std::move(A)), species_(std::move(species)) {
    if (A_.rows() != A_.cols() || static_cast<std::size_t>(A_.rows()) != species_.size() || species_.empty()) {
        throw DomainError("CoregFactor: loading matrix and species factors disagree in size");
    }
    n_ = species_.front()->matrix.rows();
    for (Eigen::Index r = 0; r < A_.rows(); ++r) {
        const double a = std::abs(A_(r, r));
        if (!(a > 0.0) || !std::isfinite(a)) {
            throw SingularCovariance("loading matrix has a zero or non-finite diagonal entry");
        }
        log_det_ += 2.0 * static_cast<double>(n_) * std::log(a) + species_[static_cast<std::size_t>(r)]->log_det;
    }
}

Eigen::VectorXd CoregFactor::whiten(const Eigen::VectorXd& u) const {
    const Eigen::Index q = A_.rows();
    // Columns of U are sites: U(r, k) = u[k*q + r].
    Eigen::MatrixXd U = Eigen::Map<const Eigen::MatrixXd>(u.data(), q, n_);
    A_.triangularView<Eigen::Lower>().solveInPlace(U);
    Eigen::VectorXd z(u.size());
    Eigen::Map<Eigen::MatrixXd> Z(z.data(), q, n_);
    for (Eigen::Index r = 0; r < q; ++r) {
        Eigen::VectorXd row = U.row(r).transpose();
        species_[static_cast<std::size_t>(r)]->llt.matrixL().solveInPlace(row);
        Z.row(r) = row.transpose();
    }
    return z;
}

Eigen::VectorXd CoregFactor::color(const Eigen::VectorXd& z) const {
    const Eigen::Index q = A_.rows();
    const Eigen::Map<const Eigen::MatrixXd> Z(z.data(), q, n_);
    Eigen::MatrixXd Y(q, n_);
    for (Eigen::Index r = 0; r < q; ++r) {
        Y.row(r) = (species_[static_cast<std::size_t>(r)]->llt.matrixL() * Z.row(r).transpose()).transpose();
    }
    const Eigen::MatrixXd U = A_.triangularView<Eigen::Lower>() * Y;
    return Eigen::Map<const Eigen::VectorXd>(U.data(), U.size());
}

Eigen::MatrixXd CoregFactor::precision() const {
    // Sigma^{-1} = P (A^{-T} kron I) blockdiag(R_t^{-1}) (A^{-1} kron I) P'.
    const Eigen::Index q = A_.rows();
    const Eigen::MatrixXd Ainv = A_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(q, q));
    std::vector<Eigen::MatrixXd> rinv;
    for (const auto& s : species_) rinv.push_back(s->llt.solve(Eigen::MatrixXd::Identity(n_, n_)));
    Eigen::MatrixXd out(dim(), dim());
    Eigen::MatrixXd block(n_, n_);
    for (Eigen::Index r = 0; r < q; ++r) {
        for (Eigen::Index s = 0; s <= r; ++s) {
            block.setZero();
            for (Eigen::Index t = r; t < q; ++t) block += (Ainv(t, r) * Ainv(t, s)) * rinv[static_cast<std::size_t>(t)];
            for (Eigen::Index k = 0; k < n_; ++k) {
                for (Eigen::Index l = 0; l < n_; ++l) {
                    out(k * q + r, l * q + s) = block(k, l);
                    out(l * q + s, k * q + r) = block(k, l);
                }
            }
        }
    }
    return out;
}

Eigen::MatrixXd CoregFactor::covariance() const {
    std::vector<Eigen::MatrixXd> corr;
    for (const auto& s : species_) corr.push_back(s->matrix);
    return combine_block(A_, corr);
}

double exp_correlation(double d, double phi) {
    if (!(d >= 0.0)) {
        throw DomainError("exp_correlation: distance must be non-negative");
    }
    if (!(phi > 0.0)) {
        throw DomainError("exp_correlation: decay must be positive");
    }
    return std::exp(-phi * d);
}

double effective_range(double phi) {
    if (!(phi > 0.0)) {
        throw DomainError("effective_range: decay must be positive");
    }
    return kLog20 / phi;
}

void validate(const CoregParams& theta) {
    const Eigen::Index q = theta.A.rows();
    if (q == 0 || theta.A.cols() != q || theta.phi.size() != q) {
        throw DomainError("CoregParams: A must be q x q and phi length q");
    }
    for (Eigen::Index r = 0; r < q; ++r) {
        if (!(theta.A(r, r) > 0.0)) {
            throw DomainError("CoregParams: A diagonal must be strictly positive");
        }
        for (Eigen::Index c = r + 1; c < q; ++c) {
            if (theta.A(r, c) != 0.0) {
                throw DomainError("CoregParams: A must be lower triangular");
            }
        }
        if (!(theta.phi(r) > 0.0) || !std::isfinite(theta.phi(r))) {
            throw DomainError("CoregParams: decays must be positive and finite");
        }
    }
    if (!theta.A.allFinite()) {
        throw DomainError("CoregParams: A must be finite");
    }
}

Eigen::MatrixXd cross_covariance(const Eigen::Vector2d& s, const Eigen::Vector2d& t,
                                 const CoregParams& theta) {
    const double d = (s - t).norm();
    Eigen::VectorXd rho(theta.q());
    for (Eigen::Index r = 0; r < theta.q(); ++r) {
        rho(r) = exp_correlation(d, theta.phi(r));
    }
    return theta.A * rho.asDiagonal() * theta.A.transpose();
}

std::vector<Eigen::MatrixXd> correlation_matrices(const Eigen::MatrixXd& dist, const Eigen::VectorXd& phi) {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(static_cast<std::size_t>(phi.size()));
    for (Eigen::Index r = 0; r < phi.size(); ++r) {
        out.emplace_back((-phi(r) * dist.array()).exp().matrix());
    }
    return out;
}

Eigen::MatrixXd combine_block(const Eigen::MatrixXd& A, const std::vector<Eigen::MatrixXd>& corr) {
    const Eigen::Index q = A.rows();
    const Eigen::Index n = corr.front().rows();
    Eigen::MatrixXd out(n * q, n * q);
    // Outer products of the loading columns, one q x q weight per latent process.
    std::vector<Eigen::MatrixXd> weights;
    weights.reserve(static_cast<std::size_t>(q));
    for (Eigen::Index r = 0; r < q; ++r) {
        weights.emplace_back(A.col(r) * A.col(r).transpose());
    }
    for (Eigen::Index l = 0; l < n; ++l) {
        for (Eigen::Index k = l; k < n; ++k) {
            for (Eigen::Index a = 0; a < q; ++a) {
                for (Eigen::Index b = 0; b < q; ++b) {
                    double v = 0.0;
                    for (Eigen::Index r = 0; r < q; ++r) {
                        v += weights[static_cast<std::size_t>(r)](a, b) * corr[static_cast<std::size_t>(r)](k, l);
                    }
                    out(k * q + a, l * q + b) = v;
                }
            }
        }
    }
    // Mirror the lower block triangle so the result is exactly symmetric.
    for (Eigen::Index col = 0; col < n * q; ++col) {
        for (Eigen::Index row = 0; row < col; ++row) {
            out(row, col) = out(col, row);
        }
    }
    return out;
}

BlockCovariance assemble_block(const SiteSet& sites, const CoregParams& theta) {
    validate(theta);
    if (sites.size() < 1) {
        throw DomainError("assemble_block: need at least one site");
    }
    const auto corr = correlation_matrices(sites.distances(), theta.phi);
    return BlockCovariance(combine_block(theta.A, corr), "spatial block covariance");
}

double mvn_logdensity(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const BlockCovariance& cov) {
    if (x.size() != cov.dim() || mean.size() != cov.dim()) {
        throw DomainError("mvn_logdensity: dimension mismatch");
    }
    const double quad = cov.quad_form(x - mean);
    return -0.5 * (static_cast<double>(cov.dim()) * kLog2Pi + cov.log_det() + quad);
}

}  // namespace standgp
