#include "oracle.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace oracle {

using standgp::BetaDynamics;
using standgp::Dataset;
using standgp::ModelSpec;
using standgp::ParamState;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_det_lu(const MatrixXd& M) {
    const Eigen::FullPivLU<MatrixXd> lu(M);
    const VectorXd d = lu.matrixLU().diagonal();
    double out = 0.0;
    for (Eigen::Index k = 0; k < d.size(); ++k) out += std::log(std::abs(d(k)));
    return out;
}

double dense_normal(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
    const Eigen::FullPivLU<MatrixXd> lu(cov);
    const VectorXd r = x - mean;
    const double quad = r.dot(lu.solve(r));
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + log_det_lu(cov) + quad);
}

// Entry (site a, species i), (site b, species k) of A D(exp(-phi d)) A'.
double class_cov(const standgp::CoregParams& t, const Eigen::MatrixX2d& coords, int a, int i, int b, int k) {
    const double d = std::hypot(coords(a, 0) - coords(b, 0), coords(a, 1) - coords(b, 1));
    double out = 0.0;
    for (int r = 0; r < t.A.cols(); ++r) out += t.A(i, r) * t.A(k, r) * std::exp(-t.phi(r) * d);
    return out;
}

// Joint covariance of (w_1, ..., w_J) over `coords`, each w_j site-major:
// cov(w_j, w_l) = sum over classes c <= min(j, l) of Sigma_c.
MatrixXd cumulative_cov(const std::vector<standgp::CoregParams>& theta, const Eigen::MatrixX2d& coords, int J) {
    const int n = static_cast<int>(coords.rows());
    const int q = static_cast<int>(theta.front().A.rows());
    const int nq = n * q;
    MatrixXd C = MatrixXd::Zero(J * nq, J * nq);
    for (int j = 0; j < J; ++j) {
        for (int l = 0; l < J; ++l) {
            for (int c = 0; c <= std::min(j, l); ++c) {
                for (int a = 0; a < n; ++a) {
                    for (int i = 0; i < q; ++i) {
                        for (int b = 0; b < n; ++b) {
                            for (int k = 0; k < q; ++k) {
                                C(j * nq + a * q + i, l * nq + b * q + k) +=
                                    class_cov(theta[static_cast<std::size_t>(c)], coords, a, i, b, k);
                            }
                        }
                    }
                }
            }
        }
    }
    return C;
}

double log_multigamma(double a, int d) {
    double out = d * (d - 1) / 4.0 * std::log(std::numbers::pi);
    for (int k = 0; k < d; ++k) out += std::lgamma(a - 0.5 * k);
    return out;
}

// IW(Sigma | r, upsilon I) for Sigma = L L', times the Jacobian of L -> Sigma.
double iw_on_factor(const MatrixXd& L, double r, double upsilon) {
    const int d = static_cast<int>(L.rows());
    for (int k = 0; k < d; ++k) {
        if (!(L(k, k) > 0.0)) return kNegInf;
    }
    const MatrixXd S = L * L.transpose();
    const MatrixXd Psi = upsilon * MatrixXd::Identity(d, d);
    const double dens = 0.5 * r * log_det_lu(Psi) - 0.5 * r * d * std::log(2.0) - log_multigamma(0.5 * r, d) -
                        0.5 * (r + d + 1.0) * log_det_lu(S) - 0.5 * (Psi * S.inverse()).trace();
    return dens + numeric_cholesky_jacobian(L);
}

}  // namespace

double numeric_cholesky_jacobian(const MatrixXd& L) {
    const int d = static_cast<int>(L.rows());
    std::vector<std::pair<int, int>> idx;
    for (int c = 0; c < d; ++c) {
        for (int r = c; r < d; ++r) idx.emplace_back(r, c);
    }
    const int k = static_cast<int>(idx.size());
    auto vech = [&](const MatrixXd& M) {
        VectorXd v(k);
        for (int t = 0; t < k; ++t) v(t) = M(idx[static_cast<std::size_t>(t)].first, idx[static_cast<std::size_t>(t)].second);
        return v;
    };
    MatrixXd J(k, k);
    for (int t = 0; t < k; ++t) {
        MatrixXd plus = L;
        MatrixXd minus = L;
        plus(idx[static_cast<std::size_t>(t)].first, idx[static_cast<std::size_t>(t)].second) += 1.0;
        minus(idx[static_cast<std::size_t>(t)].first, idx[static_cast<std::size_t>(t)].second) -= 1.0;
        J.col(t) = 0.5 * (vech(plus * plus.transpose()) - vech(minus * minus.transpose()));
    }
    return log_det_lu(J);
}

double dense_log_joint(const Dataset& data, const ParamState& state, const ModelSpec& spec) {
    const int n = data.n();
    const int q = data.q;
    const int m = data.m;
    const int p = spec.uses_covariates() ? data.p : 1;
    double out = 0.0;

    // Poisson terms.
    for (int i = 0; i < q; ++i) {
        for (int j = 0; j < m; ++j) {
            const VectorXd& b = state.beta[static_cast<std::size_t>(i * m + j)];
            for (int k = 0; k < n; ++k) {
                double lin = 0.0;
                for (int c = 0; c < p; ++c) lin += data.x(i, j)(k, c) * b(c);
                if (spec.spatial()) lin += state.w[static_cast<std::size_t>(j)](k * q + i);
                out += static_cast<double>(data.count(i, j, k)) * lin - std::exp(lin);
            }
        }
    }

    // One joint normal per species over its whole coefficient path.
    auto sigma_eta = [&](int j) {
        const MatrixXd& V = state.V.size() == 1 ? state.V.front() : state.V[static_cast<std::size_t>(j)];
        return MatrixXd(V * V.transpose());
    };
    if (spec.beta_dynamics == BetaDynamics::Markov) {
        const int len = (m + 1) * p;
        MatrixXd C(len, len);
        for (int a = 0; a <= m; ++a) {
            for (int b = 0; b <= m; ++b) {
                MatrixXd block = spec.sigma0 * MatrixXd::Identity(p, p);
                for (int c = 0; c < std::min(a, b); ++c) block += sigma_eta(c);
                C.block(a * p, b * p, p, p) = block;
            }
        }
        for (int i = 0; i < q; ++i) {
            VectorXd path(len);
            path.head(p) = state.beta0[static_cast<std::size_t>(i)];
            for (int j = 0; j < m; ++j) path.segment((j + 1) * p, p) = state.beta[static_cast<std::size_t>(i * m + j)];
            out += dense_normal(path, VectorXd::Constant(len, spec.m0), C);
        }
    } else if (spec.beta_dynamics == BetaDynamics::Independent) {
        MatrixXd C = MatrixXd::Zero(m * p, m * p);
        for (int j = 0; j < m; ++j) C.block(j * p, j * p, p, p) = sigma_eta(j);
        for (int i = 0; i < q; ++i) {
            VectorXd path(m * p);
            for (int j = 0; j < m; ++j) path.segment(j * p, p) = state.beta[static_cast<std::size_t>(i * m + j)];
            out += dense_normal(path, VectorXd::Zero(m * p), C);
        }
    }
    if (spec.beta_dynamics != BetaDynamics::Flat) {
        for (const auto& V : state.V) out += iw_on_factor(V, spec.r_eta.value_or(p + 1.0), spec.upsilon_eta);
    }

    if (spec.spatial()) {
        for (int j = 0; j < m; ++j) {
            const auto& t = state.theta[static_cast<std::size_t>(j)];
            out += iw_on_factor(t.A, spec.r_gamma.value_or(q + 1.0), spec.upsilon_gamma);
            for (int i = 0; i < q; ++i) {
                const auto bounds = spec.phi_bounds(i, j);
                if (!(t.phi(i) > bounds.lo && t.phi(i) < bounds.hi)) return kNegInf;
                out -= std::log(bounds.hi - bounds.lo);
            }
        }
        VectorXd all(m * n * q);
        for (int j = 0; j < m; ++j) all.segment(j * n * q, n * q) = state.w[static_cast<std::size_t>(j)];
        out += dense_normal(all, VectorXd::Zero(all.size()), cumulative_cov(state.theta, data.sites.coords, m));
    }
    return out;
}

DenseConditional dense_conditional_w(const Eigen::Vector2d& s0, const ParamState& draw,
                                     const Eigen::MatrixX2d& coords, int upto_class) {
    const int n = static_cast<int>(coords.rows());
    const int q = static_cast<int>(draw.theta.front().A.rows());
    const int J = upto_class;
    Eigen::MatrixX2d pts(n + 1, 2);
    pts.topRows(n) = coords;
    pts.row(n) = s0.transpose();
    const MatrixXd full = cumulative_cov(draw.theta, pts, J);
    const int stride = (n + 1) * q;

    // Split every class block into observed rows and the q rows of s0.
    std::vector<int> obs;
    std::vector<int> target;
    for (int j = 0; j < J; ++j) {
        for (int r = 0; r < n * q; ++r) obs.push_back(j * stride + r);
        for (int i = 0; i < q; ++i) target.push_back(j * stride + n * q + i);
    }
    auto sub = [&](const std::vector<int>& rows, const std::vector<int>& cols) {
        MatrixXd M(rows.size(), cols.size());
        for (std::size_t a = 0; a < rows.size(); ++a) {
            for (std::size_t b = 0; b < cols.size(); ++b) M(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = full(rows[a], cols[b]);
        }
        return M;
    };
    const MatrixXd Soo = sub(obs, obs);
    const MatrixXd Sto = sub(target, obs);
    const MatrixXd Stt = sub(target, target);
    VectorXd wobs(n * q * J);
    for (int j = 0; j < J; ++j) wobs.segment(j * n * q, n * q) = draw.w[static_cast<std::size_t>(j)];

    const Eigen::FullPivLU<MatrixXd> lu(Soo);
    const VectorXd mean = Sto * lu.solve(wobs);
    const MatrixXd cov = Stt - Sto * lu.solve(Sto.transpose());
    DenseConditional out;
    for (int j = 0; j < J; ++j) {
        out.mean.push_back(mean.segment(j * q, q));
        out.cov.push_back(cov.block(j * q, j * q, q, q));
    }
    return out;
}

Instance random_instance(standgp::Rng& rng, int max_n, int max_q, int max_m) {
    std::uniform_int_distribution<int> pick_n(2, max_n);
    std::uniform_int_distribution<int> pick_q(1, max_q);
    std::uniform_int_distribution<int> pick_m(1, max_m);
    std::uniform_int_distribution<int> pick_p(1, 3);
    std::uniform_int_distribution<int> pick3(0, 2);
    std::uniform_int_distribution<long> pick_y(0, 25);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal;

    Instance inst;
    Dataset& d = inst.data;
    const int n = pick_n(rng);
    d.q = pick_q(rng);
    d.m = pick_m(rng);
    d.p = pick_p(rng);
    d.sites.coords.resize(n, 2);
    for (int k = 0; k < n; ++k) {
        d.sites.coords(k, 0) = 2.0 * unit(rng);
        d.sites.coords(k, 1) = 2.0 * unit(rng);
        d.sites.ids.push_back("s" + std::to_string(k));
    }
    for (int c = 0; c < d.q * d.m; ++c) {
        MatrixXd X = MatrixXd::Ones(n, d.p);
        for (int k = 0; k < n; ++k) {
            for (int col = 1; col < d.p; ++col) X(k, col) = normal(rng);
        }
        d.design.push_back(X);
        for (int k = 0; k < n; ++k) d.counts.push_back(pick_y(rng));
    }

    ModelSpec& s = inst.spec;
    const standgp::Variant variants[] = {standgp::Variant::NonspatialCovariates,
                                         standgp::Variant::SpatialNoCovariates, standgp::Variant::SpatialCovariates};
    const BetaDynamics dynamics[] = {BetaDynamics::Markov, BetaDynamics::Independent, BetaDynamics::Flat};
    s.variant = variants[pick3(rng)];
    s.beta_dynamics = dynamics[pick3(rng)];
    s.shared_sigma_eta = unit(rng) < 0.5;
    s.m0 = normal(rng);
    s.sigma0 = 0.5 + 10.0 * unit(rng);
    s.upsilon_eta = 0.01 + unit(rng);
    s.upsilon_gamma = 0.01 + unit(rng);
    if (unit(rng) < 0.5) s.r_eta = 4.0 + unit(rng);
    if (unit(rng) < 0.5) s.r_gamma = 3.0 + unit(rng);
    s.phi_overrides[{0, 0}] = {0.5, 3.0};

    const int p = s.uses_covariates() ? d.p : 1;
    ParamState& st = inst.state;
    auto lower = [&](int dim, double diag_lo, double diag_hi, double off_sd) {
        MatrixXd L = MatrixXd::Zero(dim, dim);
        for (int r = 0; r < dim; ++r) {
            L(r, r) = diag_lo + (diag_hi - diag_lo) * unit(rng);
            for (int c = 0; c < r; ++c) L(r, c) = off_sd * normal(rng);
        }
        return L;
    };
    auto vec = [&](int len, double sd) {
        VectorXd v(len);
        for (int k = 0; k < len; ++k) v(k) = sd * normal(rng);
        return v;
    };
    if (s.has_beta0()) {
        for (int i = 0; i < d.q; ++i) st.beta0.push_back(vec(p, 1.0));
    }
    for (int c = 0; c < d.q * d.m; ++c) st.beta.push_back(vec(p, 0.7));
    if (s.has_sigma_eta()) {
        const int nv = s.shared_sigma_eta ? 1 : d.m;
        for (int v = 0; v < nv; ++v) st.V.push_back(lower(p, 0.3, 1.2, 0.3));
    }
    if (s.spatial()) {
        for (int j = 0; j < d.m; ++j) {
            Eigen::VectorXd phi(d.q);
            for (int i = 0; i < d.q; ++i) {
                const auto b = s.phi_bounds(i, j);
                phi(i) = b.lo + (b.hi - b.lo) * (0.05 + 0.9 * unit(rng));
            }
            st.theta.push_back({lower(d.q, 0.2, 1.0, 0.4), phi});
            st.w.push_back(vec(n * d.q, 0.5));
        }
    }
    return inst;
}

}  // namespace oracle
