#include "standgp/model.hpp"

#include "standgp/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace standgp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// exp() of anything larger overflows a double.
constexpr double kMaxLinearPredictor = 700.0;

double log_multigamma(double a, int d) {
    double out = 0.25 * d * (d - 1) * std::log(std::numbers::pi);
    for (int i = 1; i <= d; ++i) {
        out += std::lgamma(a + 0.5 * (1 - i));
    }
    return out;
}

bool positive_diagonal(const Eigen::MatrixXd& L) {
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
        if (!(L(i, i) > 0.0) || !std::isfinite(L(i, i))) {
            return false;
        }
    }
    return true;
}

}  // namespace

void Dataset::validate() const {
    const auto n_sites = static_cast<std::size_t>(n());
    if (q < 1 || m < 1 || n_sites < 1 || p < 1) {
        throw DataError("dataset: empty dimensions");
    }
    if (sites.ids.size() != n_sites) {
        throw DataError("dataset: site id count does not match coordinates");
    }
    if (!sites.coords.allFinite()) {
        throw DataError("dataset: non-finite coordinates");
    }
    if (counts.size() != static_cast<std::size_t>(q * m) * n_sites ||
        design.size() != static_cast<std::size_t>(q * m)) {
        throw DataError("dataset: storage size mismatch");
    }
    for (long y : counts) {
        if (y < 0) {
            throw DataError("dataset: negative count");
        }
    }
    for (const auto& X : design) {
        if (X.rows() != n() || X.cols() != p || !X.allFinite()) {
            throw DataError("dataset: design matrix shape or values invalid");
        }
    }
}

long Dataset::total_count(int i) const {
    long total = 0;
    for (int j = 0; j < m; ++j) {
        for (int k = 0; k < n(); ++k) {
            total += count(i, j, k);
        }
    }
    return total;
}

bool operator==(const Dataset& a, const Dataset& b) {
    return a.q == b.q && a.m == b.m && a.p == b.p && a.sites.ids == b.sites.ids &&
           a.sites.coords == b.sites.coords && a.counts == b.counts && a.design == b.design &&
           a.area_factor == b.area_factor;
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::NonspatialCovariates: return "nonspatial_covariates";
        case Variant::SpatialNoCovariates: return "spatial_nocovariates";
        case Variant::SpatialCovariates: return "spatial_covariates";
    }
    return "?";
}

std::string to_string(BetaDynamics d) {
    switch (d) {
        case BetaDynamics::Markov: return "markov";
        case BetaDynamics::Independent: return "independent";
        case BetaDynamics::Flat: return "flat";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    if (s == "nonspatial_covariates") return Variant::NonspatialCovariates;
    if (s == "spatial_nocovariates") return Variant::SpatialNoCovariates;
    if (s == "spatial_covariates") return Variant::SpatialCovariates;
    throw ConfigError("unknown model variant '" + s + "'");
}

BetaDynamics parse_dynamics(const std::string& s) {
    if (s == "markov") return BetaDynamics::Markov;
    if (s == "independent") return BetaDynamics::Independent;
    if (s == "flat") return BetaDynamics::Flat;
    throw ConfigError("unknown beta dynamics '" + s + "'");
}

PhiBounds ModelSpec::phi_bounds(int i, int j) const {
    const auto it = phi_overrides.find({i, j});
    return it == phi_overrides.end() ? phi_default : it->second;
}

void ModelSpec::validate(int p, int q) const {
    if (has_sigma_eta() && !(r_eta_for(p) >= p + 1.0)) {
        throw ConfigError("model: r_eta must be at least p+1");
    }
    if (spatial() && !(r_gamma_for(q) >= q + 1.0)) {
        throw ConfigError("model: r_gamma must be at least q+1");
    }
    if (!(sigma0 > 0.0) || !(upsilon_eta > 0.0) || !(upsilon_gamma > 0.0)) {
        throw ConfigError("model: prior scales must be positive");
    }
    auto check = [](const PhiBounds& b) {
        if (!(b.lo > 0.0) || !(b.lo < b.hi) || !std::isfinite(b.hi)) {
            throw ConfigError("model: phi bounds must satisfy 0 < lo < hi");
        }
    };
    check(phi_default);
    for (const auto& [key, b] : phi_overrides) {
        check(b);
    }
}

Dims model_dims(const Dataset& data, const ModelSpec& spec) {
    return {data.q, data.m, data.n(), spec.uses_covariates() ? data.p : 1};
}

bool operator==(const ParamState& a, const ParamState& b) {
    if (a.theta.size() != b.theta.size()) {
        return false;
    }
    for (std::size_t j = 0; j < a.theta.size(); ++j) {
        if (a.theta[j].A != b.theta[j].A || a.theta[j].phi != b.theta[j].phi) {
            return false;
        }
    }
    return a.beta0 == b.beta0 && a.beta == b.beta && a.V == b.V && a.w == b.w;
}

void check_shape(const ParamState& state, const Dims& dims, const ModelSpec& spec) {
    const auto qs = static_cast<std::size_t>(dims.q);
    const auto ms = static_cast<std::size_t>(dims.m);
    auto fail = [](const std::string& what) { throw DomainError("parameter state: " + what); };
    if (state.beta.size() != qs * ms) fail("beta count");
    for (const auto& b : state.beta) {
        if (b.size() != dims.p) fail("beta length");
    }
    if (spec.has_beta0()) {
        if (state.beta0.size() != qs) fail("beta0 count");
        for (const auto& b : state.beta0) {
            if (b.size() != dims.p) fail("beta0 length");
        }
    } else if (!state.beta0.empty()) {
        fail("beta0 present but dynamics has none");
    }
    if (spec.has_sigma_eta()) {
        const std::size_t nv = spec.shared_sigma_eta ? 1 : ms;
        if (state.V.size() != nv) fail("V count");
        for (const auto& v : state.V) {
            if (v.rows() != dims.p || v.cols() != dims.p) fail("V shape");
        }
    } else if (!state.V.empty()) {
        fail("V present under flat prior");
    }
    if (spec.spatial()) {
        if (state.theta.size() != ms || state.w.size() != ms) fail("theta/w count");
        for (const auto& t : state.theta) {
            if (t.A.rows() != dims.q || t.A.cols() != dims.q || t.phi.size() != dims.q) fail("theta shape");
        }
        for (const auto& w : state.w) {
            if (w.size() != dims.n * dims.q) fail("w length");
        }
    } else if (!state.theta.empty() || !state.w.empty()) {
        fail("spatial parameters present in nonspatial variant");
    }
}

double Transform::forward(double c) const {
    switch (kind) {
        case TransformKind::Identity: return c;
        case TransformKind::Log:
            if (!(c > 0.0)) throw DomainError("log transform: value must be positive");
            return std::log(c);
        case TransformKind::Logit: {
            if (!(c > lo && c < hi)) throw DomainError("logit transform: value outside (lo, hi)");
            const double t = (c - lo) / (hi - lo);
            return std::log(t) - std::log1p(-t);
        }
    }
    return c;
}

double Transform::inverse(double u) const {
    switch (kind) {
        case TransformKind::Identity: return u;
        case TransformKind::Log: return std::exp(u);
        case TransformKind::Logit: {
            // Numerically stable logistic.
            const double t = u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
            // Saturated logistics would land on a bound; stay strictly inside.
            return std::clamp(lo + (hi - lo) * t, std::nextafter(lo, hi), std::nextafter(hi, lo));
        }
    }
    return u;
}

double Transform::log_jacobian(double u) const {
    switch (kind) {
        case TransformKind::Identity: return 0.0;
        case TransformKind::Log: return u;
        case TransformKind::Logit: {
            // log sigma(u) + log(1 - sigma(u)) = -|u| - 2 log(1 + exp(-|u|))
            const double a = std::abs(u);
            return std::log(hi - lo) - a - 2.0 * std::log1p(std::exp(-a));
        }
    }
    return 0.0;
}

double poisson_cell_term(const Dataset& data, int i, int j, const Eigen::VectorXd& beta,
                         const Eigen::VectorXd* w, int p) {
    const int n = data.n();
    const int q = data.q;
    const Eigen::VectorXd eta = data.x(i, j).leftCols(p) * beta;
    double out = 0.0;
    for (int k = 0; k < n; ++k) {
        double lin = eta(k);
        if (w != nullptr) {
            lin += (*w)(k * q + i);
        }
        if (!(lin < kMaxLinearPredictor)) {
            return kNegInf;
        }
        out += static_cast<double>(data.count(i, j, k)) * lin - std::exp(lin);
    }
    return out;
}

double normal_chol_logdensity(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& L) {
    if (!positive_diagonal(L)) {
        return kNegInf;
    }
    const Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(x - mean);
    const double log_det = 2.0 * L.diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + log_det + z.squaredNorm());
}

double cholesky_map_log_jacobian(const Eigen::MatrixXd& L) {
    const Eigen::Index d = L.rows();
    double out = static_cast<double>(d) * std::numbers::ln2;
    for (Eigen::Index i = 0; i < d; ++i) {
        out += static_cast<double>(d - i) * std::log(L(i, i));
    }
    return out;
}

double iw_cholesky_logdensity(const Eigen::MatrixXd& L, double r, double upsilon) {
    if (!positive_diagonal(L)) {
        return kNegInf;
    }
    const int d = static_cast<int>(L.rows());
    const double log_det_sigma = 2.0 * L.diagonal().array().log().sum();
    // tr(upsilon * Sigma^{-1}) = upsilon * ||L^{-1}||_F^2
    const Eigen::MatrixXd Linv =
        L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(d, d));
    const double trace = upsilon * Linv.squaredNorm();
    const double log_iw = 0.5 * r * d * std::log(upsilon) - 0.5 * r * d * std::numbers::ln2 -
                          log_multigamma(0.5 * r, d) - 0.5 * (r + d + 1.0) * log_det_sigma - 0.5 * trace;
    return log_iw + cholesky_map_log_jacobian(L);
}

double beta_step_term(const ModelSpec& spec, const ParamState& state, int i, int j, int m) {
    const auto& b = state.b(i, j, m);
    switch (spec.beta_dynamics) {
        case BetaDynamics::Flat: return 0.0;
        case BetaDynamics::Independent:
            return normal_chol_logdensity(b, Eigen::VectorXd::Zero(b.size()), state.v_for(j));
        case BetaDynamics::Markov: {
            const auto& prev = j == 0 ? state.beta0[static_cast<std::size_t>(i)] : state.b(i, j - 1, m);
            return normal_chol_logdensity(b, prev, state.v_for(j));
        }
    }
    return 0.0;
}

double theta_prior_term(const ModelSpec& spec, const CoregParams& theta, int j) {
    const int q = static_cast<int>(theta.q());
    double out = iw_cholesky_logdensity(theta.A, spec.r_gamma_for(q), spec.upsilon_gamma);
    for (int i = 0; i < q; ++i) {
        const auto bounds = spec.phi_bounds(i, j);
        const double phi = theta.phi(i);
        if (!(phi > bounds.lo && phi < bounds.hi)) {
            return kNegInf;
        }
        out -= std::log(bounds.hi - bounds.lo);
    }
    return out;
}

double log_poisson_term(const Dataset& data, const ParamState& state, const ModelSpec& spec) {
    const Dims dims = model_dims(data, spec);
    double out = 0.0;
    for (int i = 0; i < dims.q; ++i) {
        for (int j = 0; j < dims.m; ++j) {
            const Eigen::VectorXd* w = spec.spatial() ? &state.w[static_cast<std::size_t>(j)] : nullptr;
            out += poisson_cell_term(data, i, j, state.b(i, j, dims.m), w, dims.p);
        }
    }
    return out;
}

double log_beta_prior(const ParamState& state, const ModelSpec& spec, const Dims& dims) {
    if (spec.beta_dynamics == BetaDynamics::Flat) {
        return 0.0;
    }
    double out = 0.0;
    if (spec.has_beta0()) {
        const Eigen::VectorXd mean = Eigen::VectorXd::Constant(dims.p, spec.m0);
        const Eigen::MatrixXd L0 = Eigen::MatrixXd::Identity(dims.p, dims.p) * std::sqrt(spec.sigma0);
        for (const auto& b0 : state.beta0) {
            out += normal_chol_logdensity(b0, mean, L0);
        }
    }
    for (int i = 0; i < dims.q; ++i) {
        for (int j = 0; j < dims.m; ++j) {
            out += beta_step_term(spec, state, i, j, dims.m);
        }
    }
    return out;
}

double log_hyper_priors(const ParamState& state, const ModelSpec& spec, const Dims& dims) {
    double out = 0.0;
    if (spec.has_sigma_eta()) {
        for (const auto& V : state.V) {
            out += iw_cholesky_logdensity(V, spec.r_eta_for(dims.p), spec.upsilon_eta);
        }
    }
    if (spec.spatial()) {
        for (int j = 0; j < dims.m; ++j) {
            out += theta_prior_term(spec, state.theta[static_cast<std::size_t>(j)], j);
        }
    }
    return out;
}

double log_spatial_term(const Dataset& data, const ParamState& state, const ModelSpec& spec) {
    if (!spec.spatial()) {
        return 0.0;
    }
    const Eigen::MatrixXd dist = data.sites.distances();
    const Eigen::Index nq = static_cast<Eigen::Index>(data.n()) * data.q;
    double out = 0.0;
    for (int j = 0; j < data.m; ++j) {
        const auto& theta = state.theta[static_cast<std::size_t>(j)];
        if (!positive_diagonal(theta.A) || !(theta.phi.array() > 0.0).all()) {
            return kNegInf;
        }
        try {
            const BlockCovariance cov(combine_block(theta.A, correlation_matrices(dist, theta.phi)),
                                      "class " + std::to_string(j + 1));
            const Eigen::VectorXd prev =
                j == 0 ? Eigen::VectorXd::Zero(nq) : state.w[static_cast<std::size_t>(j - 1)];
            out += mvn_logdensity(state.w[static_cast<std::size_t>(j)], prev, cov);
        } catch (const SingularCovariance&) {
            return kNegInf;
        }
    }
    return out;
}

double log_joint(const Dataset& data, const ParamState& state, const ModelSpec& spec) {
    const Dims dims = model_dims(data, spec);
    check_shape(state, dims, spec);
    const double terms[] = {log_hyper_priors(state, spec, dims), log_beta_prior(state, spec, dims),
                            log_spatial_term(data, state, spec), log_poisson_term(data, state, spec)};
    double out = 0.0;
    for (double t : terms) {
        if (std::isnan(t) || t == kNegInf) {
            return kNegInf;
        }
        out += t;
    }
    return out;
}

double full_log_likelihood(const Dataset& data, const ParamState& state, const ModelSpec& spec) {
    double out = log_poisson_term(data, state, spec);
    for (long y : data.counts) {
        out -= std::lgamma(static_cast<double>(y) + 1.0);
    }
    return out;
}

}  // namespace standgp
