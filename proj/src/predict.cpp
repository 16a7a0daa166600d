#include "standgp/predict.hpp"

#include "standgp/error.hpp"
#include "standgp/stats.hpp"

#include <cmath>
#include <random>

namespace standgp {

namespace {

constexpr double kMaxLogIntensity = 700.0;

}  // namespace

std::vector<ClassKriging> prepare_kriging(const ParamState& draw, const SiteSet& sites) {
    std::vector<ClassKriging> out;
    out.reserve(draw.theta.size());
    for (std::size_t l = 0; l < draw.theta.size(); ++l) {
        const auto& theta = draw.theta[l];
        validate(theta);
        BlockCovariance cov(combine_block(theta.A, correlation_matrices(sites.distances(), theta.phi)),
                            "class " + std::to_string(l + 1) + " covariance");
        Eigen::VectorXd delta = l == 0 ? draw.w[0] : Eigen::VectorXd(draw.w[l] - draw.w[l - 1]);
        Eigen::VectorXd alpha = cov.solve(delta);
        out.push_back({theta, std::move(cov), std::move(alpha)});
    }
    return out;
}

Increment kriging_increment(const Eigen::Vector2d& s0, const ClassKriging& ck, const SiteSet& sites) {
    const Eigen::Index q = ck.theta.q();
    const Eigen::Index n = sites.size();
    // K is nq x q with k-th block C(s_k, s0).
    Eigen::MatrixXd K(n * q, q);
    for (Eigen::Index k = 0; k < n; ++k) {
        K.block(k * q, 0, q, q) = cross_covariance(sites.coords.row(k).transpose(), s0, ck.theta);
    }
    Increment inc;
    inc.mean = K.transpose() * ck.alpha;
    const Eigen::MatrixXd whitened = ck.cov.whiten(K);
    inc.cov = cross_covariance(s0, s0, ck.theta) - whitened.transpose() * whitened;
    inc.cov = 0.5 * (inc.cov + inc.cov.transpose());
    return inc;
}

Eigen::VectorXd sample_normal_psd(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = normal(rng);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    // Round-off can leave tiny negative eigenvalues at observed sites.
    const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return mean + eig.eigenvectors() * root.asDiagonal() * z;
}

ConditionalW conditional_w(const Eigen::Vector2d& s0, const std::vector<ClassKriging>& prepared, const SiteSet& sites,
                           int upto_class, Rng* rng) {
    if (upto_class < 1 || upto_class > static_cast<int>(prepared.size())) {
        throw DomainError("conditional_w: class index out of range");
    }
    ConditionalW out;
    const Eigen::Index q = prepared.front().theta.q();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd running = Eigen::VectorXd::Zero(q);
    for (int l = 0; l < upto_class; ++l) {
        const Increment inc = kriging_increment(s0, prepared[static_cast<std::size_t>(l)], sites);
        mean += inc.mean;
        cov += inc.cov;
        out.mean.push_back(mean);
        out.cov.push_back(cov);
        if (rng != nullptr) {
            running += sample_normal_psd(inc.mean, inc.cov, *rng);
            out.sample.push_back(running);
        }
    }
    return out;
}

ConditionalW conditional_w(const Eigen::Vector2d& s0, const ParamState& draw, const SiteSet& sites, int upto_class,
                           Rng* rng) {
    if (draw.theta.empty()) {
        throw DomainError("conditional_w: draw has no spatial parameters");
    }
    return conditional_w(s0, prepare_kriging(draw, sites), sites, upto_class, rng);
}

std::vector<std::size_t> subsample_indices(std::size_t pool, std::optional<long> limit) {
    std::vector<std::size_t> out;
    if (!limit || *limit <= 0 || static_cast<std::size_t>(*limit) >= pool) {
        for (std::size_t d = 0; d < pool; ++d) out.push_back(d);
        return out;
    }
    const auto take = static_cast<std::size_t>(*limit);
    for (std::size_t t = 0; t < take; ++t) {
        out.push_back(t * pool / take);
    }
    return out;
}

PredictiveDraws predictive_counts(const PredictionRequest& request, const std::vector<ParamState>& draws,
                                  const Dataset& data, const ModelSpec& spec, Rng& rng) {
    const Dims dims = model_dims(data, spec);
    const int n0 = static_cast<int>(request.new_sites.size());
    if (draws.empty()) {
        throw DomainError("predictive_counts: no posterior draws");
    }
    if (request.design.size() != static_cast<std::size_t>(dims.q * dims.m)) {
        throw DataError("prediction covariates: expected one design matrix per (species, class)");
    }
    for (const auto& X : request.design) {
        if (X.rows() != n0 || X.cols() < dims.p || (spec.uses_covariates() && X.cols() != data.p)) {
            throw DataError("prediction covariates: dimensions do not match the fitted model");
        }
    }

    PredictiveDraws out;
    out.n0 = n0;
    out.q = dims.q;
    out.m = dims.m;
    const auto cells = static_cast<std::size_t>(n0 * dims.q * dims.m);
    out.counts.assign(cells, {});
    out.lambda.assign(cells, {});

    for (std::size_t d : subsample_indices(draws.size(), request.draw_subsample)) {
        const ParamState& draw = draws[d];
        std::vector<ClassKriging> prepared;
        if (spec.spatial()) {
            prepared = prepare_kriging(draw, data.sites);
        }
        for (int s = 0; s < n0; ++s) {
            ConditionalW cw;
            if (spec.spatial()) {
                cw = conditional_w(request.new_sites.coords.row(s).transpose(), prepared, data.sites, dims.m, &rng);
            }
            for (int i = 0; i < dims.q; ++i) {
                for (int j = 0; j < dims.m; ++j) {
                    const auto& X = request.design[static_cast<std::size_t>(i * dims.m + j)];
                    double log_lambda = X.row(s).head(dims.p).dot(draw.b(i, j, dims.m));
                    if (spec.spatial()) {
                        log_lambda += cw.sample[static_cast<std::size_t>(j)](i);
                    }
                    if (!(log_lambda < kMaxLogIntensity)) {
                        throw NumericError("predictive intensity overflow");
                    }
                    const double lambda = std::exp(log_lambda);
                    std::poisson_distribution<long> poisson(lambda);
                    const std::size_t c = out.cell(s, i, j);
                    out.lambda[c].push_back(lambda);
                    out.counts[c].push_back(poisson(rng));
                }
            }
        }
    }
    return out;
}

PredictiveSummary summarize_predictive(const std::vector<long>& draws, double scale) {
    if (draws.empty()) {
        throw DomainError("summarize_predictive: empty draw list");
    }
    PredictiveSummary s;
    s.median = scale * static_cast<double>(quantile_nearest_rank(draws, 0.5));
    s.lower95 = scale * static_cast<double>(quantile_nearest_rank(draws, 0.025));
    s.upper95 = scale * static_cast<double>(quantile_nearest_rank(draws, 0.975));
    s.range = s.upper95 - s.lower95;
    return s;
}

}  // namespace standgp
