#include "standgp/assess.hpp"

#include "standgp/error.hpp"

#include <cmath>
#include <limits>

namespace standgp {

DevianceTrace deviance_trace(const Dataset& data, const ModelSpec& spec, const std::vector<ParamState>& draws) {
    if (draws.empty()) {
        throw DomainError("deviance_trace: no draws");
    }
    DevianceTrace trace;
    trace.deviance.reserve(draws.size());
    for (const auto& d : draws) {
        trace.deviance.push_back(-2.0 * full_log_likelihood(data, d, spec));
    }
    // Plug-in state: posterior means of beta and w. Other entries are copied
    // from the first draw and do not enter the likelihood.
    ParamState mean = draws.front();
    const double inv = 1.0 / static_cast<double>(draws.size());
    for (auto& b : mean.beta) b.setZero();
    for (auto& w : mean.w) w.setZero();
    for (const auto& d : draws) {
        for (std::size_t k = 0; k < d.beta.size(); ++k) mean.beta[k] += inv * d.beta[k];
        for (std::size_t k = 0; k < d.w.size(); ++k) mean.w[k] += inv * d.w[k];
    }
    trace.deviance_at_mean = -2.0 * full_log_likelihood(data, mean, spec);
    return trace;
}

DicResult dic(const DevianceTrace& trace) {
    if (trace.deviance.empty()) {
        throw DomainError("dic: empty deviance trace");
    }
    DicResult r;
    r.mean_deviance = mean_of(trace.deviance);
    r.p_d = r.mean_deviance - trace.deviance_at_mean;
    r.dic = r.mean_deviance + r.p_d;
    return r;
}

CellScore score_cell(long y_obs, const std::vector<double>& lambdas) {
    if (lambdas.empty()) {
        throw DomainError("score_cell: empty predictive");
    }
    const double y = static_cast<double>(y_obs);
    const double n = static_cast<double>(lambdas.size());
    // log P(y) = logsumexp_d [y log l_d - l_d - log y!] - log N
    double peak = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(lambdas.size());
    for (double l : lambdas) {
        const double t = y * std::log(l) - l - std::lgamma(y + 1.0);
        terms.push_back(t);
        peak = std::max(peak, t);
    }
    CellScore s;
    if (peak == -std::numeric_limits<double>::infinity()) {
        s.logs = std::numeric_limits<double>::infinity();
        s.logs_infinite = true;
    } else {
        double acc = 0.0;
        for (double t : terms) acc += std::exp(t - peak);
        s.logs = -(peak + std::log(acc) - std::log(n));
    }
    const double mu = mean_of(lambdas);
    double var_lambda = 0.0;
    for (double l : lambdas) var_lambda += (l - mu) * (l - mu);
    var_lambda /= n;
    const double sigma2 = mu + var_lambda;
    if (!(sigma2 > 0.0)) {
        throw DomainError("score_cell: predictive standard deviation is zero; DSS undefined");
    }
    s.ses = (y - mu) * (y - mu);
    s.dss = (y - mu) * (y - mu) / sigma2 + std::log(sigma2);
    return s;
}

ScoreReport score_holdout(const Dataset& holdout, const PredictiveDraws& predictive) {
    if (holdout.n() == 0) {
        throw DataError("assessment: holdout set has no rows");
    }
    if (predictive.n0 != holdout.n() || predictive.q != holdout.q || predictive.m != holdout.m) {
        throw DataError("assessment: predictive draws do not match the holdout layout");
    }
    ScoreReport r;
    r.q = holdout.q;
    r.m = holdout.m;
    const auto cells = static_cast<std::size_t>(r.q * r.m);
    r.logs.assign(cells, 0.0);
    r.ses.assign(cells, 0.0);
    r.dss.assign(cells, 0.0);
    for (int i = 0; i < r.q; ++i) {
        for (int j = 0; j < r.m; ++j) {
            const auto c = static_cast<std::size_t>(i * r.m + j);
            for (int k = 0; k < holdout.n(); ++k) {
                const CellScore s = score_cell(holdout.count(i, j, k), predictive.lambda[predictive.cell(k, i, j)]);
                r.logs[c] += s.logs;
                r.ses[c] += s.ses;
                r.dss[c] += s.dss;
            }
            r.logs[c] /= holdout.n();
            r.ses[c] /= holdout.n();
            r.dss[c] /= holdout.n();
        }
    }
    return r;
}

double gelman_rubin(const std::vector<std::vector<double>>& chains) {
    if (chains.size() < 2) {
        throw DomainError("gelman_rubin: need at least two chains");
    }
    const std::size_t n = chains.front().size();
    if (n < 2) {
        throw DomainError("gelman_rubin: chains need at least two draws");
    }
    std::vector<double> means;
    double within = 0.0;
    for (const auto& c : chains) {
        if (c.size() != n) {
            throw DomainError("gelman_rubin: chains must have equal length");
        }
        means.push_back(mean_of(c));
        within += sample_variance(c);
    }
    within /= static_cast<double>(chains.size());
    if (!(within > 0.0)) {
        throw DomainError("gelman_rubin: zero within-chain variance");
    }
    const double nd = static_cast<double>(n);
    const double between = nd * sample_variance(means);
    return std::sqrt(((nd - 1.0) / nd * within + between / nd) / within);
}

std::vector<ConvergenceEntry> convergence_report(const std::vector<ChainStore>& chains, const Dims& dims,
                                                 const ModelSpec& spec) {
    const auto names = parameter_names(dims, spec);
    std::vector<std::vector<std::vector<double>>> traces(names.size(),
                                                         std::vector<std::vector<double>>(chains.size()));
    for (std::size_t c = 0; c < chains.size(); ++c) {
        for (const auto& draw : chains[c].draws) {
            const auto flat = flatten(draw, dims, spec);
            for (std::size_t k = 0; k < names.size(); ++k) {
                if (!is_random_effect(names[k])) traces[k][c].push_back(flat[k]);
            }
        }
    }
    std::vector<ConvergenceEntry> out;
    for (std::size_t k = 0; k < names.size(); ++k) {
        if (is_random_effect(names[k])) continue;
        out.push_back({names[k], gelman_rubin(traces[k])});
    }
    return out;
}

std::vector<Interval> effective_range_summary(const std::vector<ParamState>& draws, const ModelSpec& spec, int q,
                                              int m) {
    if (!spec.spatial()) {
        throw DomainError("effective ranges are not defined for the nonspatial variant");
    }
    if (draws.empty()) {
        throw DomainError("effective_range_summary: no draws");
    }
    std::vector<Interval> out;
    for (int i = 0; i < q; ++i) {
        for (int j = 0; j < m; ++j) {
            std::vector<double> ranges;
            ranges.reserve(draws.size());
            for (const auto& d : draws) {
                ranges.push_back(effective_range(d.theta[static_cast<std::size_t>(j)].phi(i)));
            }
            out.push_back(summarize_interval(ranges));
        }
    }
    return out;
}

Eigen::MatrixXd coregionalization_correlation(const Eigen::MatrixXd& A) {
    const Eigen::MatrixXd gamma = A * A.transpose();
    const Eigen::VectorXd inv_sd = gamma.diagonal().cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd corr = inv_sd.asDiagonal() * gamma * inv_sd.asDiagonal();
    corr.diagonal().setOnes();
    return corr;
}

std::vector<CorrelationSummary> cross_correlations(const std::vector<ParamState>& draws, const ModelSpec& spec) {
    if (!spec.spatial()) {
        throw DomainError("cross-correlations are not defined for the nonspatial variant");
    }
    if (draws.empty()) {
        throw DomainError("cross_correlations: no draws");
    }
    const std::size_t m = draws.front().theta.size();
    const Eigen::Index q = draws.front().theta.front().q();
    std::vector<CorrelationSummary> out;
    for (std::size_t j = 0; j < m; ++j) {
        std::vector<Eigen::MatrixXd> per_draw;
        per_draw.reserve(draws.size());
        for (const auto& d : draws) per_draw.push_back(coregionalization_correlation(d.theta[j].A));
        CorrelationSummary s{Eigen::MatrixXd(q, q), Eigen::MatrixXd(q, q), Eigen::MatrixXd(q, q)};
        for (Eigen::Index a = 0; a < q; ++a) {
            for (Eigen::Index b = 0; b < q; ++b) {
                std::vector<double> v;
                v.reserve(per_draw.size());
                for (const auto& c : per_draw) v.push_back(c(a, b));
                const Interval iv = summarize_interval(v);
                s.median(a, b) = iv.median;
                s.lower(a, b) = iv.lower;
                s.upper(a, b) = iv.upper;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ParamState> pool_draws(const std::vector<ChainStore>& chains) {
    std::vector<ParamState> out;
    for (const auto& c : chains) out.insert(out.end(), c.draws.begin(), c.draws.end());
    return out;
}

}  // namespace standgp
