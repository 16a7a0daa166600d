#pragma once

#include "standgp/model.hpp"
#include "standgp/predict.hpp"
#include "standgp/sampler.hpp"
#include "standgp/stats.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace standgp {

/// Per-draw deviance -2 log p(y | theta) (log y! included) and the deviance
/// at the posterior mean of the intensity-determining parameters (beta, w).
struct DevianceTrace {
    std::vector<double> deviance;
    double deviance_at_mean = 0.0;
};

struct DicResult {
    double mean_deviance = 0.0;
    double p_d = 0.0;
    double dic = 0.0;
};

[[nodiscard]] DevianceTrace deviance_trace(const Dataset& data, const ModelSpec& spec,
                                           const std::vector<ParamState>& draws);
/// p_D = mean(D) - D(theta_bar); DIC = mean(D) + p_D.
[[nodiscard]] DicResult dic(const DevianceTrace& trace);

struct CellScore {
    double logs = 0.0;
    double ses = 0.0;
    double dss = 0.0;
    /// Set when the mixture probability of y_obs underflows to zero.
    bool logs_infinite = false;
};

/// Scores one held-out count against the mixture of Poisson(lambda_d):
/// LogS = -log P(y), SES = (y - mu)^2, DSS = ((y - mu)/sigma)^2 + 2 log sigma,
/// with mu and sigma^2 = E[lambda] + Var[lambda] the mixture moments.
/// Throws DomainError for an empty predictive or sigma = 0.
[[nodiscard]] CellScore score_cell(long y_obs, const std::vector<double>& lambdas);

/// Mean LogS, SES and DSS per (species, class) over held-out sites.
struct ScoreReport {
    int q = 0;
    int m = 0;
    std::vector<double> logs;  // index i*m + j
    std::vector<double> ses;
    std::vector<double> dss;

    [[nodiscard]] double mean_logs() const { return mean_of(logs); }
    [[nodiscard]] double mean_ses() const { return mean_of(ses); }
    [[nodiscard]] double mean_dss() const { return mean_of(dss); }
};

/// Scores held-out counts against predictive intensities whose site order
/// matches the holdout dataset. Throws DataError when the holdout is empty.
[[nodiscard]] ScoreReport score_holdout(const Dataset& holdout, const PredictiveDraws& predictive);

/// Classic potential scale reduction sqrt(((n-1)/n W + B/n) / W) over equal-length
/// chains. Throws DomainError for fewer than 2 chains, length < 2, or W = 0.
[[nodiscard]] double gelman_rubin(const std::vector<std::vector<double>>& chains);

/// R-hat for every reported scalar parameter (all columns except w).
struct ConvergenceEntry {
    std::string name;
    double rhat = 0.0;
};
[[nodiscard]] std::vector<ConvergenceEntry> convergence_report(const std::vector<ChainStore>& chains,
                                                               const Dims& dims, const ModelSpec& spec);

/// Posterior median and 95% interval of ln(20)/phi_ij; index i*m + j.
/// Throws DomainError for the nonspatial variant.
[[nodiscard]] std::vector<Interval> effective_range_summary(const std::vector<ParamState>& draws,
                                                            const ModelSpec& spec, int q, int m);

/// Element-wise medians and 95% intervals of corr(A_j A_j') per class.
struct CorrelationSummary {
    Eigen::MatrixXd median;
    Eigen::MatrixXd lower;
    Eigen::MatrixXd upper;
};
[[nodiscard]] Eigen::MatrixXd coregionalization_correlation(const Eigen::MatrixXd& A);
[[nodiscard]] std::vector<CorrelationSummary> cross_correlations(const std::vector<ParamState>& draws,
                                                                 const ModelSpec& spec);

/// Concatenates the retained draws of all chains.
[[nodiscard]] std::vector<ParamState> pool_draws(const std::vector<ChainStore>& chains);

}  // namespace standgp
