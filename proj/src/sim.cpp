#include "standgp/sim.hpp"

#include "standgp/error.hpp"

#include <cmath>
#include <random>
#include <string>

namespace standgp {

namespace {

constexpr double kMaxLogIntensity = 700.0;

// Median distance between two independent uniform points in the unit square.
constexpr double kUnitSquareMedianDistance = 0.5120;

Dataset empty_dataset(int q, int m, int p, double area_factor) {
    Dataset d;
    d.q = q;
    d.m = m;
    d.p = p;
    d.area_factor = area_factor;
    d.sites.coords.resize(0, 2);
    return d;
}

}  // namespace

void SimConfig::validate() const {
    if (n < 1 || q < 1 || m < 1 || p < 1 || n_holdout < 0) {
        throw ConfigError("sim: dimensions must be positive");
    }
    if (beta0_mean.size() != p || sigma_eta.rows() != p || sigma_eta.cols() != p) {
        throw ConfigError("sim: beta0_mean and sigma_eta must have p = " + std::to_string(p) + " entries per side");
    }
    if (!(beta0_sd >= 0.0) || !(side > 0.0)) {
        throw ConfigError("sim: beta0_sd must be non-negative and side positive");
    }
    if (coords && coords->rows() != n + n_holdout) {
        throw ConfigError("sim: fixed coordinates must list n + n_holdout sites");
    }
    if (spatial) {
        if (theta.size() != static_cast<std::size_t>(m)) {
            throw ConfigError("sim: need one coregionalization per class");
        }
        for (const auto& t : theta) {
            if (t.q() != q) {
                throw ConfigError("sim: loading matrix must be q x q");
            }
            try {
                standgp::validate(t);
            } catch (const DomainError& e) {
                throw ConfigError(std::string("sim: ") + e.what());
            }
        }
    }
}

SimConfig desk_scale_config(std::uint64_t seed) {
    SimConfig c;
    c.n = 50;
    c.q = 2;
    c.m = 4;
    c.p = 2;
    c.seed = seed;
    c.beta0_mean = Eigen::Vector2d(2.0, 0.5);
    c.beta0_sd = 0.2;
    c.sigma_eta = Eigen::Vector2d(0.04, 0.02).asDiagonal();
    const double a11[] = {0.45, 0.40, 0.35, 0.40};
    const double a21[] = {0.20, -0.15, 0.25, 0.10};
    const double a22[] = {0.35, 0.40, 0.30, 0.35};
    const double phi1[] = {1.0, 1.5, 2.0, 1.2};
    const double phi2[] = {1.8, 1.2, 1.5, 2.2};
    double phi_sum = 0.0;
    for (int j = 0; j < c.m; ++j) {
        Eigen::Matrix2d A;
        A << a11[j], 0.0, a21[j], a22[j];
        c.theta.push_back({A, Eigen::Vector2d(phi1[j], phi2[j])});
        phi_sum += phi1[j] + phi2[j];
    }
    c.side = effective_range(phi_sum / (c.q * c.m)) / kUnitSquareMedianDistance;
    return c;
}

SimResult simulate(const SimConfig& config) {
    config.validate();
    Rng rng(config.seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform(0.0, config.side);
    const int total = config.n + config.n_holdout;
    const int q = config.q;
    const int m = config.m;
    const int p = config.p;

    SiteSet all;
    if (config.coords) {
        all.coords = *config.coords;
    } else {
        all.coords.resize(total, 2);
        for (int k = 0; k < total; ++k) {
            all.coords(k, 0) = uniform(rng);
            all.coords(k, 1) = uniform(rng);
        }
    }
    for (int k = 0; k < total; ++k) {
        all.ids.push_back("s" + std::to_string(k + 1));
    }

    // Design matrices over all sites, index i*m + j.
    std::vector<Eigen::MatrixXd> design(static_cast<std::size_t>(q * m), Eigen::MatrixXd::Ones(total, p));
    if (config.site_covariates) {
        Eigen::MatrixXd shared = Eigen::MatrixXd::Ones(total, p);
        for (int k = 0; k < total; ++k) {
            for (int c = 1; c < p; ++c) shared(k, c) = normal(rng);
        }
        for (auto& X : design) X = shared;
    } else {
        for (auto& X : design) {
            for (int k = 0; k < total; ++k) {
                for (int c = 1; c < p; ++c) X(k, c) = normal(rng);
            }
        }
    }

    SimResult out;
    ParamState& truth = out.truth;
    const Eigen::MatrixXd eta_factor = Eigen::LLT<Eigen::MatrixXd>(config.sigma_eta).matrixL();
    for (int i = 0; i < q; ++i) {
        Eigen::VectorXd b0(p);
        for (int c = 0; c < p; ++c) b0(c) = config.beta0_mean(c) + config.beta0_sd * normal(rng);
        truth.beta0.push_back(b0);
    }
    truth.beta.assign(static_cast<std::size_t>(q * m), Eigen::VectorXd(p));
    for (int i = 0; i < q; ++i) {
        for (int j = 0; j < m; ++j) {
            Eigen::VectorXd z(p);
            for (int c = 0; c < p; ++c) z(c) = normal(rng);
            const Eigen::VectorXd& prev = j == 0 ? truth.beta0[static_cast<std::size_t>(i)] : truth.b(i, j - 1, m);
            truth.b(i, j, m) = prev + eta_factor * z;
        }
    }
    truth.V.push_back(eta_factor);

    std::vector<Eigen::VectorXd> w_all(static_cast<std::size_t>(m), Eigen::VectorXd::Zero(total * q));
    if (config.spatial) {
        truth.theta = config.theta;
        for (int j = 0; j < m; ++j) {
            const BlockCovariance cov = assemble_block(all, config.theta[static_cast<std::size_t>(j)]);
            Eigen::VectorXd z(total * q);
            for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = normal(rng);
            const Eigen::VectorXd u = cov.llt().matrixL() * z;
            w_all[static_cast<std::size_t>(j)] = (j == 0 ? Eigen::VectorXd::Zero(total * q) : w_all[static_cast<std::size_t>(j - 1)]) + u;
        }
    }

    std::vector<long> counts(static_cast<std::size_t>(q * m * total));
    for (int i = 0; i < q; ++i) {
        for (int j = 0; j < m; ++j) {
            const Eigen::VectorXd lin = design[static_cast<std::size_t>(i * m + j)] * truth.b(i, j, m);
            for (int k = 0; k < total; ++k) {
                const double log_lambda = lin(k) + w_all[static_cast<std::size_t>(j)](k * q + i);
                if (!(log_lambda < kMaxLogIntensity)) {
                    throw ConfigError("sim: intensity overflow; use smaller parameter scales");
                }
                std::poisson_distribution<long> poisson(std::exp(log_lambda));
                counts[static_cast<std::size_t>((i * m + j) * total + k)] = poisson(rng);
            }
        }
    }

    auto slice = [&](int first, int count) {
        Dataset d = empty_dataset(q, m, p, config.area_factor);
        d.sites.coords = all.coords.middleRows(first, count);
        d.sites.ids.assign(all.ids.begin() + first, all.ids.begin() + first + count);
        d.counts.resize(static_cast<std::size_t>(q * m * count));
        for (int i = 0; i < q; ++i) {
            for (int j = 0; j < m; ++j) {
                d.design.push_back(design[static_cast<std::size_t>(i * m + j)].middleRows(first, count));
                for (int k = 0; k < count; ++k) {
                    d.count(i, j, k) = counts[static_cast<std::size_t>((i * m + j) * total + first + k)];
                }
            }
        }
        return d;
    };
    out.train = slice(0, config.n);
    out.holdout = slice(config.n, config.n_holdout);
    if (config.spatial) {
        for (int j = 0; j < m; ++j) {
            const auto& w = w_all[static_cast<std::size_t>(j)];
            truth.w.push_back(w.head(config.n * q));
            out.w_holdout.push_back(w.tail(config.n_holdout * q));
        }
    }
    return out;
}

}  // namespace standgp
