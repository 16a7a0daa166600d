#include "standgp/error.hpp"
#include "standgp/sim.hpp"

#include <doctest.h>

#include <cmath>

using namespace standgp;
using doctest::Approx;

TEST_CASE("desk configuration dimensions and layout") {
    const SimConfig c = desk_scale_config(1);
    CHECK(c.q == 2);
    CHECK(c.m == 4);
    CHECK(c.n == 50);
    CHECK(c.p == 2);
    CHECK_NOTHROW(c.validate());

    // Median inter-site distance is about one mean effective range.
    const SimResult sim = simulate(c);
    std::vector<double> d;
    for (int a = 0; a < c.n; ++a) {
        for (int b = a + 1; b < c.n; ++b) d.push_back(sim.train.sites.distance(a, b));
    }
    std::nth_element(d.begin(), d.begin() + static_cast<long>(d.size() / 2), d.end());
    double phi = 0.0;
    for (const auto& t : c.theta) phi += t.phi.sum();
    const double range = effective_range(phi / (c.q * c.m));
    CHECK(d[d.size() / 2] / range == Approx(1.0).epsilon(0.25));
}

TEST_CASE("simulation is reproducible by seed") {
    const SimResult a = simulate(desk_scale_config(8));
    const SimResult b = simulate(desk_scale_config(8));
    const SimResult c = simulate(desk_scale_config(9));
    CHECK(a.train == b.train);
    CHECK(a.truth == b.truth);
    CHECK_FALSE(a.train == c.train);
}

TEST_CASE("no spatial signal and zero coefficients give unit intensities") {
    SimConfig c = desk_scale_config(2);
    c.spatial = false;
    c.n = 2500;
    c.beta0_mean.setZero();
    c.beta0_sd = 0.0;
    c.sigma_eta = Eigen::Matrix2d::Zero();
    c.sigma_eta(0, 0) = c.sigma_eta(1, 1) = 1e-300;
    const SimResult sim = simulate(c);
    double total = 0.0;
    for (long y : sim.train.counts) total += static_cast<double>(y);
    const double mean = total / static_cast<double>(sim.train.counts.size());
    CHECK(mean >= 0.97);
    CHECK(mean <= 1.03);
    CHECK(sim.truth.w.empty());
}

TEST_CASE("cross-species correlation of simulated w matches A A'") {
    SimConfig c = desk_scale_config(3);
    c.n = 1;
    c.m = 1;
    Eigen::MatrixXd A(2, 2);
    A << 1.0, 0.0, 0.9, 0.4;
    c.theta = {{A, Eigen::Vector2d(1.0, 1.0)}};
    c.beta0_mean = Eigen::Vector2d(-5.0, 0.0);
    double s01 = 0.0, s00 = 0.0, s11 = 0.0;
    const int reps = 4000;
    for (int r = 0; r < reps; ++r) {
        c.seed = 100 + static_cast<std::uint64_t>(r);
        const SimResult sim = simulate(c);
        const Eigen::VectorXd& w = sim.truth.w[0];
        s00 += w(0) * w(0);
        s11 += w(1) * w(1);
        s01 += w(0) * w(1);
    }
    const Eigen::MatrixXd G = A * A.transpose();
    CHECK(s01 / std::sqrt(s00 * s11) == Approx(G(0, 1) / std::sqrt(G(0, 0) * G(1, 1))).epsilon(0.05));
}

TEST_CASE("holdout sites are simulated jointly and returned separately") {
    SimConfig c = desk_scale_config(4);
    c.n_holdout = 7;
    const SimResult sim = simulate(c);
    CHECK(sim.train.n() == 50);
    CHECK(sim.holdout.n() == 7);
    CHECK(sim.w_holdout.size() == 4);
    CHECK(sim.w_holdout[0].size() == 14);
}

TEST_CASE("invalid simulation settings") {
    SimConfig c = desk_scale_config(1);
    c.theta.pop_back();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    SimConfig big = desk_scale_config(1);
    big.beta0_mean(0) = 800.0;
    CHECK_THROWS_AS((void)simulate(big), ConfigError);
}
