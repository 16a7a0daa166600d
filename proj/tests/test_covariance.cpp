#include "oracle.hpp"

#include "standgp/covariance.hpp"
#include "standgp/error.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace standgp;
using doctest::Approx;

namespace {

SiteSet random_sites(Rng& rng, int n) {
    std::uniform_real_distribution<double> unit(0.0, 3.0);
    SiteSet s;
    s.coords.resize(n, 2);
    for (int k = 0; k < n; ++k) {
        s.coords(k, 0) = unit(rng);
        s.coords(k, 1) = unit(rng);
        s.ids.push_back("s" + std::to_string(k));
    }
    return s;
}

CoregParams random_theta(Rng& rng, int q) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal;
    CoregParams t{Eigen::MatrixXd::Zero(q, q), Eigen::VectorXd(q)};
    for (int r = 0; r < q; ++r) {
        t.A(r, r) = 0.2 + unit(rng);
        for (int c = 0; c < r; ++c) t.A(r, c) = 0.5 * normal(rng);
        t.phi(r) = 0.2 + 4.0 * unit(rng);
    }
    return t;
}

CoregFactor factor_of(const SiteSet& sites, const CoregParams& t) {
    std::vector<std::shared_ptr<const SpeciesCorrelation>> sp;
    for (Eigen::Index r = 0; r < t.q(); ++r) {
        sp.push_back(std::make_shared<const SpeciesCorrelation>(sites.distances(), t.phi(r), "test"));
    }
    return CoregFactor(t.A, sp);
}

}  // namespace

TEST_CASE("exponential correlation values") {
    CHECK(exp_correlation(0.0, 2.5) == 1.0);
    CHECK(exp_correlation(1.0, 1.0) == Approx(0.36787944).epsilon(1e-8));
    CHECK(exp_correlation(2.0, 0.5) == Approx(0.36787944).epsilon(1e-8));
    CHECK_THROWS_AS((void)exp_correlation(-1.0, 1.0), DomainError);
    CHECK_THROWS_AS((void)exp_correlation(1.0, 0.0), DomainError);
}

TEST_CASE("effective range is ln(20)/phi") {
    CHECK(effective_range(3.0) == Approx(0.998577).epsilon(1e-6));
    CHECK(effective_range(std::log(20.0)) == Approx(1.0).epsilon(1e-12));
    CHECK(effective_range(0.1) == Approx(29.9573).epsilon(1e-6));
    CHECK(exp_correlation(effective_range(1.7), 1.7) == Approx(0.05).epsilon(1e-12));
}

TEST_CASE("cross covariance special cases") {
    CoregParams t{Eigen::MatrixXd(2, 2), Eigen::Vector2d(1.0, 2.0)};
    t.A << 2, 0, 1, 1;
    const Eigen::Vector2d s(0.3, 0.4);
    const Eigen::MatrixXd same = cross_covariance(s, s, t);
    CHECK(same(0, 0) == Approx(4.0));
    CHECK(same(0, 1) == Approx(2.0));
    CHECK(same(1, 0) == Approx(2.0));
    CHECK(same(1, 1) == Approx(2.0));

    CoregParams scalar{Eigen::MatrixXd::Constant(1, 1, 1.5), Eigen::VectorXd::Constant(1, 0.7)};
    const Eigen::MatrixXd c = cross_covariance(Eigen::Vector2d(0, 0), Eigen::Vector2d(3, 4), scalar);
    CHECK(c(0, 0) == Approx(2.25 * std::exp(-0.7 * 5.0)).epsilon(1e-12));

    CoregParams diag{Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1.0, 2.0)};
    const Eigen::MatrixXd d = cross_covariance(Eigen::Vector2d(0, 0), Eigen::Vector2d(std::log(2.0), 0), diag);
    CHECK(d(0, 0) == Approx(0.5).epsilon(1e-12));
    CHECK(d(1, 1) == Approx(0.25).epsilon(1e-12));
    CHECK(d(0, 1) == 0.0);
}

TEST_CASE("assembled block covariance") {
    SiteSet two;
    two.coords.resize(2, 2);
    two.coords << 0, 0, 1, 0;
    two.ids = {"a", "b"};
    const BlockCovariance c = assemble_block(two, {Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Ones(1)});
    CHECK(c.matrix()(0, 1) == Approx(std::exp(-1.0)));
    CHECK(c.matrix()(0, 0) == Approx(1.0));

    Rng rng(3);
    SiteSet one = random_sites(rng, 1);
    const CoregParams t = random_theta(rng, 2);
    const BlockCovariance single = assemble_block(one, t);
    CHECK((single.matrix() - t.A * t.A.transpose()).cwiseAbs().maxCoeff() < 1e-14);

    for (int rep = 0; rep < 10; ++rep) {
        const SiteSet five = random_sites(rng, 5);
        const BlockCovariance b = assemble_block(five, random_theta(rng, 2));
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b.matrix());
        CHECK(eig.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("duplicate sites make the covariance singular") {
    SiteSet dup;
    dup.coords.resize(2, 2);
    dup.coords << 1, 1, 1, 1;
    dup.ids = {"a", "b"};
    const CoregParams t{Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Ones(1)};
    CHECK_THROWS_AS((void)assemble_block(dup, t), SingularCovariance);
    CHECK_THROWS_AS(SpeciesCorrelation(dup.distances(), 1.0, "dup"), SingularCovariance);
}

TEST_CASE("mvn log density") {
    const BlockCovariance one(Eigen::MatrixXd::Identity(1, 1));
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    CHECK(mvn_logdensity(zero, zero, one) == Approx(-0.918939).epsilon(1e-6));
    CHECK(mvn_logdensity(Eigen::VectorXd::Ones(1), zero, one) == Approx(-1.418939).epsilon(1e-6));

    // Dense explicit-inverse oracle on a random 6-dimensional instance.
    Rng rng(8);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd B(6, 6);
    Eigen::VectorXd x(6), mu(6);
    for (int r = 0; r < 6; ++r) {
        x(r) = normal(rng);
        mu(r) = normal(rng);
        for (int c = 0; c < 6; ++c) B(r, c) = normal(rng);
    }
    const Eigen::MatrixXd S = B * B.transpose() + Eigen::MatrixXd::Identity(6, 6);
    const double ref = -0.5 * (6 * std::log(2 * M_PI) + std::log(S.determinant()) +
                               (x - mu).dot(S.inverse() * (x - mu)));
    CHECK(std::abs(mvn_logdensity(x, mu, BlockCovariance(S)) - ref) < 1e-10);
}

TEST_CASE("structured factor agrees with the dense block covariance") {
    Rng rng(21);
    std::normal_distribution<double> normal;
    for (int rep = 0; rep < 20; ++rep) {
        const int q = 1 + rep % 3;
        const int n = 1 + rep % 5;
        const SiteSet sites = random_sites(rng, n);
        const CoregParams t = random_theta(rng, q);
        const BlockCovariance dense = assemble_block(sites, t);
        const CoregFactor f = factor_of(sites, t);
        Eigen::VectorXd u(n * q);
        for (Eigen::Index k = 0; k < u.size(); ++k) u(k) = normal(rng);

        CHECK(f.log_det() == Approx(dense.log_det()).epsilon(1e-10));
        CHECK(f.quad_form(u) == Approx(dense.quad_form(u)).epsilon(1e-9));
        CHECK((f.covariance() - dense.matrix()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((f.precision() * dense.matrix() - Eigen::MatrixXd::Identity(n * q, n * q)).cwiseAbs().maxCoeff() <
              1e-8);
        CHECK((f.color(f.whiten(u)) - u).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("structured factor rejects a zero loading") {
    Rng rng(2);
    const SiteSet sites = random_sites(rng, 3);
    CoregParams t = random_theta(rng, 2);
    t.A(1, 1) = 0.0;
    CHECK_THROWS_AS((void)factor_of(sites, t), SingularCovariance);
}

TEST_CASE("coregionalization parameter validation") {
    CoregParams t{Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1, 1)};
    CHECK_NOTHROW(validate(t));
    t.A(0, 1) = 0.3;
    CHECK_THROWS_AS(validate(t), DomainError);
    t.A(0, 1) = 0.0;
    t.A(1, 1) = -1.0;
    CHECK_THROWS_AS(validate(t), DomainError);
    t.A(1, 1) = 1.0;
    t.phi(0) = 0.0;
    CHECK_THROWS_AS(validate(t), DomainError);
}
