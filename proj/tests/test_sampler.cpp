#include "oracle.hpp"

#include "standgp/assess.hpp"
#include "standgp/error.hpp"
#include "standgp/sampler.hpp"
#include "standgp/sim.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <set>

using namespace standgp;
using doctest::Approx;

namespace {

double& coord(ParamState& s, const Coord& c, int m) {
    switch (c.kind) {
        case CoordKind::Beta0: return s.beta0[static_cast<std::size_t>(c.i)](c.c);
        case CoordKind::Beta: return s.b(c.i, c.j, m)(c.c);
        case CoordKind::V: return s.V[static_cast<std::size_t>(c.j)](c.r, c.c);
        case CoordKind::A: return s.theta[static_cast<std::size_t>(c.j)].A(c.r, c.c);
        case CoordKind::Phi: return s.theta[static_cast<std::size_t>(c.j)].phi(c.i);
        case CoordKind::W: break;
    }
    throw std::logic_error("vector coordinate");
}

CoregFactor factor_of(const SiteSet& sites, const CoregParams& t) {
    std::vector<std::shared_ptr<const SpeciesCorrelation>> sp;
    for (Eigen::Index r = 0; r < t.q(); ++r) {
        sp.push_back(std::make_shared<const SpeciesCorrelation>(sites.distances(), t.phi(r), "test"));
    }
    return CoregFactor(t.A, sp);
}

// Applies the move of `block` by `delta` on its transformed scale, written
// out directly from the move definitions, and returns the log volume change
// of the map on (beta, w).
double move(const UpdateBlock& block, ParamState& s, const Dataset& data, const Dims& dims, double delta) {
    const Coord& c = block.coord;
    double& value = coord(s, c, dims.m);
    const double old_value = value;
    const CoregParams old_theta = c.kind == CoordKind::A || c.kind == CoordKind::Phi
                                      ? s.theta[static_cast<std::size_t>(c.j)]
                                      : CoregParams{};
    value = block.transform.inverse(block.transform.forward(value) + delta);
    if (block.move == MoveKind::CoefficientShift) {
        const double d = value - old_value;
        for (int l = c.j; l < dims.m; ++l) {
            if (l > c.j) s.b(c.i, l, dims.m)(c.c) += d;
            for (int k = 0; k < dims.n; ++k) {
                s.w[static_cast<std::size_t>(l)](k * dims.q + c.i) -= d * data.x(c.i, l)(k, c.c);
            }
        }
    }
    if (block.move == MoveKind::Whitened) {
        const auto j = static_cast<std::size_t>(c.j);
        const CoregFactor before = factor_of(data.sites, old_theta);
        const CoregFactor after = factor_of(data.sites, s.theta[j]);
        const Eigen::VectorXd u = j == 0 ? s.w[0] : Eigen::VectorXd(s.w[j] - s.w[j - 1]);
        const Eigen::VectorXd shift = after.color(before.whiten(u)) - u;
        for (std::size_t l = j; l < s.w.size(); ++l) s.w[l] += shift;
        return 0.5 * (after.log_det() - before.log_det());
    }
    return 0.0;
}

SimConfig small_config(std::uint64_t seed) {
    SimConfig c;
    c.n = 30;
    c.q = 1;
    c.m = 2;
    c.p = 2;
    c.seed = seed;
    c.beta0_mean = Eigen::Vector2d(2.0, 0.5);
    c.beta0_sd = 0.2;
    c.sigma_eta = Eigen::Vector2d(0.04, 0.02).asDiagonal();
    c.theta = {{Eigen::MatrixXd::Constant(1, 1, 0.45), Eigen::VectorXd::Constant(1, 1.2)},
               {Eigen::MatrixXd::Constant(1, 1, 0.35), Eigen::VectorXd::Constant(1, 1.8)}};
    c.side = 3.0;
    return c;
}

double window_rate(const ChainStore& c, std::size_t block) {
    const auto& acc = c.batch_accepts[block];
    double s = 0.0;
    for (std::size_t k = acc.size() - 20; k < acc.size(); ++k) s += acc[k];
    return s / (20.0 * c.batch_size);
}

}  // namespace

TEST_CASE("adaptation increments") {
    CHECK(adaptation_delta(1) == 0.01);
    CHECK(adaptation_delta(20000) == Approx(1.0 / std::sqrt(20000.0)).epsilon(1e-15));
    UpdateBlock b;
    adapt(b, 0.6, 4);
    CHECK(b.step() == Approx(1.01005).epsilon(1e-5));
    UpdateBlock c;
    adapt(c, 0.1, 20000);
    CHECK(c.step() == Approx(0.99295).epsilon(1e-5));
    UpdateBlock tie;
    adapt(tie, 0.44, 1);
    CHECK(tie.log_step == Approx(-0.01));
}

TEST_CASE("scalar metropolis accepts a flat move and restores bits on rejection") {
    Rng rng(1);
    double x = 0.3;
    for (int t = 0; t < 100; ++t) {
        CHECK(scalar_metropolis(x, 1.0, Transform::identity(), 0.0, [](double) { return 0.0; }, rng));
    }
    const double y0 = 0.1 + 0.2;  // not exactly representable
    double y = y0;
    const bool ok = scalar_metropolis(y, 1.0, Transform::identity(), 0.0,
                                      [](double) { return -std::numeric_limits<double>::infinity(); }, rng);
    CHECK_FALSE(ok);
    CHECK(std::memcmp(&y, &y0, sizeof y) == 0);
}

TEST_CASE("scalar metropolis samples a standard normal") {
    Rng rng(2024);
    double x = 0.0;
    auto target = [](double v) { return -0.5 * v * v; };
    double sum = 0.0;
    double sq = 0.0;
    const int steps = 100000;
    for (int t = 0; t < steps; ++t) {
        scalar_metropolis(x, 2.4, Transform::identity(), target(x), target, rng);
        sum += x;
        sq += x * x;
    }
    const double mean = sum / steps;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(sq / steps - mean * mean - 1.0) < 0.05);
}

TEST_CASE("logit proposals stay inside the support") {
    Rng rng(3);
    const Transform t = Transform::logit(0.1, 6.0);
    double phi = 5.999;
    for (int k = 0; k < 1000; ++k) {
        scalar_metropolis(phi, 50.0, t, 0.0, [](double) { return 0.0; }, rng);
        CHECK(phi > 0.1);
        CHECK(phi < 6.0);
    }
}

TEST_CASE("blocks partition the parameters in sweep order") {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const auto inst = oracle::random_instance(rng, 4, 2, 3);
        const Dims dims = model_dims(inst.data, inst.spec);
        const auto blocks = make_blocks(dims, inst.spec, {});
        CHECK_NOTHROW(check_partition(blocks, dims, inst.spec));
        // beta0, beta, V, A, phi, W appear in that order.
        int last = -1;
        for (const auto& b : blocks) {
            const int rank = static_cast<int>(b.coord.kind);
            CHECK(rank >= last);
            last = rank;
        }
        auto missing = blocks;
        missing.pop_back();
        CHECK_THROWS(check_partition(missing, dims, inst.spec));
    }
}

TEST_CASE("every move's local ratio equals the full log joint difference") {
    Rng rng(5);
    int checked_shift = 0;
    int checked_whitened = 0;
    for (int rep = 0; rep < 25; ++rep) {
        auto inst = oracle::random_instance(rng, 4, 2, 3);
        const Dims dims = model_dims(inst.data, inst.spec);
        const Sampler sampler(inst.data, inst.spec);
        ConditionalTarget target(inst.data, inst.spec, inst.state);
        const double base = log_joint(inst.data, inst.state, inst.spec);
        CHECK(target.total(inst.state) == Approx(base).epsilon(1e-10));
        for (const auto& block : sampler.blocks()) {
            if (block.kind != BlockKind::Scalar) continue;
            for (double delta : {0.3, -0.2}) {
                const double local = sampler.log_ratio(block, inst.state, target, delta);
                ParamState moved = inst.state;
                const double u = block.transform.forward(coord(moved, block.coord, dims.m));
                const double volume = move(block, moved, inst.data, dims, delta);
                const double expected = log_joint(inst.data, moved, inst.spec) - base + volume +
                                        block.transform.log_jacobian(u + delta) - block.transform.log_jacobian(u);
                if (!std::isfinite(expected)) {
                    CHECK(local == -std::numeric_limits<double>::infinity());
                    continue;
                }
                INFO(block.id);
                CHECK(std::abs(local - expected) < 1e-8 * std::max(1.0, std::abs(base)));
                // The proposal scale never depends on the moved coordinate.
                CHECK(sampler.proposal_scale(block, moved) == sampler.proposal_scale(block, inst.state));
                checked_shift += block.move == MoveKind::CoefficientShift;
                checked_whitened += block.move == MoveKind::Whitened;
            }
            // log_ratio leaves the state untouched.
            CHECK(log_joint(inst.data, inst.state, inst.spec) == base);
        }
    }
    CHECK(checked_shift > 0);
    CHECK(checked_whitened > 0);
}

TEST_CASE("chain bookkeeping") {
    const SimResult sim = simulate(small_config(3));
    const ModelSpec spec;
    Rng rng(1);
    const Dims dims = model_dims(sim.train, spec);
    const ParamState init = initial_state(dims, spec, 0, rng);

    const ChainStore empty = run_chain(sim.train, spec, init, {0, 0, 1}, 9);
    CHECK(empty.draws.empty());

    const ChainStore c = run_chain(sim.train, spec, init, {600, 100, 5}, 9);
    CHECK(c.draws.size() == 100);
    CHECK(c.log_joint_trace.size() == c.draws.size());
    for (const auto& per_block : c.batch_accepts) {
        CHECK(per_block.size() == 12);
        for (int a : per_block) CHECK(a <= c.batch_size);
    }
    CHECK_THROWS_AS(Schedule({100, 200, 1}).validate(), ConfigError);
}

TEST_CASE("chains are reproducible and independent of the thread count") {
    const SimResult sim = simulate(small_config(4));
    const ModelSpec spec;
    const Schedule sch{400, 100, 1};
    const auto one = run_chains(sim.train, spec, 3, sch, 17, {}, 1);
    const auto three = run_chains(sim.train, spec, 3, sch, 17, {}, 3);
    REQUIRE(one.size() == 3);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(one[c].draws == three[c].draws);
        CHECK(one[c].log_joint_trace == three[c].log_joint_trace);
    }
    CHECK_FALSE(one[0].draws.back() == one[1].draws.back());
    CHECK_FALSE(one[1].draws.back() == one[2].draws.back());

    // k = 1 is run_chain with the first derived seed and start.
    const auto single = run_chains(sim.train, spec, 1, sch, 17);
    const std::uint64_t seed = derive_seed(17, 1);
    Rng init_rng(derive_seed(seed, 0));
    const ParamState init = initial_state(model_dims(sim.train, spec), spec, 0, init_rng);
    CHECK(single[0].draws == run_chain(sim.train, spec, init, sch, seed).draws);
}

TEST_CASE("overdispersed starts differ between chains") {
    const SimResult sim = simulate(small_config(5));
    const ModelSpec spec;
    const Dims dims = model_dims(sim.train, spec);
    Rng a(1), b(1);
    CHECK_FALSE(initial_state(dims, spec, 0, a) == initial_state(dims, spec, 2, b));
}

TEST_CASE("adaptation settles every block near 0.44 on a small synthetic fit") {
    const SimResult sim = simulate(small_config(6));
    const ModelSpec spec;
    const auto chains = run_chains(sim.train, spec, 1, {20000, 4000, 1}, 23);
    const Sampler sampler(sim.train, spec);
    for (std::size_t b = 0; b < chains[0].block_ids.size(); ++b) {
        if (sampler.blocks()[b].kind != BlockKind::Scalar) continue;
        INFO(chains[0].block_ids[b]);
        CHECK(std::abs(window_rate(chains[0], b) - 0.44) <= 0.12);
    }
}

TEST_CASE("three chains converge on a small synthetic fit") {
    const SimResult sim = simulate(small_config(7));
    const ModelSpec spec;
    const auto chains = run_chains(sim.train, spec, 3, {20000, 4000, 1}, 29);
    for (const auto& e : convergence_report(chains, model_dims(sim.train, spec), spec)) {
        INFO(e.name);
        CHECK(e.rhat < 1.1);
    }
}

TEST_CASE("Langevin and curvature w proposals target the same posterior") {
    const SimResult sim = simulate(small_config(8));
    const ModelSpec spec;
    const Dims dims = model_dims(sim.train, spec);
    SamplerOptions curvature;
    curvature.w_proposal = WProposal::Curvature;
    const auto a = pool_draws(run_chains(sim.train, spec, 2, {30000, 6000, 1}, 31));
    const auto b = pool_draws(run_chains(sim.train, spec, 2, {30000, 6000, 1}, 37, curvature));

    // Batch-means standard error; pooled draws are two chains back to back.
    auto mean_and_se = [](const std::vector<double>& x) {
        constexpr int kBatches = 48;
        const std::size_t len = x.size() / kBatches;
        double total = 0.0;
        std::vector<double> means;
        for (int k = 0; k < kBatches; ++k) {
            double s = 0.0;
            for (std::size_t t = k * len; t < (k + 1) * len; ++t) s += x[t];
            means.push_back(s / static_cast<double>(len));
            total += means.back();
        }
        const double mean = total / kBatches;
        double ss = 0.0;
        for (double m : means) ss += (m - mean) * (m - mean);
        return std::pair{mean, std::sqrt(ss / (kBatches - 1) / kBatches)};
    };
    auto compare = [&](const std::string& name, auto&& extract) {
        std::vector<double> xa;
        std::vector<double> xb;
        for (const auto& d : a) xa.push_back(extract(d));
        for (const auto& d : b) xb.push_back(extract(d));
        const auto [ma, sa] = mean_and_se(xa);
        const auto [mb, sb] = mean_and_se(xb);
        INFO(name << ": " << ma << " +/- " << sa << " vs " << mb << " +/- " << sb);
        CHECK(std::abs(ma - mb) < 4.0 * std::sqrt(sa * sa + sb * sb));
    };
    for (int j = 0; j < dims.m; ++j) {
        compare("mean w_" + std::to_string(j + 1), [j](const ParamState& d) { return d.w[j].mean(); });
        compare("w_" + std::to_string(j + 1) + " at site 1", [j](const ParamState& d) { return d.w[j](0); });
        compare("w_" + std::to_string(j + 1) + " squared at site 1",
                [j](const ParamState& d) { return d.w[j](0) * d.w[j](0); });
        compare("spread of w_" + std::to_string(j + 1), [j](const ParamState& d) {
            return (d.w[j].array() - d.w[j].mean()).square().mean();
        });
        compare("A_" + std::to_string(j + 1), [j](const ParamState& d) { return d.theta[j].A(0, 0); });
        compare("intercept " + std::to_string(j + 1), [&](const ParamState& d) { return d.b(0, j, dims.m)(0); });
    }
}
