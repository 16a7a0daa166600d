#include "standgp/sampler.hpp"

#include "standgp/error.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <future>
#include <limits>
#include <map>
#include <thread>

namespace standgp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kTargetAcceptance = 0.44;

std::string idx(int v) { return "[" + std::to_string(v + 1) + "]"; }

std::string beta_name(int i, int j_one_based, int c) {
    return "beta" + idx(i) + "[" + std::to_string(j_one_based) + "]" + idx(c);
}

double& coord_ref(ParamState& s, const Coord& c, int m) {
    switch (c.kind) {
        case CoordKind::Beta0: return s.beta0[static_cast<std::size_t>(c.i)](c.c);
        case CoordKind::Beta: return s.b(c.i, c.j, m)(c.c);
        case CoordKind::V: return s.V[static_cast<std::size_t>(c.j)](c.r, c.c);
        case CoordKind::A: return s.theta[static_cast<std::size_t>(c.j)].A(c.r, c.c);
        case CoordKind::Phi: return s.theta[static_cast<std::size_t>(c.j)].phi(c.i);
        case CoordKind::W: break;
    }
    throw DomainError("coord_ref: vector coordinate has no scalar reference");
}

// Lower-triangle entries of a d x d factor in row-major order.
template <typename F>
void for_lower(int d, F&& f) {
    for (int r = 0; r < d; ++r) {
        for (int c = 0; c <= r; ++c) {
            f(r, c);
        }
    }
}

std::string v_name(const ModelSpec& spec, int v, int r, int c) {
    return spec.shared_sigma_eta ? "V" + idx(r) + idx(c) : "V" + idx(v) + idx(r) + idx(c);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void Schedule::validate() const {
    if (iters < 0 || burnin < 0) {
        throw ConfigError("schedule: iteration counts must be non-negative");
    }
    if (iters < burnin) {
        throw ConfigError("schedule: iters (" + std::to_string(iters) + ") is less than burnin (" +
                          std::to_string(burnin) + ")");
    }
    if (thin < 1) {
        throw ConfigError("schedule: thin must be at least 1");
    }
}

double adaptation_delta(long batch_index) {
    if (batch_index < 1) {
        throw DomainError("adaptation_delta: batch index starts at 1");
    }
    return std::min(0.01, 1.0 / std::sqrt(static_cast<double>(batch_index)));
}

void adapt(UpdateBlock& block, double batch_accept_rate, long batch_index) {
    const double delta = adaptation_delta(batch_index);
    block.log_step += batch_accept_rate > kTargetAcceptance ? delta : -delta;
}

bool scalar_metropolis(double& value, double step, const Transform& transform, double current_log_target,
                       const std::function<double(double)>& log_target, Rng& rng) {
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform;
    const double z = normal(rng);
    const double log_u = std::log(uniform(rng));

    const double current = value;
    const double u = transform.forward(current);
    const double u_new = u + step * z;
    const double proposed = transform.inverse(u_new);

    value = proposed;
    const double proposed_log_target = log_target(proposed);
    const double log_ratio = proposed_log_target - current_log_target + transform.log_jacobian(u_new) -
                             transform.log_jacobian(u);
    if (std::isfinite(proposed_log_target) && log_u < log_ratio) {
        return true;
    }
    value = current;
    return false;
}

std::vector<std::string> parameter_names(const Dims& dims, const ModelSpec& spec) {
    std::vector<std::string> names;
    if (spec.has_beta0()) {
        for (int i = 0; i < dims.q; ++i) {
            for (int c = 0; c < dims.p; ++c) names.push_back(beta_name(i, 0, c));
        }
    }
    for (int j = 0; j < dims.m; ++j) {
        for (int i = 0; i < dims.q; ++i) {
            for (int c = 0; c < dims.p; ++c) names.push_back(beta_name(i, j + 1, c));
        }
    }
    if (spec.has_sigma_eta()) {
        const int nv = spec.shared_sigma_eta ? 1 : dims.m;
        for (int v = 0; v < nv; ++v) {
            for_lower(dims.p, [&](int r, int c) { names.push_back(v_name(spec, v, r, c)); });
        }
    }
    if (spec.spatial()) {
        for (int j = 0; j < dims.m; ++j) {
            for_lower(dims.q, [&](int r, int c) { names.push_back("A" + idx(j) + idx(r) + idx(c)); });
        }
        for (int j = 0; j < dims.m; ++j) {
            for (int i = 0; i < dims.q; ++i) names.push_back("phi" + idx(i) + idx(j));
        }
        for (int j = 0; j < dims.m; ++j) {
            for (int k = 0; k < dims.n; ++k) {
                for (int i = 0; i < dims.q; ++i) names.push_back("w" + idx(j) + idx(k) + idx(i));
            }
        }
    }
    return names;
}

std::vector<double> flatten(const ParamState& s, const Dims& dims, const ModelSpec& spec) {
    std::vector<double> out;
    for (const auto& b0 : s.beta0) {
        out.insert(out.end(), b0.data(), b0.data() + b0.size());
    }
    for (int j = 0; j < dims.m; ++j) {
        for (int i = 0; i < dims.q; ++i) {
            const auto& b = s.b(i, j, dims.m);
            out.insert(out.end(), b.data(), b.data() + b.size());
        }
    }
    for (const auto& V : s.V) {
        for_lower(dims.p, [&](int r, int c) { out.push_back(V(r, c)); });
    }
    if (spec.spatial()) {
        for (const auto& t : s.theta) {
            for_lower(dims.q, [&](int r, int c) { out.push_back(t.A(r, c)); });
        }
        for (const auto& t : s.theta) {
            out.insert(out.end(), t.phi.data(), t.phi.data() + t.phi.size());
        }
        for (const auto& w : s.w) {
            out.insert(out.end(), w.data(), w.data() + w.size());
        }
    }
    return out;
}

ParamState unflatten(const std::vector<double>& values, const Dims& dims, const ModelSpec& spec) {
    ParamState s;
    std::size_t pos = 0;
    auto next = [&]() {
        if (pos >= values.size()) {
            throw DomainError("unflatten: too few values");
        }
        return values[pos++];
    };
    if (spec.has_beta0()) {
        s.beta0.assign(static_cast<std::size_t>(dims.q), Eigen::VectorXd(dims.p));
        for (auto& b0 : s.beta0) {
            for (int c = 0; c < dims.p; ++c) b0(c) = next();
        }
    }
    s.beta.assign(static_cast<std::size_t>(dims.q * dims.m), Eigen::VectorXd(dims.p));
    for (int j = 0; j < dims.m; ++j) {
        for (int i = 0; i < dims.q; ++i) {
            for (int c = 0; c < dims.p; ++c) s.b(i, j, dims.m)(c) = next();
        }
    }
    if (spec.has_sigma_eta()) {
        const int nv = spec.shared_sigma_eta ? 1 : dims.m;
        s.V.assign(static_cast<std::size_t>(nv), Eigen::MatrixXd::Zero(dims.p, dims.p));
        for (auto& V : s.V) {
            for_lower(dims.p, [&](int r, int c) { V(r, c) = next(); });
        }
    }
    if (spec.spatial()) {
        s.theta.assign(static_cast<std::size_t>(dims.m),
                       CoregParams{Eigen::MatrixXd::Zero(dims.q, dims.q), Eigen::VectorXd(dims.q)});
        for (auto& t : s.theta) {
            for_lower(dims.q, [&](int r, int c) { t.A(r, c) = next(); });
        }
        for (auto& t : s.theta) {
            for (int i = 0; i < dims.q; ++i) t.phi(i) = next();
        }
        s.w.assign(static_cast<std::size_t>(dims.m), Eigen::VectorXd(dims.n * dims.q));
        for (auto& w : s.w) {
            for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = next();
        }
    }
    if (pos != values.size()) {
        throw DomainError("unflatten: too many values");
    }
    return s;
}

bool is_random_effect(const std::string& name) { return name.rfind("w[", 0) == 0; }

std::vector<UpdateBlock> make_blocks(const Dims& dims, const ModelSpec& spec, const SamplerOptions& options) {
    std::vector<UpdateBlock> blocks;
    const double log0 = std::log(options.initial_step.value_or(1.0));
    auto scalar = [&](std::string id, Coord coord, Transform t) {
        blocks.push_back({std::move(id), BlockKind::Scalar, coord, t, log0});
    };
    if (spec.has_beta0()) {
        for (int i = 0; i < dims.q; ++i) {
            for (int c = 0; c < dims.p; ++c) {
                scalar(beta_name(i, 0, c), {CoordKind::Beta0, i, 0, 0, c}, Transform::identity());
            }
        }
    }
    for (int j = 0; j < dims.m; ++j) {
        for (int i = 0; i < dims.q; ++i) {
            for (int c = 0; c < dims.p; ++c) {
                scalar(beta_name(i, j + 1, c), {CoordKind::Beta, i, j, 0, c}, Transform::identity());
            }
        }
    }
    if (spec.has_sigma_eta()) {
        const int nv = spec.shared_sigma_eta ? 1 : dims.m;
        for (int v = 0; v < nv; ++v) {
            for_lower(dims.p, [&](int r, int c) {
                scalar(v_name(spec, v, r, c), {CoordKind::V, 0, v, r, c},
                       r == c ? Transform::log() : Transform::identity());
            });
        }
    }
    if (spec.spatial()) {
        for (int j = 0; j < dims.m; ++j) {
            for_lower(dims.q, [&](int r, int c) {
                scalar("A" + idx(j) + idx(r) + idx(c), {CoordKind::A, 0, j, r, c},
                       r == c ? Transform::log() : Transform::identity());
            });
        }
        for (int j = 0; j < dims.m; ++j) {
            for (int i = 0; i < dims.q; ++i) {
                const auto b = spec.phi_bounds(i, j);
                scalar("phi" + idx(i) + idx(j), {CoordKind::Phi, i, j, 0, 0}, Transform::logit(b.lo, b.hi));
            }
        }
        const double nq = static_cast<double>(dims.n * dims.q);
        const double w0 = options.initial_w_step.value_or(
            options.w_proposal == WProposal::Langevin
                ? 1.0
                : (options.w_proposal == WProposal::Curvature ? 2.38 : 1.0) / std::sqrt(nq));
        for (int j = 0; j < dims.m; ++j) {
            blocks.push_back({"w" + idx(j), BlockKind::Vector, {CoordKind::W, 0, j, 0, 0},
                              Transform::identity(), std::log(w0)});
        }
    }
    return blocks;
}

std::vector<UpdateBlock> make_auxiliary_blocks(const Dims& dims, const ModelSpec& spec, const SamplerOptions& options) {
    std::vector<UpdateBlock> blocks;
    if (!spec.spatial()) {
        return blocks;
    }
    const double log0 = std::log(options.initial_step.value_or(1.0));
    for (int j = 0; j < dims.m; ++j) {
        for (int i = 0; i < dims.q; ++i) {
            for (int c = 0; c < dims.p; ++c) {
                blocks.push_back({"shift:" + beta_name(i, j + 1, c), BlockKind::Scalar, {CoordKind::Beta, i, j, 0, c},
                                  Transform::identity(), log0, MoveKind::CoefficientShift});
            }
        }
    }
    for (int j = 0; j < dims.m; ++j) {
        for_lower(dims.q, [&](int r, int c) {
            blocks.push_back({"whitened:A" + idx(j) + idx(r) + idx(c), BlockKind::Scalar, {CoordKind::A, 0, j, r, c},
                              r == c ? Transform::log() : Transform::identity(), log0, MoveKind::Whitened});
        });
    }
    for (int j = 0; j < dims.m; ++j) {
        for (int i = 0; i < dims.q; ++i) {
            const auto b = spec.phi_bounds(i, j);
            blocks.push_back({"whitened:phi" + idx(i) + idx(j), BlockKind::Scalar, {CoordKind::Phi, i, j, 0, 0},
                              Transform::logit(b.lo, b.hi), log0, MoveKind::Whitened});
        }
    }
    return blocks;
}

std::vector<std::string> block_coverage(const UpdateBlock& block, const Dims& dims) {
    if (block.kind == BlockKind::Scalar) {
        return {block.id};
    }
    std::vector<std::string> out;
    for (int k = 0; k < dims.n; ++k) {
        for (int i = 0; i < dims.q; ++i) out.push_back("w" + idx(block.coord.j) + idx(k) + idx(i));
    }
    return out;
}

void check_partition(const std::vector<UpdateBlock>& blocks, const Dims& dims, const ModelSpec& spec) {
    std::map<std::string, int> seen;
    for (const auto& name : parameter_names(dims, spec)) {
        seen[name] = 0;
    }
    for (const auto& block : blocks) {
        for (const auto& name : block_coverage(block, dims)) {
            auto it = seen.find(name);
            if (it == seen.end()) {
                throw DomainError("update blocks: '" + name + "' is not a model parameter");
            }
            if (++it->second > 1) {
                throw DomainError("update blocks: '" + name + "' is covered twice");
            }
        }
    }
    for (const auto& [name, count] : seen) {
        if (count != 1) {
            throw DomainError("update blocks: '" + name + "' is not covered");
        }
    }
}

ParamState initial_state(const Dims& dims, const ModelSpec& spec, int chain_index, Rng& rng) {
    // Overdispersion table cycled by chain index; entry 0 is the default start.
    static constexpr double kBetaSd[] = {0.1, 1.0, 1.0, 0.5, 0.5};
    static constexpr double kDiag[] = {0.1, 0.5, 1.0, 0.25, 0.75};
    static constexpr double kPhiFrac[] = {0.5, 0.15, 0.85, 0.3, 0.7};
    const auto slot = static_cast<std::size_t>(chain_index % 5);
    std::normal_distribution<double> normal(0.0, kBetaSd[slot]);

    ParamState s;
    if (spec.has_beta0()) {
        for (int i = 0; i < dims.q; ++i) {
            Eigen::VectorXd b(dims.p);
            for (int c = 0; c < dims.p; ++c) b(c) = normal(rng);
            s.beta0.push_back(b);
        }
    }
    for (int k = 0; k < dims.q * dims.m; ++k) {
        Eigen::VectorXd b(dims.p);
        for (int c = 0; c < dims.p; ++c) b(c) = normal(rng);
        s.beta.push_back(b);
    }
    if (spec.has_sigma_eta()) {
        const int nv = spec.shared_sigma_eta ? 1 : dims.m;
        s.V.assign(static_cast<std::size_t>(nv), Eigen::MatrixXd::Identity(dims.p, dims.p) * kDiag[slot]);
    }
    if (spec.spatial()) {
        for (int j = 0; j < dims.m; ++j) {
            CoregParams t{Eigen::MatrixXd::Identity(dims.q, dims.q) * kDiag[slot], Eigen::VectorXd(dims.q)};
            for (int i = 0; i < dims.q; ++i) {
                const auto b = spec.phi_bounds(i, j);
                t.phi(i) = b.lo + kPhiFrac[slot] * (b.hi - b.lo);
            }
            s.theta.push_back(t);
            s.w.push_back(Eigen::VectorXd::Zero(dims.n * dims.q));
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// ConditionalTarget

ConditionalTarget::ConditionalTarget(const Dataset& data, const ModelSpec& spec, const ParamState& state)
    : data_(data), spec_(spec), dims_(model_dims(data, spec)) {
    check_shape(state, dims_, spec_);
    if (spec_.spatial()) {
        dist_ = data_.sites.distances();
        for (int j = 0; j < dims_.m; ++j) {
            classes_.push_back(build_class(j, state.theta[static_cast<std::size_t>(j)], nullptr));
        }
    }
}

ConditionalTarget::ClassCache ConditionalTarget::build_class(int j, const CoregParams& theta,
                                                             const ClassCache* reuse, int refresh_species) const {
    std::vector<std::shared_ptr<const SpeciesCorrelation>> species;
    for (int r = 0; r < dims_.q; ++r) {
        if (reuse != nullptr && r != refresh_species) {
            species.push_back(reuse->species()[static_cast<std::size_t>(r)]);
        } else {
            species.push_back(std::make_shared<const SpeciesCorrelation>(
                dist_, theta.phi(r),
                "class " + std::to_string(j + 1) + " species " + std::to_string(r + 1)));
        }
    }
    return CoregFactor(theta.A, std::move(species));
}

double ConditionalTarget::spatial_term(int j, const ParamState& state, const ClassCache& cache) const {
    const auto& w = state.w[static_cast<std::size_t>(j)];
    const double quad = j == 0 ? cache.quad_form(w) : cache.quad_form(w - state.w[static_cast<std::size_t>(j - 1)]);
    return -0.5 * (static_cast<double>(w.size()) * kLog2Pi + cache.log_det() + quad);
}

double ConditionalTarget::poisson(int i, int j, const ParamState& state) const {
    const Eigen::VectorXd* w = spec_.spatial() ? &state.w[static_cast<std::size_t>(j)] : nullptr;
    return poisson_cell_term(data_, i, j, state.b(i, j, dims_.m), w, dims_.p);
}

double ConditionalTarget::local(const UpdateBlock& block, const ParamState& state, const ClassCache* candidate) const {
    const Coord& c = block.coord;
    const int m = dims_.m;
    if (block.move == MoveKind::CoefficientShift) {
        double out = beta_step_term(spec_, state, c.i, c.j, m);
        for (int l = c.j; l < m; ++l) {
            out += poisson(c.i, l, state) + spatial_term(l, state, class_cache(l));
            if (spec_.beta_dynamics != BetaDynamics::Markov && l > c.j) {
                out += beta_step_term(spec_, state, c.i, l, m);
            }
        }
        return out;
    }
    if (block.move == MoveKind::Whitened) {
        // In whitened coordinates the class-j process density does not depend
        // on theta_j; adding 0.5 log|Sigma_j| to the w-space term accounts for
        // the Jacobian of the induced w shift.
        const double prior = theta_prior_term(spec_, state.theta[static_cast<std::size_t>(c.j)], c.j);
        if (prior == kNegInf) {
            return prior;
        }
        const ClassCache& cache = candidate != nullptr ? *candidate : class_cache(c.j);
        double out = prior + spatial_term(c.j, state, cache) + 0.5 * cache.log_det();
        for (int l = c.j; l < m; ++l) {
            for (int i = 0; i < dims_.q; ++i) out += poisson(i, l, state);
        }
        return out;
    }
    switch (c.kind) {
        case CoordKind::Beta0: {
            const Eigen::VectorXd mean = Eigen::VectorXd::Constant(dims_.p, spec_.m0);
            const Eigen::MatrixXd L0 = Eigen::MatrixXd::Identity(dims_.p, dims_.p) * std::sqrt(spec_.sigma0);
            return normal_chol_logdensity(state.beta0[static_cast<std::size_t>(c.i)], mean, L0) +
                   beta_step_term(spec_, state, c.i, 0, m);
        }
        case CoordKind::Beta: {
            double out = beta_step_term(spec_, state, c.i, c.j, m) + poisson(c.i, c.j, state);
            if (spec_.beta_dynamics == BetaDynamics::Markov && c.j + 1 < m) {
                out += beta_step_term(spec_, state, c.i, c.j + 1, m);
            }
            return out;
        }
        case CoordKind::V: {
            double out = iw_cholesky_logdensity(state.V[static_cast<std::size_t>(c.j)], spec_.r_eta_for(dims_.p),
                                                spec_.upsilon_eta);
            if (out == kNegInf) {
                return out;
            }
            for (int j = 0; j < m; ++j) {
                if (!spec_.shared_sigma_eta && j != c.j) continue;
                for (int i = 0; i < dims_.q; ++i) out += beta_step_term(spec_, state, i, j, m);
            }
            return out;
        }
        case CoordKind::A:
        case CoordKind::Phi: {
            const double prior = theta_prior_term(spec_, state.theta[static_cast<std::size_t>(c.j)], c.j);
            if (prior == kNegInf) {
                return prior;
            }
            const ClassCache& cache = candidate != nullptr ? *candidate : class_cache(c.j);
            return prior + spatial_term(c.j, state, cache);
        }
        case CoordKind::W: {
            double out = spatial_term(c.j, state, class_cache(c.j));
            if (c.j + 1 < m) {
                out += spatial_term(c.j + 1, state, class_cache(c.j + 1));
            }
            for (int i = 0; i < dims_.q; ++i) out += poisson(i, c.j, state);
            return out;
        }
    }
    return kNegInf;
}

double ConditionalTarget::total(const ParamState& state) const {
    double out = log_hyper_priors(state, spec_, dims_) + log_beta_prior(state, spec_, dims_);
    for (int i = 0; i < dims_.q; ++i) {
        for (int j = 0; j < dims_.m; ++j) out += poisson(i, j, state);
    }
    if (spec_.spatial()) {
        for (int j = 0; j < dims_.m; ++j) out += spatial_term(j, state, class_cache(j));
    }
    return std::isnan(out) ? kNegInf : out;
}

// ---------------------------------------------------------------------------
// Sampler

Sampler::Sampler(const Dataset& data, const ModelSpec& spec, SamplerOptions options)
    : data_(data), spec_(spec), options_(options), dims_(model_dims(data, spec)) {
    data_.validate();
    spec_.validate(dims_.p, dims_.q);
    if (options_.batch_size < 1) {
        throw ConfigError("sampler: batch size must be positive");
    }
    if (options_.initial_step && !(*options_.initial_step > 0.0)) {
        throw ConfigError("sampler: initial step must be positive");
    }
    blocks_ = make_blocks(dims_, spec_, options_);
    check_partition(blocks_, dims_, spec_);
    if (options_.interweave) {
        const auto extra = make_auxiliary_blocks(dims_, spec_, options_);
        blocks_.insert(blocks_.end(), extra.begin(), extra.end());
    }
}

struct Sampler::Pending {
    double saved_value = 0.0;
    int first_w = -1;
    std::vector<Eigen::VectorXd> saved_w;
    std::vector<double> saved_beta;
    std::optional<ConditionalTarget::ClassCache> candidate;
};

double Sampler::apply(const UpdateBlock& block, ParamState& state, const ConditionalTarget& target, double delta,
                      Pending& pending) const {
    const Coord& c = block.coord;
    const double before = target.local(block, state);
    double& value = coord_ref(state, c, dims_.m);
    pending.saved_value = value;
    const double u = block.transform.forward(value);
    const double u_new = u + delta;
    value = block.transform.inverse(u_new);
    const double log_jacobian = block.transform.log_jacobian(u_new) - block.transform.log_jacobian(u);

    if (block.move == MoveKind::CoefficientShift) {
        const double d = value - pending.saved_value;
        pending.first_w = c.j;
        pending.saved_w.assign(state.w.begin() + c.j, state.w.end());
        pending.saved_beta.clear();
        for (int l = c.j; l < dims_.m; ++l) {
            if (l > c.j) {
                double& b = state.b(c.i, l, dims_.m)(c.c);
                pending.saved_beta.push_back(b);
                b += d;
            }
            auto& w = state.w[static_cast<std::size_t>(l)];
            const Eigen::MatrixXd& X = data_.x(c.i, l);
            for (int k = 0; k < dims_.n; ++k) w(k * dims_.q + c.i) -= d * X(k, c.c);
        }
    }
    if (c.kind == CoordKind::A || c.kind == CoordKind::Phi) {
        const auto& theta = state.theta[static_cast<std::size_t>(c.j)];
        if (theta_prior_term(spec_, theta, c.j) == kNegInf) {
            return kNegInf;
        }
        try {
            const int refresh = c.kind == CoordKind::Phi ? c.i : -1;
            pending.candidate = target.build_class(c.j, theta, &target.class_cache(c.j), refresh);
        } catch (const SingularCovariance&) {
            return kNegInf;
        }
        if (block.move == MoveKind::Whitened) {
            const auto j = static_cast<std::size_t>(c.j);
            const Eigen::VectorXd increment = c.j == 0 ? state.w[j] : Eigen::VectorXd(state.w[j] - state.w[j - 1]);
            const Eigen::VectorXd shift = pending.candidate->color(target.class_cache(c.j).whiten(increment)) - increment;
            pending.first_w = c.j;
            pending.saved_w.assign(state.w.begin() + c.j, state.w.end());
            for (std::size_t l = j; l < state.w.size(); ++l) state.w[l] += shift;
        }
    }
    const ConditionalTarget::ClassCache* candidate = pending.candidate ? &*pending.candidate : nullptr;
    const double after = target.local(block, state, candidate);
    if (!std::isfinite(after)) {
        return kNegInf;
    }
    return after - before + log_jacobian;
}

void Sampler::undo(const UpdateBlock& block, ParamState& state, Pending& pending) const {
    coord_ref(state, block.coord, dims_.m) = pending.saved_value;
    for (std::size_t k = 0; k < pending.saved_beta.size(); ++k) {
        state.b(block.coord.i, block.coord.j + 1 + static_cast<int>(k), dims_.m)(block.coord.c) = pending.saved_beta[k];
    }
    if (pending.first_w >= 0) {
        for (std::size_t k = 0; k < pending.saved_w.size(); ++k) {
            state.w[static_cast<std::size_t>(pending.first_w) + k] = std::move(pending.saved_w[k]);
        }
    }
    pending = Pending{};
}

double Sampler::log_ratio(const UpdateBlock& block, ParamState& state, const ConditionalTarget& target,
                          double delta) const {
    Pending pending;
    const double r = apply(block, state, target, delta, pending);
    undo(block, state, pending);
    return r;
}

double Sampler::proposal_scale(const UpdateBlock& block, const ParamState& state) const {
    const Coord& c = block.coord;
    if (c.kind == CoordKind::A && c.r != c.c) {
        return std::abs(state.theta[static_cast<std::size_t>(c.j)].A(c.r, c.r));
    }
    if (block.move == MoveKind::CoefficientShift) {
        return std::abs(state.theta[static_cast<std::size_t>(c.j)].A(c.i, c.i));
    }
    return 1.0;
}

std::optional<double> Sampler::curvature_step(const UpdateBlock& block, ParamState& state,
                                              const ConditionalTarget& target) const {
    constexpr double h = 1e-2;
    const double curvature = -(log_ratio(block, state, target, h) + log_ratio(block, state, target, -h)) / (h * h);
    if (!std::isfinite(curvature) || curvature <= 0.0) {
        return std::nullopt;
    }
    return std::clamp(2.4 / std::sqrt(curvature) / proposal_scale(block, state), 1e-4, 10.0);
}

std::vector<Eigen::MatrixXd> Sampler::w_precision_factors(const ParamState& state,
                                                          const ConditionalTarget& target) const {
    std::vector<Eigen::MatrixXd> out;
    std::vector<Eigen::MatrixXd> inverses;
    for (int j = 0; j < dims_.m; ++j) inverses.push_back(target.class_cache(j).precision());
    for (int j = 0; j < dims_.m; ++j) {
        Eigen::MatrixXd Q = inverses[static_cast<std::size_t>(j)];
        if (j + 1 < dims_.m) Q += inverses[static_cast<std::size_t>(j + 1)];
        const auto& w = state.w[static_cast<std::size_t>(j)];
        for (int i = 0; i < dims_.q; ++i) {
            const Eigen::VectorXd eta = data_.x(i, j).leftCols(dims_.p) * state.b(i, j, dims_.m);
            for (int k = 0; k < dims_.n; ++k) {
                const int r = k * dims_.q + i;
                Q(r, r) += std::exp(std::min(eta(k) + w(r), 50.0));
            }
        }
        Q = 0.5 * (Q + Q.transpose()).eval();
        Eigen::LLT<Eigen::MatrixXd> llt(Q);
        if (llt.info() != Eigen::Success) {
            throw NumericError("w proposal: conditional precision of class " + std::to_string(j + 1) +
                               " is not positive definite");
        }
        out.push_back(llt.matrixL());
    }
    return out;
}

bool Sampler::step(UpdateBlock& block, ParamState& state, ConditionalTarget& target, Rng& rng,
                   const std::vector<Eigen::MatrixXd>* w_shape) const {
    const Coord& c = block.coord;
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform;
    if (block.kind == BlockKind::Vector && options_.w_proposal == WProposal::Langevin) {
        return langevin_step(block, state, target, rng);
    }
    if (block.kind == BlockKind::Vector) {
        auto& w = state.w[static_cast<std::size_t>(c.j)];
        const Eigen::Index dim = w.size();
        Eigen::VectorXd z(dim);
        for (Eigen::Index k = 0; k < dim; ++k) z(k) = normal(rng);
        const double log_u = std::log(uniform(rng));

        const double before = target.local(block, state);
        Eigen::VectorXd increment = block.step() * z;
        if (options_.w_proposal == WProposal::PriorScaled) {
            increment = target.class_cache(c.j).color(increment);
        } else if (options_.w_proposal == WProposal::Curvature) {
            std::vector<Eigen::MatrixXd> local_shape;
            if (w_shape == nullptr) {
                local_shape = w_precision_factors(state, target);
                w_shape = &local_shape;
            }
            (*w_shape)[static_cast<std::size_t>(c.j)].transpose().triangularView<Eigen::Upper>().solveInPlace(increment);
        }
        const Eigen::VectorXd saved = w;
        w += increment;
        const double after = target.local(block, state);
        if (std::isfinite(after) && log_u < after - before) {
            return true;
        }
        w = saved;
        return false;
    }

    const double z = normal(rng);
    const double log_u = std::log(uniform(rng));
    Pending pending;
    const double r = apply(block, state, target, block.step() * proposal_scale(block, state) * z, pending);
    if (r > kNegInf && log_u < r) {
        if (pending.candidate) {
            target.install(c.j, std::move(*pending.candidate));
        }
        return true;
    }
    undo(block, state, pending);
    return false;
}

bool Sampler::langevin_step(UpdateBlock& block, ParamState& state, ConditionalTarget& target, Rng& rng) const {
    const int j = block.coord.j;
    const int q = dims_.q;
    auto& w = state.w[static_cast<std::size_t>(j)];
    const Eigen::Index dim = w.size();
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform;
    Eigen::VectorXd z(dim);
    for (Eigen::Index k = 0; k < dim; ++k) z(k) = normal(rng);
    const double log_u = std::log(uniform(rng));

    const Eigen::MatrixXd own = target.class_cache(j).precision();
    Eigen::MatrixXd next;
    Eigen::MatrixXd G = own;
    if (j + 1 < dims_.m) {
        next = target.class_cache(j + 1).precision();
        G += next;
    }
    std::vector<Eigen::VectorXd> eta;
    for (int i = 0; i < q; ++i) {
        eta.push_back(data_.x(i, j).leftCols(dims_.p) * state.b(i, j, dims_.m));
        for (int k = 0; k < dims_.n; ++k) {
            G(k * q + i, k * q + i) += std::max(static_cast<double>(data_.count(i, j, k)), 0.5);
        }
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) {
        throw NumericError("w proposal: preconditioner of class " + std::to_string(j + 1) +
                           " is not positive definite");
    }

    // Gradient of the log target in w_j; empty when some intensity overflows.
    auto gradient = [&](const Eigen::VectorXd& v) -> std::optional<Eigen::VectorXd> {
        Eigen::VectorXd g(dim);
        for (int i = 0; i < q; ++i) {
            for (int k = 0; k < dims_.n; ++k) {
                const double lambda = std::exp(eta[static_cast<std::size_t>(i)](k) + v(k * q + i));
                if (!std::isfinite(lambda)) return std::nullopt;
                g(k * q + i) = static_cast<double>(data_.count(i, j, k)) - lambda;
            }
        }
        g -= j == 0 ? Eigen::VectorXd(own * v) : Eigen::VectorXd(own * (v - state.w[static_cast<std::size_t>(j - 1)]));
        if (j + 1 < dims_.m) g += next * (state.w[static_cast<std::size_t>(j + 1)] - v);
        return g;
    };
    const double h = block.step() * block.step();
    auto log_kernel = [&](const Eigen::VectorXd& to, const Eigen::VectorXd& from, const Eigen::VectorXd& g) {
        const Eigen::VectorXd r = to - from - 0.5 * h * llt.solve(g);
        return -0.5 / h * r.dot(G * r);
    };

    const auto g0 = gradient(w);
    if (!g0) return false;
    const Eigen::VectorXd w0 = w;
    const double before = target.local(block, state);
    Eigen::VectorXd noise = block.step() * z;
    llt.matrixU().solveInPlace(noise);
    const Eigen::VectorXd proposal = w0 + 0.5 * h * llt.solve(*g0) + noise;
    w = proposal;
    const auto g1 = gradient(proposal);
    const double after = target.local(block, state);
    if (g1 && std::isfinite(after)) {
        const double r = after - before + log_kernel(w0, proposal, *g1) - log_kernel(proposal, w0, *g0);
        if (log_u < r) return true;
    }
    w = w0;
    return false;
}

ChainStore Sampler::run(const ParamState& init, const Schedule& schedule, std::uint64_t seed, int chain_id) const {
    schedule.validate();
    ChainStore store;
    store.chain_id = chain_id;
    store.seed = seed;
    store.iters = schedule.iters;
    store.burnin = schedule.burnin;
    store.thin = schedule.thin;
    store.batch_size = options_.batch_size;

    auto blocks = blocks_;
    for (const auto& b : blocks) store.block_ids.push_back(b.id);
    store.batch_accepts.assign(blocks.size(), {});

    ParamState state = init;
    check_shape(state, dims_, spec_);
    std::optional<ConditionalTarget> target;
    try {
        target.emplace(data_, spec_, state);
    } catch (const SingularCovariance& e) {
        throw NumericError(std::string("initialization: ") + e.what());
    }
    if (!std::isfinite(target->total(state))) {
        throw NumericError("initialization: log_joint is not finite at the initial state");
    }

    // Without a fixed initial step, scalar steps start from the local
    // curvature and are re-estimated after batches 1, 2, 4, ... while in the
    // first half of burn-in. Blocks with no usable curvature keep their step.
    auto probe_steps = [&] {
        for (auto& b : blocks) {
            if (b.kind != BlockKind::Scalar) continue;
            if (const auto step = curvature_step(b, state, *target)) b.log_step = std::log(*step);
        }
    };
    const bool probing = !options_.initial_step;
    if (probing) probe_steps();

    const bool curvature_w = spec_.spatial() && options_.w_proposal == WProposal::Curvature;
    std::vector<Eigen::MatrixXd> w_shape;
    if (curvature_w) w_shape = w_precision_factors(state, *target);

    Rng rng(seed);
    std::vector<int> accepted(blocks.size(), 0);
    store.draws.reserve(static_cast<std::size_t>(schedule.retained()));
    for (long t = 1; t <= schedule.iters; ++t) {
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            if (step(blocks[b], state, *target, rng, curvature_w ? &w_shape : nullptr)) {
                ++accepted[b];
            }
        }
        if (t % options_.batch_size == 0) {
            const long batch = t / options_.batch_size;
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                store.batch_accepts[b].push_back(accepted[b]);
                if (options_.adapt) {
                    adapt(blocks[b], static_cast<double>(accepted[b]) / options_.batch_size, batch);
                }
                accepted[b] = 0;
            }
            if (curvature_w && t <= schedule.burnin) w_shape = w_precision_factors(state, *target);
            if (probing && 2 * t <= schedule.burnin && (batch & (batch - 1)) == 0) probe_steps();
        }
        if (t > schedule.burnin && (t - schedule.burnin) % schedule.thin == 0) {
            const double lj = target->total(state);
            if (!std::isfinite(lj)) {
                throw NumericError("chain " + std::to_string(chain_id) + ": non-finite posterior at iteration " +
                                   std::to_string(t));
            }
            store.draws.push_back(state);
            store.draw_iterations.push_back(t);
            store.log_joint_trace.push_back(lj);
        }
    }
    for (const auto& b : blocks) store.final_log_steps.push_back(b.log_step);
    return store;
}

StepResult metropolis_step(const ParamState& state, UpdateBlock& block, const Dataset& data, const ModelSpec& spec,
                           Rng& rng, const SamplerOptions& options) {
    const Sampler sampler(data, spec, options);
    StepResult result{state, false};
    ConditionalTarget target(data, spec, result.state);
    result.accepted = sampler.step(block, result.state, target, rng);
    return result;
}

ChainStore run_chain(const Dataset& data, const ModelSpec& spec, const ParamState& init, const Schedule& schedule,
                     std::uint64_t seed, const SamplerOptions& options) {
    return Sampler(data, spec, options).run(init, schedule, seed, 1);
}

namespace {

[[noreturn]] void rethrow_with_chain(int chain_id, std::exception_ptr ptr) {
    const std::string prefix = "chain " + std::to_string(chain_id) + ": ";
    try {
        std::rethrow_exception(ptr);
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const DataError& e) {
        throw DataError(prefix + e.what());
    } catch (const NumericError& e) {
        throw NumericError(prefix + e.what());
    } catch (const SingularCovariance& e) {
        throw NumericError(prefix + e.what());
    } catch (const std::exception& e) {
        throw Error(prefix + e.what());
    }
}

}  // namespace

std::vector<ChainStore> run_chains(const Dataset& data, const ModelSpec& spec, int chains, const Schedule& schedule,
                                   std::uint64_t root_seed, const SamplerOptions& options, unsigned max_threads) {
    if (chains < 1) {
        throw ConfigError("run_chains: need at least one chain");
    }
    const Sampler sampler(data, spec, options);
    auto one = [&](int c) {
        const std::uint64_t seed = derive_seed(root_seed, static_cast<std::uint64_t>(c));
        Rng init_rng(derive_seed(seed, 0));
        const ParamState init = initial_state(sampler.dims(), spec, c - 1, init_rng);
        return sampler.run(init, schedule, seed, c);
    };

    unsigned threads = max_threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : max_threads;
    threads = std::min<unsigned>(threads, static_cast<unsigned>(chains));
    std::vector<ChainStore> out(static_cast<std::size_t>(chains));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chains));
    for (int start = 1; start <= chains; start += static_cast<int>(threads)) {
        std::vector<std::future<void>> pending;
        for (int c = start; c < start + static_cast<int>(threads) && c <= chains; ++c) {
            pending.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred, [&, c] {
                try {
                    out[static_cast<std::size_t>(c - 1)] = one(c);
                } catch (...) {
                    errors[static_cast<std::size_t>(c - 1)] = std::current_exception();
                }
            }));
        }
        for (auto& f : pending) f.get();
    }
    for (int c = 1; c <= chains; ++c) {
        if (errors[static_cast<std::size_t>(c - 1)]) {
            rethrow_with_chain(c, errors[static_cast<std::size_t>(c - 1)]);
        }
    }
    return out;
}

}  // namespace standgp
