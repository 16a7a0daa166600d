#pragma once

#include "standgp/covariance.hpp"
#include "standgp/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace standgp {

using Rng = std::mt19937_64;

/// splitmix64 mix of (root, stream); every chain and task derives its seed this way.
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

enum class CoordKind { Beta0, Beta, V, A, Phi, W };

/// Address of one parameter coordinate (or, for W, of the whole w_j vector).
/// Field use: Beta0 (i, c); Beta (i, j, c); V (j = factor index, r, c);
/// A (j, r, c); Phi (i, j); W (j). All indices 0-based.
struct Coord {
    CoordKind kind = CoordKind::Beta;
    int i = 0;
    int j = 0;
    int r = 0;
    int c = 0;
};

enum class BlockKind { Scalar, Vector };

/// How a scalar proposal moves the state.
enum class MoveKind {
    /// Only the block's coordinate changes.
    Conditional,
    /// beta_il[c] moves by d and w_il(s) by -d x_il[c](s) for every class
    /// l >= j, so every linear predictor is unchanged.
    CoefficientShift,
    /// A_j or phi_j moves with the whitened increment M_j^{-1}(w_j - w_{j-1})
    /// held fixed; w_j, ..., w_m shift together.
    Whitened,
};

/// A group of coordinates updated by one Metropolis accept/reject.
struct UpdateBlock {
    std::string id;
    BlockKind kind = BlockKind::Scalar;
    Coord coord;
    Transform transform;
    /// log of the proposal scale gamma; one scale per block.
    double log_step = 0.0;
    MoveKind move = MoveKind::Conditional;

    [[nodiscard]] double step() const { return std::exp(log_step); }
};

/// Proposal shape for the w_j vector blocks.
enum class WProposal {
    Isotropic,    // gamma * z
    PriorScaled,  // gamma * L_j z, L_j the Cholesky factor of Sigma_j(theta_j)
    /// gamma * R_j^{-T} z with R_j R_j' = Sigma_j^{-1} + Sigma_{j+1}^{-1} + diag(lambda_j),
    /// the conditional precision of w_j at the current state. Refreshed at
    /// every batch boundary during burn-in, then frozen.
    Curvature,
    /// Preconditioned Langevin: w' = w + (gamma^2 / 2) G^{-1} grad + gamma G^{-1/2} z
    /// with G = Sigma_j^{-1} + Sigma_{j+1}^{-1} + diag(max(y_j, 1/2)), rebuilt at
    /// every step. G never depends on w_j, so the Hastings correction is exact.
    Langevin,
};

struct SamplerOptions {
    int batch_size = 50;
    bool adapt = true;
    /// Initial gamma for scalar blocks. Unset: 2.4 / sqrt(local curvature)
    /// of each block's log target at the starting state.
    std::optional<double> initial_step;
    /// Append intercept-shift and whitened coregionalization moves to each sweep.
    bool interweave = true;
    /// Initial gamma for w_j blocks; defaults to 1 for the Langevin proposal,
    /// 2.38 / sqrt(nq) for the curvature proposal and 1 / sqrt(nq) otherwise.
    std::optional<double> initial_w_step;
    WProposal w_proposal = WProposal::Langevin;
};

struct Schedule {
    long iters = 75000;
    long burnin = 15000;
    long thin = 1;

    /// Throws ConfigError when inconsistent.
    void validate() const;
    [[nodiscard]] long retained() const { return iters > burnin ? (iters - burnin) / thin : 0; }
};

/// Posterior draws of one chain plus acceptance bookkeeping.
struct ChainStore {
    int chain_id = 1;
    std::uint64_t seed = 0;
    long iters = 0;
    long burnin = 0;
    long thin = 1;
    int batch_size = 50;
    std::vector<ParamState> draws;
    std::vector<long> draw_iterations;
    std::vector<double> log_joint_trace;
    std::vector<std::string> block_ids;
    /// batch_accepts[block][b] = accepted proposals of that block in batch b.
    std::vector<std::vector<int>> batch_accepts;
    std::vector<double> final_log_steps;
};

/// Tuning increment delta(b) = min(0.01, 1/sqrt(b)).
[[nodiscard]] double adaptation_delta(long batch_index);

/// Batch adaptation: log gamma +/- delta(b) depending on whether the batch
/// acceptance rate exceeds 0.44 (a rate of exactly 0.44 decreases).
void adapt(UpdateBlock& block, double batch_accept_rate, long batch_index);

/// One random-walk Metropolis update of a scalar on the transformed scale.
/// `value` is set to the proposal before `log_target` (which receives the
/// constrained value) is called, and restored bit-for-bit on rejection.
/// Draws exactly one normal and one uniform variate regardless of outcome.
bool scalar_metropolis(double& value, double step, const Transform& transform, double current_log_target,
                       const std::function<double(double)>& log_target, Rng& rng);

/// Names of all free coordinates in canonical order (matches flatten()).
[[nodiscard]] std::vector<std::string> parameter_names(const Dims& dims, const ModelSpec& spec);
[[nodiscard]] std::vector<double> flatten(const ParamState& state, const Dims& dims, const ModelSpec& spec);
[[nodiscard]] ParamState unflatten(const std::vector<double>& values, const Dims& dims, const ModelSpec& spec);
/// True for w[...] columns, which are excluded from scalar convergence summaries.
[[nodiscard]] bool is_random_effect(const std::string& name);

/// Update blocks in sweep order: beta0 entries, beta entries class by class,
/// V entries, A_j entries, phi_j entries, then one vector block per w_j.
[[nodiscard]] std::vector<UpdateBlock> make_blocks(const Dims& dims, const ModelSpec& spec,
                                                   const SamplerOptions& options);
/// Extra moves run after the sweep when interweaving: one coefficient shift
/// per beta_ij entry, then one whitened move per A_j and phi_j entry.
[[nodiscard]] std::vector<UpdateBlock> make_auxiliary_blocks(const Dims& dims, const ModelSpec& spec,
                                                             const SamplerOptions& options);
/// Names covered by a block (the w block covers its whole vector).
[[nodiscard]] std::vector<std::string> block_coverage(const UpdateBlock& block, const Dims& dims);
/// Throws if the blocks do not partition parameter_names().
void check_partition(const std::vector<UpdateBlock>& blocks, const Dims& dims, const ModelSpec& spec);

/// Default start: beta ~ N(0, 0.01), V and A diagonals 0.1, off-diagonals 0,
/// phi at the support midpoint, w = 0. `chain_index` > 0 gives overdispersed
/// variants for multi-chain runs.
[[nodiscard]] ParamState initial_state(const Dims& dims, const ModelSpec& spec, int chain_index, Rng& rng);

/// Log-posterior with cached per-class covariance factors, so that each
/// block update only evaluates the terms that involve that block.
class ConditionalTarget {
public:
    /// Structured factor of one class covariance.
    using ClassCache = CoregFactor;

    /// Throws SingularCovariance if some class covariance cannot be factorized.
    ConditionalTarget(const Dataset& data, const ModelSpec& spec, const ParamState& state);

    /// Sum of log_joint terms that involve `block`, with the class covariance
    /// taken from `candidate` when given (A and phi blocks).
    [[nodiscard]] double local(const UpdateBlock& block, const ParamState& state,
                               const ClassCache* candidate = nullptr) const;
    /// log_joint(state) evaluated from the caches.
    [[nodiscard]] double total(const ParamState& state) const;

    /// Builds the class-j cache for `theta`, sharing the species correlation
    /// factors of `reuse` when given (recomputing only `refresh_species`).
    /// Throws SingularCovariance.
    [[nodiscard]] ClassCache build_class(int j, const CoregParams& theta, const ClassCache* reuse,
                                         int refresh_species = -1) const;
    void install(int j, ClassCache cache) { classes_[static_cast<std::size_t>(j)] = std::move(cache); }
    [[nodiscard]] const ClassCache& class_cache(int j) const { return classes_[static_cast<std::size_t>(j)]; }
    [[nodiscard]] const Dims& dims() const { return dims_; }

private:
    [[nodiscard]] double spatial_term(int j, const ParamState& state, const ClassCache& cache) const;
    [[nodiscard]] double poisson(int i, int j, const ParamState& state) const;

    const Dataset& data_;
    const ModelSpec& spec_;
    Dims dims_;
    Eigen::MatrixXd dist_;
    std::vector<ClassCache> classes_;
};

/// Metropolis-within-Gibbs sampler over the joint posterior.
class Sampler {
public:
    Sampler(const Dataset& data, const ModelSpec& spec, SamplerOptions options = {});

    [[nodiscard]] const std::vector<UpdateBlock>& blocks() const { return blocks_; }
    [[nodiscard]] const Dims& dims() const { return dims_; }

    /// One update of `block`; returns whether the proposal was accepted.
    /// `w_shape` holds the lower factors used by the curvature w proposal
    /// (computed on demand when null).
    bool step(UpdateBlock& block, ParamState& state, ConditionalTarget& target, Rng& rng,
              const std::vector<Eigen::MatrixXd>* w_shape = nullptr) const;

    /// Lower factors R_j of the conditional precision of each w_j at `state`.
    [[nodiscard]] std::vector<Eigen::MatrixXd> w_precision_factors(const ParamState& state,
                                                                   const ConditionalTarget& target) const;

    /// Log Metropolis ratio (target plus transform Jacobian) of moving scalar
    /// `block` by `delta` on its transformed scale. The state is left unchanged.
    [[nodiscard]] double log_ratio(const UpdateBlock& block, ParamState& state, const ConditionalTarget& target,
                                   double delta) const;

    /// Multiplier applied to the adapted step of scalar `block`. Off-diagonal
    /// A entries and coefficient shifts scale with the conditional standard
    /// deviation A_j[r][r] of their species; every other block uses 1. The
    /// multiplier never depends on the coordinate being moved, so the
    /// proposal stays symmetric.
    [[nodiscard]] double proposal_scale(const UpdateBlock& block, const ParamState& state) const;

    /// Runs one chain from `init`. Throws NumericError if log_joint(init) is not finite.
    [[nodiscard]] ChainStore run(const ParamState& init, const Schedule& schedule, std::uint64_t seed,
                                 int chain_id = 1) const;

private:
    struct Pending;
    bool langevin_step(UpdateBlock& block, ParamState& state, ConditionalTarget& target, Rng& rng) const;
    double apply(const UpdateBlock& block, ParamState& state, const ConditionalTarget& target, double delta,
                 Pending& pending) const;
    void undo(const UpdateBlock& block, ParamState& state, Pending& pending) const;
    [[nodiscard]] std::optional<double> curvature_step(const UpdateBlock& block, ParamState& state,
                                        const ConditionalTarget& target) const;

    const Dataset& data_;
    const ModelSpec& spec_;
    SamplerOptions options_;
    Dims dims_;
    std::vector<UpdateBlock> blocks_;
};

struct StepResult {
    ParamState state;
    bool accepted = false;
};

/// Single Metropolis update of `block` from `state` (stand-alone form).
[[nodiscard]] StepResult metropolis_step(const ParamState& state, UpdateBlock& block, const Dataset& data,
                                         const ModelSpec& spec, Rng& rng, const SamplerOptions& options = {});

[[nodiscard]] ChainStore run_chain(const Dataset& data, const ModelSpec& spec, const ParamState& init,
                                   const Schedule& schedule, std::uint64_t seed,
                                   const SamplerOptions& options = {});

/// Runs `chains` independent chains with overdispersed starts; chain c
/// (1-based) uses seed derive_seed(root_seed, c). Chains run on up to
/// `max_threads` threads (0 = hardware concurrency); results do not depend
/// on the thread count.
[[nodiscard]] std::vector<ChainStore> run_chains(const Dataset& data, const ModelSpec& spec, int chains,
                                                 const Schedule& schedule, std::uint64_t root_seed,
                                                 const SamplerOptions& options = {}, unsigned max_threads = 0);

}  // namespace standgp
