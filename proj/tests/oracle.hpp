#pragma once

// Independent dense reference implementations. They share no numerical code
// with the library: distances, covariances, densities and determinants are
// all recomputed here from the model definition.

#include "standgp/model.hpp"
#include "standgp/sampler.hpp"

#include <Eigen/Dense>

#include <vector>

namespace oracle {

/// Unnormalized log posterior (Poisson log y! omitted), built from one joint
/// normal over every w_j and one joint normal per species over its beta path.
[[nodiscard]] double dense_log_joint(const standgp::Dataset& data, const standgp::ParamState& state,
                                     const standgp::ModelSpec& spec);

/// Log-determinant of the Jacobian of vech(L) -> vech(L L') by differencing.
/// The map is quadratic, so central differences are exact up to rounding.
[[nodiscard]] double numeric_cholesky_jacobian(const Eigen::MatrixXd& L);

/// Distribution of w_1(s0)..w_J(s0) given w_1..w_J at the observed sites,
/// from one joint covariance over all classes and sites.
struct DenseConditional {
    std::vector<Eigen::VectorXd> mean;
    std::vector<Eigen::MatrixXd> cov;
};
[[nodiscard]] DenseConditional dense_conditional_w(const Eigen::Vector2d& s0, const standgp::ParamState& draw,
                                                   const Eigen::MatrixX2d& coords, int upto_class);

/// A small random model instance with a state inside the support.
struct Instance {
    standgp::Dataset data;
    standgp::ModelSpec spec;
    standgp::ParamState state;
};
[[nodiscard]] Instance random_instance(standgp::Rng& rng, int max_n, int max_q, int max_m);

}  // namespace oracle
