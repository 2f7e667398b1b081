#pragma once

// No-U-Turn sampler with multinomial trajectory sampling, a diagonal metric
// adapted in doubling windows during warmup, and dual-averaging step size
// adaptation. The adaptation schedule follows the familiar three-stage
// warmup: a fast initial buffer, slow metric windows, and a terminal fast
// buffer.

#include <cstdint>
#include <functional>
#include <span>

#include "eivtraj/draws.hpp"

namespace eivtraj {

struct SamplerConfig {
  std::size_t chains = 4;
  std::size_t warmup = 1000;
  std::size_t draws = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  double init_jitter = 0.1;
  double max_delta_h = 1000.0;  // energy error that marks a divergence
  std::size_t threads = 0;      // 0: one per chain, bounded by the hardware

  void validate() const;
};

/// Log density and gradient at x. Returns -inf (gradient ignored) outside
/// the support or on numerical failure. One instance is used by exactly one
/// chain at a time.
using LogDensityGradient = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// Produces an independent evaluator for each chain.
using DensityFactory = std::function<LogDensityGradient()>;

/// Seed of chain `chain` derived from the run seed with splitmix64.
std::uint64_t chain_seed(std::uint64_t seed, std::size_t chain);

/// Runs config.chains chains from init + Uniform(-init_jitter, init_jitter).
/// Draws are reported in the sampler's (unconstrained) space with names
/// "x[i]". Throws NumericalError when every warmup transition diverged or no
/// finite starting point is found.
PosteriorDraws nuts_sample(const DensityFactory& target, const SamplerConfig& config,
                           std::span<const double> init);

/// One leapfrog step of size eps with a diagonal inverse metric; updates
/// q, p, grad in place and returns the new log density.
double leapfrog(const LogDensityGradient& target, Eigen::VectorXd& q, Eigen::VectorXd& p,
                Eigen::VectorXd& grad, const Eigen::VectorXd& inv_metric, double eps);

}  // namespace eivtraj
