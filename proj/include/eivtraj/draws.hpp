#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace eivtraj {

/// Post-warmup draws of every chain, stored chain-major:
/// values[(chain * draws + draw) * dim + param].
struct PosteriorDraws {
  std::size_t chains = 0;
  std::size_t draws = 0;
  std::vector<std::string> names;
  std::vector<double> values;
  std::vector<double> logp;          // per draw
  std::vector<char> divergent;       // per draw
  std::vector<int> tree_depth;       // per draw
  std::vector<int> n_leapfrog;       // per draw
  std::vector<double> accept_stat;   // per draw
  std::vector<double> step_sizes;    // per chain, after adaptation
  std::vector<Eigen::VectorXd> inv_metric;  // per chain
  std::size_t warmup_divergences = 0;

  std::size_t dim() const { return names.size(); }
  std::size_t total() const { return chains * draws; }

  double at(std::size_t chain, std::size_t draw, std::size_t param) const {
    return values[(chain * draws + draw) * dim() + param];
  }
  /// Draw k in the flattened (chain-major) order.
  std::span<const double> row(std::size_t k) const { return {values.data() + k * dim(), dim()}; }
  std::span<double> row(std::size_t k) { return {values.data() + k * dim(), dim()}; }

  /// Column index of a parameter name; throws StructuralError when absent.
  std::size_t index_of(const std::string& name) const;
  /// Posterior mean of every parameter.
  Eigen::VectorXd mean() const;
  std::size_t divergence_count() const;
};

}  // namespace eivtraj
