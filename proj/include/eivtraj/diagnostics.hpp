#pragma once

#include <span>
#include <string>
#include <vector>

#include "eivtraj/draws.hpp"

namespace eivtraj {

struct ParamDiagnostics {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
  double rhat = 0.0;      // max of rank-normalized and folded split R-hat
  double ess_bulk = 0.0;
  double ess_tail = 0.0;
  bool degenerate = false;  // constant draws: rhat and ess are NaN
};

/// Split R-hat of draws stored chain-major (chains x draws), after rank
/// normalization; the folded variant is included. NaN for constant input.
double split_rhat(std::span<const double> values, std::size_t chains, std::size_t draws);

/// Bulk effective sample size (rank-normalized split chains).
double ess_bulk(std::span<const double> values, std::size_t chains, std::size_t draws);

/// Tail ESS: the smaller ESS of the 5% and 95% quantile indicators.
double ess_tail(std::span<const double> values, std::size_t chains, std::size_t draws);

/// ESS of the raw (not rank-normalized) split chains.
double ess_basic(std::span<const double> values, std::size_t chains, std::size_t draws);

/// Per-parameter summaries. Throws StructuralError for fewer than 4 draws
/// per chain.
std::vector<ParamDiagnostics> diagnostics(const PosteriorDraws& draws);

/// Largest finite R-hat, or NaN when every parameter is degenerate.
double max_rhat(const std::vector<ParamDiagnostics>& diag);

}  // namespace eivtraj
