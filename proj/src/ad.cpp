#include "eivtraj/ad.hpp"

#include <algorithm>
#include <stdexcept>

namespace eivtraj::ad {

int Tape::nary(std::span<const int> parents, std::span<const double> partials) {
  if (parents.size() != partials.size()) {
    throw std::invalid_argument("Tape::nary: parents/partials size mismatch");
  }
  for (std::size_t i = 0; i < parents.size(); ++i) {
    if (parents[i] < 0) continue;
    parent_.push_back(parents[i]);
    partial_.push_back(partials[i]);
  }
  return close_node();
}

const std::vector<double>& Tape::gradient(int output) {
  adjoint_.assign(size(), 0.0);
  if (output < 0) return adjoint_;
  adjoint_[output] = 1.0;
  for (int i = output; i >= 0; --i) {
    const double a = adjoint_[i];
    if (a == 0.0) continue;
    for (std::uint32_t k = begin_[i]; k < begin_[i + 1]; ++k) {
      adjoint_[parent_[k]] += a * partial_[k];
    }
  }
  return adjoint_;
}

Var dot(std::span<const Var> x, std::span<const double> w) {
  double v = 0.0;
  Tape* tape = nullptr;
  std::vector<int> parents(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    v += x[i].value() * w[i];
    parents[i] = x[i].index();
    if (!x[i].is_constant()) tape = x[i].tape();
  }
  if (tape == nullptr) return Var(v);
  return {v, tape, tape->nary(parents, w)};
}

}  // namespace eivtraj::ad
