#include "eivtraj/response.hpp"

#include <numbers>
#include <string>

namespace eivtraj {

namespace {

void require_positive_length(double l) {
  if (!(l > 0.0) || !std::isfinite(l)) {
    throw DomainError("response length-scale must be positive and finite, got " +
                      std::to_string(l));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("coefficient/covariate size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double response_value(double lag, double h, double l) {
  const double z = lag / l - 3.0;
  return h * std::exp(-0.5 * z * z);
}

std::vector<double> response_curve(std::span<const double> lags, double h, double l) {
  require_positive_length(l);
  std::vector<double> out(lags.size());
  for (std::size_t i = 0; i < lags.size(); ++i) out[i] = response_value(lags[i], h, l);
  return out;
}

ResponseShape response_params(const ResponseCoefficients& coef, std::span<const double> x_star,
                              double floor, double unit) {
  ResponseShape s;
  s.height = dot(coef.beta_h, x_star);
  s.length = detail::length_link(dot(coef.beta_l, x_star), floor, unit);
  return s;
}

double response_area(double h, double l) {
  require_positive_length(l);
  return h * l * std::sqrt(2.0 * std::numbers::pi);
}

double area_sensitivity(const ResponseCoefficients& coef, std::span<const double> x_star,
                        std::size_t p, double floor, double unit) {
  if (p >= x_star.size() || p >= coef.beta_h.size() || p >= coef.beta_l.size()) {
    throw DomainError("covariate index " + std::to_string(p) + " out of range");
  }
  const ResponseShape s = response_params(coef, x_star, floor, unit);
  const double eta = dot(coef.beta_l, x_star);
  const double dl_dx = unit * ad::logistic(eta) * coef.beta_l[p];
  return std::sqrt(2.0 * std::numbers::pi) * (coef.beta_h[p] * s.length + s.height * dl_dx);
}

}  // namespace eivtraj
