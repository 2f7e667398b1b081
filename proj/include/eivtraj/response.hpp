#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "eivtraj/ad.hpp"
#include "eivtraj/types.hpp"

namespace eivtraj {

/// Bell-shaped response h * exp(-0.5 * (lag - 3l)^2 / l^2). Peaks with value
/// h at lag = 3l.
std::vector<double> response_curve(std::span<const double> lags, double h, double l);

double response_value(double lag, double h, double l);

struct ResponseShape {
  double height = 0.0;
  double length = 0.0;  // minutes
};

/// Height and length-scale of one response given the true covariates:
/// h = beta_h . x, l = floor + unit * softplus(beta_l . x).
ResponseShape response_params(const ResponseCoefficients& coef, std::span<const double> x_star,
                              double floor, double unit = 1.0);

/// Exact integral of the response over all lags: h * l * sqrt(2 pi).
double response_area(double h, double l);

/// d(area)/d(x_p) through the height and length-scale links.
double area_sensitivity(const ResponseCoefficients& coef, std::span<const double> x_star,
                        std::size_t p, double floor, double unit = 1.0);

namespace detail {

// Linear predictors shared by the plain and differentiable paths.
template <class T>
T linear_form(std::span<const T> beta, std::span<const T> x) {
  T acc = T(0.0);
  for (std::size_t i = 0; i < beta.size(); ++i) acc += beta[i] * x[i];
  return acc;
}

template <class T>
T length_link(const T& eta, double floor, double unit) {
  using ad::softplus;
  return floor + unit * softplus(eta);
}

}  // namespace detail

}  // namespace eivtraj
