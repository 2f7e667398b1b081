#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "eivtraj/model.hpp"
#include "eivtraj/simulate.hpp"

namespace fixtures {

// Small dataset: `patients` toy patients, one day at 30-minute cadence,
// `meals` meals each, the last quarter of the day held out.
inline std::vector<eivtraj::PatientData> small_dataset(std::size_t patients, std::size_t meals,
                                                       std::uint64_t seed, std::size_t p = 2) {
  eivtraj::SimConfig cfg;
  cfg.n_patients = patients;
  cfg.meals_per_patient = meals;
  cfg.covariate_dim = p;
  cfg.days = 1.0;
  cfg.cadence = 30.0;
  cfg.train_days = 0.75;
  cfg.seed = seed;
  cfg.time_bias = 10.0;
  cfg.time_jitter_sd = 5.0;
  return eivtraj::simulate_toy(cfg).data;
}

inline std::vector<double> random_point(const eivtraj::Model& model, std::mt19937_64& rng,
                                        double sd = 0.5) {
  std::normal_distribution<double> n(0.0, sd);
  const Eigen::VectorXd base = model.initial_point();
  std::vector<double> u(model.dim());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = base[static_cast<Eigen::Index>(i)] + n(rng);
  return u;
}

// Fourth-order central finite differences of a scalar function.
inline std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, double h = 1e-4) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    auto at = [&](double step) {
      x[i] = xi + step;
      return f(x);
    };
    g[i] = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
    x[i] = xi;
  }
  return g;
}

inline bool gradient_close(double analytic, double fd, double rel = 1e-5, double abs = 1e-7) {
  return std::abs(analytic - fd) <= abs + rel * std::abs(fd);
}

}  // namespace fixtures
