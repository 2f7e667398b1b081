#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eivtraj/draws.hpp"
#include "eivtraj/gp.hpp"
#include "eivtraj/types.hpp"

namespace eivtraj {

enum class SimProtocol { Toy, FromFit, Generative };
enum class TrendKind { Linear, GP };

std::string to_string(SimProtocol p);
SimProtocol protocol_from_string(const std::string& s);
std::string to_string(TrendKind t);
TrendKind trend_from_string(const std::string& s);

struct SimConfig {
  SimProtocol protocol = SimProtocol::Toy;
  std::size_t n_patients = 1;          // FromFit: 0 takes every template patient
  std::size_t meals_per_patient = 20;
  std::size_t covariate_dim = 2;
  double perturb_fraction = 0.5;
  double perturb_sd = 0.2;
  double response_scale = 1.0;
  TrendKind trend = TrendKind::Linear;
  std::uint64_t seed = 1;

  // observation grid and split
  double days = 3.0;
  double cadence = 15.0;     // minutes
  double train_days = 2.0;   // observations before train_days * 1440 train

  // toy protocol
  double trend_slope = 0.001;  // per minute
  double trend_intercept = 0.0;
  double noise_sd = 0.1;
  double toy_shift_mean = 1.0;  // additive covariate error ~ N(mean, perturb_sd^2)
  double covariate_low = 0.5;
  double covariate_high = 2.0;

  // reporting-time error: observed = true + time_bias + N(0, time_jitter_sd^2)
  double time_bias = 0.0;
  double time_jitter_sd = 0.0;

  bool use_posterior_mean = true;  // FromFit: otherwise one random draw

  void validate() const;
};

struct PatientTruth {
  std::string id;
  ResponseCoefficients coef;  // heights already scaled by response_scale
  gp::KernelParams kernel;
  double noise_sd = 0.0;
  std::vector<double> true_times;
  std::vector<std::vector<double>> true_covariates;
  std::vector<bool> perturbed;
  std::vector<double> delta;  // multiplicative amount error (1 when unperturbed)
  std::vector<std::vector<double>> additive_error;  // toy protocol only
  std::vector<double> time_shift;  // observed minus true time
  std::vector<double> trend;       // at obs_times
  std::vector<double> response;    // at obs_times
};

struct GroundTruth {
  SimProtocol protocol = SimProtocol::Toy;
  std::vector<PatientTruth> patients;
};

struct SimResult {
  std::vector<PatientData> data;
  GroundTruth truth;
};

/// Linear trend plus responses; a seeded random fraction of meals get an
/// additive N(toy_shift_mean, perturb_sd^2) term on every covariate.
SimResult simulate_toy(const SimConfig& cfg, const ModelSpec& spec = {});

/// Every quantity drawn from the model's priors; amounts perturbed
/// multiplicatively as in simulate_from_fit.
SimResult simulate_generative(const SimConfig& cfg, const ModelSpec& spec = {});

/// Replays a fitted model. `posterior` holds natural-scale draws named as in
/// the model layout ("beta_h[n][p]", "se_amplitude[n]", "sigma_y", ...);
/// meal times and covariates of `templ` become the true inputs. Exactly
/// round(perturb_fraction * M_n) meals per patient are perturbed by
/// LogNormal(0, perturb_sd^2).
SimResult simulate_from_fit(const PosteriorDraws& posterior, const std::vector<PatientData>& templ,
                            const SimConfig& cfg, const ModelSpec& spec = {});

/// Evenly spaced observation times over cfg.days at cfg.cadence.
std::vector<double> observation_grid(const SimConfig& cfg);

}  // namespace eivtraj
