#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace eivtraj {

// Error categories. Each maps onto one CLI exit code.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct StructuralError : std::logic_error {
  using std::logic_error::logic_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A single reported treatment (meal): when it was reported and what it
/// contained. Covariates are non-negative amounts, one per nutrient.
struct TreatmentEvent {
  double observed_time = 0.0;  // minutes from study start
  std::vector<double> covariates;
};

/// One individual's outcome series and treatment log.
struct PatientData {
  std::string id;
  std::vector<double> outcome;
  std::vector<double> obs_times;  // minutes, strictly increasing
  std::vector<TreatmentEvent> events;
  std::vector<bool> train_mask;   // true = training point

  std::size_t size() const { return outcome.size(); }
  std::size_t covariate_dim() const {
    return events.empty() ? 0 : events.front().covariates.size();
  }
  std::size_t train_count() const;

  /// Throws DomainError describing the first violated invariant.
  void validate() const;
};

/// Covariate dimension shared by every event in `data`, or 0 if no events.
/// Throws DomainError if patients disagree.
std::size_t covariate_dim(const std::vector<PatientData>& data);

struct ResponseCoefficients {
  std::vector<double> beta_h;  // outcome units per covariate unit
  std::vector<double> beta_l;  // length-scale coefficients
};

struct HyperCoefficients {
  std::vector<double> beta_h_tilde;
  std::vector<double> beta_l_tilde;
  std::vector<double> sigma_h;
  std::vector<double> sigma_l;
};

/// Latent measurement-error corrections for one patient. Empty vectors are
/// read as identically zero.
struct MeasurementLatents {
  std::vector<double> time_offsets;       // epsilon per meal, minutes
  double report_bias = 0.0;               // d_n, minutes
  std::vector<double> log_amount_errors;  // log delta per meal
};

enum class Variant { Ind, Hier, HierTime, HierTimeCov };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

inline bool has_hierarchy(Variant v) { return v != Variant::Ind; }
inline bool has_time_error(Variant v) {
  return v == Variant::HierTime || v == Variant::HierTimeCov;
}
inline bool has_covariate_error(Variant v) { return v == Variant::HierTimeCov; }

/// Fixed hyperparameters of the model. Scales of half-normal priors are the
/// standard deviation of the underlying normal.
struct ModelSpec {
  Variant variant = Variant::HierTimeCov;

  // measurement model (fixed, not sampled)
  double sigma_x = 0.1;   // SD of log delta
  double sigma_t = 10.0;  // per-meal time jitter SD, minutes
  double sigma_d = 20.0;  // per-patient reporting bias SD, minutes

  // priors
  double sigma_y_scale = 1.0;
  double sigma_h_scale = 0.5;
  double sigma_l_scale = 0.5;
  double beta_tilde_scale = 1.0;
  double independent_beta_scale = 1.0;  // Ind variant: beta ~ N(0, scale^2)
  double se_amplitude_scale = 1.0;
  double const_amplitude_scale = 1.0;
  double se_lengthscale_log_mean = 4.787491742782046;  // log(120)
  double se_lengthscale_log_sd = 0.3;

  // response length-scale link: l = floor + unit * softplus(beta_l . x)
  double length_scale_floor = 5.0;  // minutes
  double length_scale_unit = 15.0;  // minutes

  // hierarchical coefficients sampled as offsets z (beta = tilde + sigma * z) or directly
  bool noncentered = true;

  std::size_t inducing_count = 16;

  void validate() const;
};

}  // namespace eivtraj
