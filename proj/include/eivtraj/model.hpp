#pragma once

// Joint log-posterior of the treatment-response model.
//
// Per patient n the outcome at training times is
//     y = T + sum_m R_m + e,   T ~ GP(0, k),  e ~ N(0, sigma_y^2)
// with the trend marginalized analytically (gp::LowRankCovariance). Each
// meal contributes a bell-shaped response whose height and length-scale are
// linear/softplus functions of the true covariates x* = x_obs / delta, timed
// at t* = t_obs - d_n - eps_m. Which latents exist depends on the variant.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eivtraj/ad.hpp"
#include "eivtraj/gp.hpp"
#include "eivtraj/params.hpp"
#include "eivtraj/response.hpp"
#include "eivtraj/types.hpp"

namespace eivtraj {

/// True timing and shape of one meal response.
struct MealShape {
  double time = 0.0;  // t*
  double height = 0.0;
  double length = 1.0;
};

/// Decoded (constrained) quantities for one patient at one parameter value.
struct PatientState {
  ResponseCoefficients coef;
  gp::KernelParams kernel;
  MeasurementLatents latents;  // sized to the patient's full meal list
  double sigma_y = 1.0;
};

class Model {
 public:
  Model(std::vector<PatientData> data, ModelSpec spec);

  const ParamLayout& layout() const { return layout_; }
  const std::vector<PatientData>& data() const { return data_; }
  const ModelSpec& spec() const { return spec_; }
  std::size_t dim() const { return layout_.dim(); }
  std::size_t covariate_dim() const { return p_; }

  /// Meals of patient n that carry measurement latents are those reported no
  /// later than the last training observation. latent_index maps each meal
  /// to its slot in the latent blocks, or -1.
  std::size_t latent_meal_count(std::size_t n) const { return patients_[n].latent_meals; }
  std::span<const int> latent_index(std::size_t n) const { return patients_[n].latent_index; }
  const gp::InducingSet& inducing(std::size_t n) const { return patients_[n].inducing; }
  std::span<const double> train_times(std::size_t n) const { return patients_[n].times; }
  std::span<const double> train_outcome(std::size_t n) const { return patients_[n].y; }

  /// Log posterior over the unconstrained vector, including the log-Jacobian
  /// of every log transform. Returns -inf on numerical failure.
  double log_density(std::span<const double> unconstrained) const;

  /// Same value; fills `grad` by one reverse sweep over `tape`. On a
  /// non-finite result returns -inf and zeroes `grad`.
  double log_density_gradient(std::span<const double> unconstrained, std::span<double> grad,
                              ad::Tape& tape) const;

  /// Prior-centred starting point: zeros except the SE length-scale at its
  /// prior median.
  Eigen::VectorXd initial_point() const;

  /// Natural-scale values: exp on log blocks and, for hierarchical variants,
  /// the coefficients beta = tilde + sigma * z in place of the offsets z.
  Eigen::VectorXd constrain(std::span<const double> unconstrained) const;
  /// Names matching constrain(): "beta_h[n][p]" instead of "beta_h_z[n][p]".
  std::vector<std::string> constrained_names() const;

  PatientState patient_state(std::span<const double> unconstrained, std::size_t n) const;
  std::vector<MealShape> meal_shapes(std::size_t n, const PatientState& state) const;

  /// Marginal log-likelihood of patient n's training residual.
  double patient_log_likelihood(std::span<const double> unconstrained, std::size_t n) const;

 private:
  bool offsets() const { return has_hierarchy(spec_.variant) && spec_.noncentered; }
  struct PatientCache {
    std::vector<double> times;  // training times
    std::vector<double> y;      // training outcomes
    gp::InducingSet inducing;
    std::size_t latent_meals = 0;
    std::vector<int> latent_index;
    std::size_t beta_h = 0, beta_l = 0;
    std::size_t se_amplitude = 0, se_lengthscale = 0, const_amplitude = 0;
    std::size_t report_bias = 0, time_shift = 0, log_delta = 0;
  };

  template <class T>
  T evaluate(std::span<const T> u) const;

  template <class T>
  T patient_term(std::size_t n, std::span<const T> u, const T& sigma_y) const;

  std::vector<PatientData> data_;
  ModelSpec spec_;
  std::size_t p_ = 0;
  ParamLayout layout_;
  std::size_t sigma_y_ = 0;
  std::size_t beta_h_tilde_ = 0, beta_l_tilde_ = 0, sigma_h_ = 0, sigma_l_ = 0;
  std::vector<PatientCache> patients_;
};

/// Sum of all meal responses at the patient's observation times. Latents
/// that the variant does not model are ignored.
std::vector<double> sum_responses(const PatientData& patient, const MeasurementLatents& latents,
                                  const ResponseCoefficients& coef, const ModelSpec& spec);

/// Response sum at arbitrary times.
std::vector<double> sum_responses_at(std::span<const MealShape> meals,
                                     std::span<const double> times);

/// Convenience wrapper: builds a Model and evaluates its log density.
/// Throws StructuralError if the layout does not match.
double log_posterior(const ParamVector& params, const std::vector<PatientData>& data,
                     const ModelSpec& spec);

struct ValueAndGradient {
  double value = 0.0;
  Eigen::VectorXd grad;
  bool divergent = false;
};

ValueAndGradient grad_log_posterior(const ParamVector& params,
                                    const std::vector<PatientData>& data,
                                    const ModelSpec& spec);

}  // namespace eivtraj
