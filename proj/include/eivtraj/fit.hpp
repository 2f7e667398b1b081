#pragma once

// End-to-end fitting: sample the model posterior, convert draws to the
// natural parameter scale, and derive trajectories, meal-latent summaries
// and pointwise log-likelihoods from the draws.

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eivtraj/diagnostics.hpp"
#include "eivtraj/draws.hpp"
#include "eivtraj/model.hpp"
#include "eivtraj/nuts.hpp"

namespace eivtraj {

struct FitResult {
  std::shared_ptr<const Model> model;
  PosteriorDraws raw;    // unconstrained, names from the layout
  PosteriorDraws draws;  // natural scale (exp on log blocks)
  std::vector<ParamDiagnostics> summary;  // computed on `draws`
  double max_rhat = 0.0;
};

/// Density factory over a model; every evaluator owns its own tape.
DensityFactory density_factory(std::shared_ptr<const Model> model);

/// Converts unconstrained draws to the natural scale.
PosteriorDraws constrain(const Model& model, const PosteriorDraws& raw);

FitResult fit_model(std::vector<PatientData> data, const ModelSpec& spec,
                    const SamplerConfig& config);

/// Posterior summary of the trajectory at every observation time of one
/// patient. Bands are mean -/+ 1.645 sd of a moment-matched normal for the
/// noise-free total (trend plus responses).
struct PatientTrajectory {
  std::string id;
  std::vector<double> times;
  std::vector<bool> train_mask;
  std::vector<double> outcome;
  std::vector<double> trend_mean;
  std::vector<double> trend_sd;
  std::vector<double> response_mean;
  std::vector<double> total_mean;
  std::vector<double> total_sd;
  std::vector<double> lower;  // 5%
  std::vector<double> upper;  // 95%
};

/// Evenly spaced subset of at most `max_count` of `total` draw indices.
std::vector<std::size_t> thin_indices(std::size_t total, std::size_t max_count);

std::vector<PatientTrajectory> posterior_trajectories(const Model& model,
                                                      const PosteriorDraws& raw,
                                                      std::size_t max_draws = 200);

struct MealLatentSummary {
  std::string patient_id;
  std::size_t meal = 0;
  double observed_time = 0.0;
  bool has_latent = false;
  double time_shift_mean = 0.0;  // d_n + eps, minutes
  double time_shift_sd = 0.0;
  double time_offset_mean = 0.0; // eps only
  double log_delta_mean = 0.0;
  double log_delta_sd = 0.0;
  double estimated_time = 0.0;   // observed time minus the mean shift
};

std::vector<MealLatentSummary> meal_latents(const Model& model, const PosteriorDraws& raw);

/// Posterior-mean response coefficients per patient.
std::vector<ResponseCoefficients> posterior_mean_coefficients(const Model& model,
                                                              const PosteriorDraws& raw);

/// Leave-one-out conditional log density of every training observation
/// given the others, per draw (rows = draws, columns = observations in
/// patient order).
Eigen::MatrixXd pointwise_loglik(const Model& model, const PosteriorDraws& raw,
                                 std::size_t max_draws = 1000);

}  // namespace eivtraj
