#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "eivtraj/diagnostics.hpp"
#include "eivtraj/eval.hpp"
#include "eivtraj/fit.hpp"
#include "eivtraj/nuts.hpp"
#include "eivtraj/simulate.hpp"
#include "eivtraj/types.hpp"

namespace eivtraj::io {

using json = nlohmann::json;

inline const std::string kGlucoseHeader = "patient_id,time_min,glucose";
inline const std::string kMealsHeader = "patient_id,time_min,starch,sugar,fiber,fat,protein";
inline const std::vector<std::string> kNutrients = {"starch", "sugar", "fiber", "fat", "protein"};

inline constexpr double kMinutesPerDay = 1440.0;

/// Train mask from the day rule: day = floor(t / 1440), days below
/// `train_days` train.
std::vector<bool> day_split(const std::vector<double>& times, double train_days = 2.0);

/// Reads the glucose and meals files. Times become minutes from each
/// patient's first glucose observation. The meals file carries either the
/// five nutrient columns or generic covariate columns x0, x1, ...
/// Throws InputError naming the offending row.
std::vector<PatientData> ingest(const std::string& glucose_path, const std::string& meals_path,
                                double train_days = 2.0);

void write_glucose(const std::string& path, const std::vector<PatientData>& data);
/// Nutrient header for five covariates, x0..x{P-1} otherwise.
void write_meals(const std::string& path, const std::vector<PatientData>& data);

struct Standardization {
  bool outcome = true;
  bool covariates = true;
  std::vector<std::string> ids;
  std::vector<double> outcome_center;  // per patient
  double outcome_scale = 1.0;          // pooled training SD
  std::vector<double> covariate_scale; // per covariate
};

/// Estimated from training points and training-period meals.
Standardization fit_standardization(const std::vector<PatientData>& data, bool outcome = true,
                                    bool covariates = true);
std::vector<PatientData> standardize(std::vector<PatientData> data, const Standardization& s);
/// Maps trajectories back to the original outcome units.
std::vector<PatientTrajectory> destandardize(std::vector<PatientTrajectory> tr,
                                             const std::vector<PatientData>& original,
                                             const Standardization& s);

/// chain,draw,lp__,diverging,tree_depth followed by one column per
/// parameter, every value printed with 17 significant digits.
void write_draws(const std::string& path, const PosteriorDraws& draws);
PosteriorDraws read_draws(const std::string& path);

void write_trajectories(const std::string& path, const std::vector<PatientTrajectory>& tr,
                        bool test_only = false);
/// Latent columns follow the variant: time shift for time variants, log
/// delta for the covariate variant.
void write_meal_latents(const std::string& path, const std::vector<MealLatentSummary>& rows,
                        Variant variant);
void write_pareto_k(const std::string& path, const LooResult& loo);

json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const json& j, ModelSpec base = {});
json to_json(const SamplerConfig& cfg);
SamplerConfig sampler_config_from_json(const json& j, SamplerConfig base = {});
json to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const json& j, SimConfig base = {});
json to_json(const Standardization& s);
Standardization standardization_from_json(const json& j);
json to_json(const std::vector<ParamDiagnostics>& diag);
json to_json(const GroundTruth& truth);
json to_json(const LooResult& loo);
json to_json(const MetricReport& rep);

/// NaN and infinities become null.
json number(double v);

void write_json(const std::string& path, const json& j);
json read_json(const std::string& path);

}  // namespace eivtraj::io
