#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eivtraj/fit.hpp"
#include "eivtraj/types.hpp"

namespace eivtraj {

inline constexpr double kWindowBefore = 60.0;   // minutes before a meal
inline constexpr double kWindowAfter = 180.0;   // minutes after a meal
inline constexpr double kExclusionThreshold = 0.15;  // baseline M2

/// true where obs time lies in [t - before, t + after] of some meal.
std::vector<bool> meal_window_mask(std::span<const double> times,
                                   const std::vector<TreatmentEvent>& events,
                                   double before = kWindowBefore, double after = kWindowAfter);

enum class Split { Train, Test };

struct PatientMetrics {
  std::string id;
  double m1 = 0.0;
  double m2 = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;
  double m5 = 0.0;
  bool included = true;
};

/// Per-patient M1 and M2 over training points inside meal windows. NaN for
/// a patient with zero outcome variance or no windowed points.
std::vector<std::pair<double, double>> m1_m2_per_patient(
    const std::vector<PatientTrajectory>& fit, const std::vector<PatientData>& data);

/// Means over patients with a defined value.
std::pair<double, double> metric_m1_m2(const std::vector<PatientTrajectory>& fit,
                                       const std::vector<PatientData>& data);

/// Per-patient MSE of the posterior-mean total: every training point for
/// Split::Train, windowed test points for Split::Test (NaN when empty).
std::vector<double> mse_per_patient(const std::vector<PatientTrajectory>& fit,
                                    const std::vector<PatientData>& data, Split which);

/// Mean of the per-patient MSE over included patients (all when empty).
double metric_mse(const std::vector<PatientTrajectory>& fit, const std::vector<PatientData>& data,
                  Split which, const std::vector<bool>& included = {});

std::vector<double> m5_per_patient(const std::vector<PatientTrajectory>& fit,
                                   const std::vector<PatientData>& data);

/// Mean over patients of |Var(responses) - Var(y)| in test windows.
double metric_m5(const std::vector<PatientTrajectory>& fit, const std::vector<PatientData>& data);

/// Patients kept for MSE metrics: baseline M2 >= threshold.
std::vector<bool> exclusion_mask(std::span<const double> baseline_m2,
                                 double threshold = kExclusionThreshold);

/// Cosine of the angle between two vectors; NaN if either has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Cosine similarity of the concatenated height coefficients.
double cosine_similarity_heights(const std::vector<ResponseCoefficients>& estimate,
                                 const std::vector<ResponseCoefficients>& truth);

struct MannWhitney {
  double u = 0.0;            // #(a > b) + 0.5 #(a == b)
  double p_one_sided = 0.5;  // P(U <= u) under the null: small when a < b
  bool exact = false;
  bool degenerate = false;
};

inline constexpr std::size_t kExactLimit = 12;

MannWhitney mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct ParetoFit {
  double k = 0.0;
  double sigma = 0.0;
};

/// Zhang-Stephens posterior-mean estimate for exceedances x (ascending, > 0).
ParetoFit gpd_fit(std::span<const double> x);

/// Pareto-smoothed log weights (normalized) for one set of log ratios.
struct SmoothedWeights {
  std::vector<double> log_weights;
  double k = 0.0;
};
SmoothedWeights psis_smooth(std::span<const double> log_ratios);

inline constexpr double kParetoKThreshold = 0.7;

struct LooResult {
  double elpd_loo = 0.0;
  double p_loo = 0.0;
  double se_loo = 0.0;
  double looic = 0.0;  // -2 elpd_loo
  double lpd = 0.0;
  std::vector<double> pointwise_elpd;
  std::vector<double> pareto_k;
  std::size_t bad_k = 0;          // k above the threshold
  std::vector<std::size_t> dropped;  // columns with non-finite values
};

/// PSIS-LOO of a draws x observations log-likelihood matrix. Throws
/// DomainError for fewer than 100 draws.
LooResult psis_loo(const Eigen::MatrixXd& loglik);

struct MetricReport {
  double m1 = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0, m5 = 0.0;
  std::vector<PatientMetrics> patients;
  std::vector<std::pair<std::string, std::string>> excluded;  // id, reason
  LooResult loo;
  std::optional<MannWhitney> u_test;  // candidate M4 vs baseline M4
};

/// Full report. `baseline` (trajectories of a baseline fit on the same data)
/// drives exclusion and the U-test; without it the fit's own M2 is used.
MetricReport evaluate(const std::vector<PatientTrajectory>& fit,
                      const std::vector<PatientData>& data, const Eigen::MatrixXd& loglik,
                      const std::vector<PatientTrajectory>* baseline = nullptr);

}  // namespace eivtraj
