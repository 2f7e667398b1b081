#pragma once

// Gaussian-process trend: squared-exponential plus constant kernel with a
// subset-of-regressors (Nystrom) low-rank approximation
//
//   C = K_gu K_uu^{-1} K_ug + sigma_y^2 I
//
// Every operation works through the m x m factors of K_uu and
// sigma_y^2 I + V V^T (V = L_uu^{-1} K_ug), so nothing of size G x G is ever
// formed and the cost per evaluation is O(G m^2).

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <span>
#include <vector>

namespace eivtraj::gp {

struct KernelParams {
  double se_amplitude = 1.0;     // outcome units
  double se_lengthscale = 120.0; // minutes
  double const_amplitude = 0.0;  // outcome units

  void validate() const;
};

/// Inducing locations, a strictly increasing subset of a patient's
/// observation times, plus the indices they were taken from.
struct InducingSet {
  std::vector<double> locations;
  std::vector<std::size_t> indices;
};

/// K[i,j] = s^2 exp(-(t1_i - t2_j)^2 / (2 ell^2)) + c^2.
Eigen::MatrixXd kernel(std::span<const double> t1, std::span<const double> t2,
                       const KernelParams& kp);

/// Deterministic "uniform" choice: the indices nearest to an even grid over
/// [0, G-1], deduplicated and padded with the lowest unused indices.
InducingSet select_inducing(std::span<const double> obs_times, std::size_t m);

inline constexpr double kInitialJitter = 1e-10;
inline constexpr double kMaxJitter = 1e-2;

/// Factorized low-rank covariance for one set of observation times.
class LowRankCovariance {
 public:
  LowRankCovariance(std::span<const double> obs_times, const InducingSet& inducing,
                    const KernelParams& kp, double sigma_y);

  std::size_t size() const { return static_cast<std::size_t>(kgu_.rows()); }
  std::size_t rank() const { return static_cast<std::size_t>(kgu_.cols()); }
  double jitter() const { return jitter_; }

  /// C^{-1} x.
  Eigen::VectorXd solve(const Eigen::VectorXd& x) const;
  double log_det() const;
  /// log N(residual; 0, C).
  double log_density(const Eigen::VectorXd& residual) const;
  /// diag(C^{-1}).
  Eigen::VectorXd inverse_diagonal() const;

  struct Gradient {
    double value = 0.0;
    Eigen::VectorXd d_residual;
    double d_se_amplitude = 0.0;
    double d_se_lengthscale = 0.0;
    double d_const_amplitude = 0.0;
    double d_sigma_y = 0.0;
  };
  /// log N(residual; 0, C) and its gradient w.r.t. the residual and every
  /// kernel hyperparameter (jitter held fixed).
  Gradient log_density_gradient(const Eigen::VectorXd& residual) const;

  /// Posterior mean and variance of the trend at query times, with the
  /// training covariance replaced by C. Variance is clamped at zero.
  void predict(std::span<const double> query, const Eigen::VectorXd& residual,
               std::vector<double>& mean, std::vector<double>& var) const;

 private:
  std::vector<double> times_;
  std::vector<double> inducing_;
  KernelParams kp_;
  double sigma2_;
  double jitter_ = kInitialJitter;
  Eigen::MatrixXd e_gu_;                // squared-exponential parts
  Eigen::MatrixXd e_uu_;
  Eigen::MatrixXd kgu_;                 // G x m
  Eigen::MatrixXd kuu_;                 // m x m, jittered
  Eigen::LLT<Eigen::MatrixXd> kuu_llt_;
  Eigen::MatrixXd v_;                   // m x G
  Eigen::LLT<Eigen::MatrixXd> a_llt_;   // sigma^2 I + V V^T
};

double lowrank_marginal_loglik(std::span<const double> residual, std::span<const double> obs_times,
                               const InducingSet& inducing, const KernelParams& kp,
                               double sigma_y);

struct TrendPosterior {
  std::vector<double> mean;
  std::vector<double> var;
};

TrendPosterior trend_posterior(std::span<const double> residual,
                               std::span<const double> obs_times,
                               std::span<const double> query_times,
                               const InducingSet& inducing, const KernelParams& kp,
                               double sigma_y);

}  // namespace eivtraj::gp
