#include "eivtraj/gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "eivtraj/types.hpp"

namespace eivtraj::gp {

namespace {

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

// Squared-exponential part exp(-d^2 / (2 ell^2)) for every pair.
Eigen::MatrixXd se_part(std::span<const double> t1, std::span<const double> t2, double ell) {
  Eigen::MatrixXd e(t1.size(), t2.size());
  const double inv = 1.0 / (2.0 * ell * ell);
  for (std::size_t j = 0; j < t2.size(); ++j) {
    for (std::size_t i = 0; i < t1.size(); ++i) {
      const double d = t1[i] - t2[j];
      e(i, j) = std::exp(-d * d * inv);
    }
  }
  return e;
}

}  // namespace

void KernelParams::validate() const {
  if (!(se_amplitude > 0.0) || !(se_lengthscale > 0.0) || !(const_amplitude >= 0.0)) {
    throw DomainError("invalid kernel parameters");
  }
}

Eigen::MatrixXd kernel(std::span<const double> t1, std::span<const double> t2,
                       const KernelParams& kp) {
  Eigen::MatrixXd k = se_part(t1, t2, kp.se_lengthscale);
  k *= kp.se_amplitude * kp.se_amplitude;
  k.array() += kp.const_amplitude * kp.const_amplitude;
  return k;
}

InducingSet select_inducing(std::span<const double> obs_times, std::size_t m) {
  const std::size_t g = obs_times.size();
  if (m < 2 || m > g) {
    throw DomainError("inducing count " + std::to_string(m) + " outside [2, " +
                      std::to_string(g) + "]");
  }
  std::vector<std::size_t> idx;
  idx.reserve(m);
  // round(k (G-1) / (m-1)) with ties upward, in integer arithmetic
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t num = 2 * k * (g - 1) + (m - 1);
    idx.push_back(num / (2 * (m - 1)));
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  for (std::size_t i = 0; idx.size() < m && i < g; ++i) {
    if (!std::binary_search(idx.begin(), idx.end(), i)) {
      idx.insert(std::lower_bound(idx.begin(), idx.end(), i), i);
    }
  }
  InducingSet set;
  set.indices = idx;
  for (std::size_t i : idx) set.locations.push_back(obs_times[i]);
  return set;
}

LowRankCovariance::LowRankCovariance(std::span<const double> obs_times,
                                     const InducingSet& inducing, const KernelParams& kp,
                                     double sigma_y)
    : times_(obs_times.begin(), obs_times.end()),
      inducing_(inducing.locations),
      kp_(kp),
      sigma2_(sigma_y * sigma_y) {
  if (!(sigma_y > 0.0)) throw DomainError("sigma_y must be positive");
  const double s2 = kp_.se_amplitude * kp_.se_amplitude;
  const double c2 = kp_.const_amplitude * kp_.const_amplitude;
  e_gu_ = se_part(times_, inducing_, kp_.se_lengthscale);
  e_uu_ = se_part(inducing_, inducing_, kp_.se_lengthscale);
  kgu_ = (s2 * e_gu_).array() + c2;
  const Eigen::MatrixXd kuu = (s2 * e_uu_).array() + c2;
  const Eigen::Index m = kuu.rows();
  for (jitter_ = kInitialJitter; jitter_ <= kMaxJitter * 1.000001; jitter_ *= 10.0) {
    kuu_ = kuu;
    kuu_.diagonal().array() += jitter_;
    kuu_llt_.compute(kuu_);
    if (kuu_llt_.info() == Eigen::Success) break;
  }
  if (kuu_llt_.info() != Eigen::Success) {
    throw NumericalError("inducing covariance is not positive definite after jitter " +
                         std::to_string(kMaxJitter));
  }
  v_ = kuu_llt_.matrixL().solve(kgu_.transpose());
  Eigen::MatrixXd a = v_ * v_.transpose();
  a.diagonal().array() += sigma2_;
  a_llt_.compute(a);
  if (a_llt_.info() != Eigen::Success || m == 0) {
    throw NumericalError("low-rank inner covariance factorization failed");
  }
}

Eigen::VectorXd LowRankCovariance::solve(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd c = a_llt_.solve(v_ * x);
  return (x - v_.transpose() * c) / sigma2_;
}

double LowRankCovariance::log_det() const {
  const double g = static_cast<double>(size());
  const double m = static_cast<double>(rank());
  double ld = (g - m) * std::log(sigma2_);
  const auto& l = a_llt_.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i) ld += 2.0 * std::log(l(i, i));
  return ld;
}

double LowRankCovariance::log_density(const Eigen::VectorXd& r) const {
  const double quad = r.dot(solve(r));
  const double g = static_cast<double>(size());
  return -0.5 * (quad + log_det() + g * std::log(2.0 * std::numbers::pi));
}

Eigen::VectorXd LowRankCovariance::inverse_diagonal() const {
  const Eigen::MatrixXd w = a_llt_.matrixL().solve(v_);  // m x G
  return (1.0 - w.colwise().squaredNorm().transpose().array()) / sigma2_;
}

LowRankCovariance::Gradient LowRankCovariance::log_density_gradient(
    const Eigen::VectorXd& r) const {
  Gradient out;
  const Eigen::Index m = kuu_.rows();
  const double g = static_cast<double>(size());

  const Eigen::VectorXd alpha = solve(r);
  out.value = -0.5 * (r.dot(alpha) + log_det() + g * std::log(2.0 * std::numbers::pi));
  out.d_residual = -alpha;

  // a = K_uu^{-1} K_ug alpha
  const Eigen::VectorXd a = kuu_llt_.matrixU().solve(v_ * alpha);
  // L^{-1} and A^{-1}
  const Eigen::MatrixXd l_inv =
      kuu_llt_.matrixL().solve(Eigen::MatrixXd::Identity(m, m));
  const Eigen::MatrixXd a_inv = a_llt_.solve(Eigen::MatrixXd::Identity(m, m));
  // E = C^{-1} K_gu K_uu^{-1} = V^T A^{-1} L^{-1}
  const Eigen::MatrixXd e = v_.transpose() * (a_inv * l_inv);
  // K_uu^{-1} K_ug C^{-1} K_gu K_uu^{-1} = L^{-T} (I - sigma^2 A^{-1}) L^{-1}
  Eigen::MatrixXd inner = -sigma2_ * a_inv;
  inner.diagonal().array() += 1.0;
  const Eigen::MatrixXd pe = l_inv.transpose() * inner * l_inv;

  // d loglik = <W_gu, dK_gu> + <W_uu, dK_uu> + w_s2 dsigma^2
  const Eigen::MatrixXd w_gu = alpha * a.transpose() - e;
  const Eigen::MatrixXd w_uu = 0.5 * (pe - a * a.transpose());
  const double trace_cinv = (g - static_cast<double>(m)) / sigma2_ + a_inv.trace();
  const double w_s2 = 0.5 * (alpha.squaredNorm() - trace_cinv);

  const double s = kp_.se_amplitude;
  const double ell = kp_.se_lengthscale;
  const double c = kp_.const_amplitude;
  double sum_we = 0.0;
  double sum_wed = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < kgu_.rows(); ++i) {
      const double we = w_gu(i, j) * e_gu_(i, j);
      const double d = times_[i] - inducing_[j];
      sum_we += we;
      sum_wed += we * d * d;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      const double we = w_uu(i, j) * e_uu_(i, j);
      const double d = inducing_[i] - inducing_[j];
      sum_we += we;
      sum_wed += we * d * d;
    }
  }
  out.d_se_amplitude = 2.0 * s * sum_we;
  out.d_const_amplitude = 2.0 * c * (w_gu.sum() + w_uu.sum());
  out.d_se_lengthscale = s * s / (ell * ell * ell) * sum_wed;
  out.d_sigma_y = 2.0 * std::sqrt(sigma2_) * w_s2;
  return out;
}

void LowRankCovariance::predict(std::span<const double> query, const Eigen::VectorXd& r,
                                std::vector<double>& mean, std::vector<double>& var) const {
  const Eigen::MatrixXd kqt = kernel(query, times_, kp_);  // Q x G
  const Eigen::VectorXd alpha = solve(r);
  const Eigen::VectorXd mu = kqt * alpha;
  // diag(K_qt C^{-1} K_tq) = (rowsum(K_qt^2) - ||L_A^{-1} V K_tq||^2) / sigma^2
  const Eigen::MatrixXd w = a_llt_.matrixL().solve(v_ * kqt.transpose());  // m x Q
  const Eigen::VectorXd explained =
      (kqt.rowwise().squaredNorm() - w.colwise().squaredNorm().transpose()) / sigma2_;
  const double prior = kp_.se_amplitude * kp_.se_amplitude +
                       kp_.const_amplitude * kp_.const_amplitude;
  mean.assign(mu.data(), mu.data() + mu.size());
  var.resize(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    var[i] = std::max(0.0, prior - explained(static_cast<Eigen::Index>(i)));
  }
}

double lowrank_marginal_loglik(std::span<const double> residual, std::span<const double> obs_times,
                               const InducingSet& inducing, const KernelParams& kp,
                               double sigma_y) {
  if (residual.size() != obs_times.size()) {
    throw StructuralError("residual and observation times differ in length");
  }
  kp.validate();
  const LowRankCovariance cov(obs_times, inducing, kp, sigma_y);
  return cov.log_density(as_vector(residual));
}

TrendPosterior trend_posterior(std::span<const double> residual,
                               std::span<const double> obs_times,
                               std::span<const double> query_times,
                               const InducingSet& inducing, const KernelParams& kp,
                               double sigma_y) {
  if (residual.size() != obs_times.size()) {
    throw StructuralError("residual and observation times differ in length");
  }
  kp.validate();
  const LowRankCovariance cov(obs_times, inducing, kp, sigma_y);
  TrendPosterior out;
  cov.predict(query_times, as_vector(residual), out.mean, out.var);
  return out;
}

}  // namespace eivtraj::gp
