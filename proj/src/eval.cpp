#include "eivtraj/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

namespace eivtraj {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double variance(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  const double n = static_cast<double>(v.size());
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return ss / n;
}

double mean_defined(const std::vector<double>& v, const std::vector<bool>& include = {}) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!include.empty() && !include[i]) continue;
    if (std::isnan(v[i])) continue;
    s += v[i];
    ++n;
  }
  return n ? s / static_cast<double>(n) : kNaN;
}

void check_pairing(const std::vector<PatientTrajectory>& fit, const std::vector<PatientData>& data) {
  if (fit.size() != data.size()) throw StructuralError("fit and data cover different patients");
  for (std::size_t n = 0; n < fit.size(); ++n) {
    if (fit[n].times.size() != data[n].size() || fit[n].id != data[n].id) {
      throw StructuralError("fit and data disagree for patient '" + data[n].id + "'");
    }
  }
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

double gpd_quantile(double p, double k, double sigma) {
  if (k == 0.0) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

}  // namespace

std::vector<bool> meal_window_mask(std::span<const double> times,
                                   const std::vector<TreatmentEvent>& events, double before,
                                   double after) {
  std::vector<bool> mask(times.size(), false);
  for (const auto& ev : events) {
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] >= ev.observed_time - before && times[i] <= ev.observed_time + after) {
        mask[i] = true;
      }
    }
  }
  return mask;
}

std::vector<std::pair<double, double>> m1_m2_per_patient(
    const std::vector<PatientTrajectory>& fit, const std::vector<PatientData>& data) {
  check_pairing(fit, data);
  std::vector<std::pair<double, double>> out;
  for (std::size_t n = 0; n < fit.size(); ++n) {
    const auto& tr = fit[n];
    const auto window = meal_window_mask(tr.times, data[n].events);
    std::vector<double> y, trend, total;
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      if (!tr.train_mask[i] || !window[i]) continue;
      y.push_back(tr.outcome[i]);
      trend.push_back(tr.trend_mean[i]);
      total.push_back(tr.total_mean[i]);
    }
    const double vy = variance(y);
    if (!(vy > 0.0)) {
      out.emplace_back(kNaN, kNaN);
      continue;
    }
    const double m1 = variance(trend) / vy;
    out.emplace_back(m1, variance(total) / vy - m1);
  }
  return out;
}

std::pair<double, double> metric_m1_m2(const std::vector<PatientTrajectory>& fit,
                                       const std::vector<PatientData>& data) {
  const auto per = m1_m2_per_patient(fit, data);
  std::vector<double> a, b;
  for (const auto& [m1, m2] : per) {
    a.push_back(m1);
    b.push_back(m2);
  }
  return {mean_defined(a), mean_defined(b)};
}

std::vector<double> mse_per_patient(const std::vector<PatientTrajectory>& fit,
                                    const std::vector<PatientData>& data, Split which) {
  check_pairing(fit, data);
  std::vector<double> out;
  for (std::size_t n = 0; n < fit.size(); ++n) {
    const auto& tr = fit[n];
    const auto window = meal_window_mask(tr.times, data[n].events);
    double ss = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      const bool use = which == Split::Train ? tr.train_mask[i] : (!tr.train_mask[i] && window[i]);
      if (!use) continue;
      const double e = tr.total_mean[i] - tr.outcome[i];
      ss += e * e;
      ++count;
    }
    out.push_back(count ? ss / static_cast<double>(count) : kNaN);
  }
  return out;
}

double metric_mse(const std::vector<PatientTrajectory>& fit, const std::vector<PatientData>& data,
                  Split which, const std::vector<bool>& included) {
  return mean_defined(mse_per_patient(fit, data, which), included);
}

std::vector<double> m5_per_patient(const std::vector<PatientTrajectory>& fit,
                                   const std::vector<PatientData>& data) {
  check_pairing(fit, data);
  std::vector<double> out;
  for (std::size_t n = 0; n < fit.size(); ++n) {
    const auto& tr = fit[n];
    const auto window = meal_window_mask(tr.times, data[n].events);
    std::vector<double> y, resp;
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      if (tr.train_mask[i] || !window[i]) continue;
      y.push_back(tr.outcome[i]);
      resp.push_back(tr.response_mean[i]);
    }
    out.push_back(y.empty() ? kNaN : std::abs(variance(resp) - variance(y)));
  }
  return out;
}

double metric_m5(const std::vector<PatientTrajectory>& fit, const std::vector<PatientData>& data) {
  return mean_defined(m5_per_patient(fit, data));
}

std::vector<bool> exclusion_mask(std::span<const double> baseline_m2, double threshold) {
  std::vector<bool> keep;
  for (double m2 : baseline_m2) keep.push_back(!(m2 < threshold));
  return keep;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("cosine similarity of vectors of unequal length");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return kNaN;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

double cosine_similarity_heights(const std::vector<ResponseCoefficients>& estimate,
                                 const std::vector<ResponseCoefficients>& truth) {
  if (estimate.size() != truth.size()) throw StructuralError("patient counts differ");
  std::vector<double> a, b;
  for (std::size_t n = 0; n < estimate.size(); ++n) {
    a.insert(a.end(), estimate[n].beta_h.begin(), estimate[n].beta_h.end());
    b.insert(b.end(), truth[n].beta_h.begin(), truth[n].beta_h.end());
  }
  return cosine_similarity(a, b);
}

MannWhitney mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("Mann-Whitney test needs two non-empty samples");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  MannWhitney out;
  for (double x : a)
    for (double y : b) out.u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);

  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t i = 0; i < na; ++i) pooled.emplace_back(a[i], i);
  for (std::size_t j = 0; j < nb; ++j) pooled.emplace_back(b[j], na + j);
  std::sort(pooled.begin(), pooled.end());
  std::vector<long> rank2(n);  // doubled midranks
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[j + 1].first == pooled[i].first) ++j;
    for (std::size_t k = i; k <= j; ++k) rank2[pooled[k].second] = static_cast<long>(i + j + 2);
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  if (pooled.front().first == pooled.back().first) {
    out.p_one_sided = 0.5;
    out.degenerate = true;
    return out;
  }

  if (n <= kExactLimit) {
    // Null distribution of the doubled rank sum of a over all subsets.
    long max_sum = 0;
    for (long r : rank2) max_sum += r;
    std::vector<std::vector<double>> ways(na + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<std::size_t>(rank2[i]);
      for (std::size_t k = std::min(i + 1, na); k >= 1; --k) {
        for (auto s = static_cast<std::size_t>(max_sum); s >= r; --s) ways[k][s] += ways[k - 1][s - r];
      }
    }
    long observed = 0;
    for (std::size_t i = 0; i < na; ++i) observed += rank2[i];
    double below = 0.0, total = 0.0;
    for (std::size_t s = 0; s < ways[na].size(); ++s) {
      total += ways[na][s];
      if (static_cast<long>(s) <= observed) below += ways[na][s];
    }
    out.p_one_sided = below / total;
    out.exact = true;
    return out;
  }

  const double dna = static_cast<double>(na), dnb = static_cast<double>(nb), dn = static_cast<double>(n);
  const double mu = dna * dnb / 2.0;
  const double var = dna * dnb / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  const double z = (out.u - mu + 0.5) / std::sqrt(var);
  out.p_one_sided = boost::math::cdf(boost::math::normal_distribution<double>(), z);
  return out;
}

ParetoFit gpd_fit(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) throw DomainError("generalized Pareto fit needs at least two points");
  const double prior = 3.0;
  const std::size_t m = 30 + static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const double xstar = x[static_cast<std::size_t>(std::floor(static_cast<double>(n) / 4.0 + 0.5)) - 1];
  std::vector<double> theta(m), ltheta(m);
  const double dn = static_cast<double>(n);
  for (std::size_t j = 0; j < m; ++j) {
    theta[j] = 1.0 / x[n - 1] +
               (1.0 - std::sqrt(static_cast<double>(m) / (static_cast<double>(j + 1) - 0.5))) / prior / xstar;
    const double b = -theta[j];
    double k = 0.0;
    for (double v : x) k += std::log1p(b * v);
    k /= dn;
    ltheta[j] = dn * (std::log(b / k) - k - 1.0);
  }
  const double lmax = *std::max_element(ltheta.begin(), ltheta.end());
  double wsum = 0.0;
  for (double l : ltheta) wsum += std::exp(l - lmax);
  double theta_hat = 0.0;
  for (std::size_t j = 0; j < m; ++j) theta_hat += theta[j] * std::exp(ltheta[j] - lmax) / wsum;
  double k = 0.0;
  for (double v : x) k += std::log1p(-theta_hat * v);
  k /= dn;
  ParetoFit fit;
  fit.sigma = -k / theta_hat;
  fit.k = (k * dn + 0.5 * 10.0) / (dn + 10.0);
  return fit;
}

SmoothedWeights psis_smooth(std::span<const double> log_ratios) {
  const std::size_t s = log_ratios.size();
  Eigen::VectorXd lw = Eigen::Map<const Eigen::VectorXd>(log_ratios.data(), static_cast<Eigen::Index>(s));
  lw.array() -= lw.maxCoeff();
  SmoothedWeights out;
  const auto tail_len = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(s)));
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return lw[i] < lw[j]; });

  if (tail_len < 5 || tail_len >= s) {
    out.k = std::numeric_limits<double>::infinity();
  } else {
    const double cutoff = lw[order[s - tail_len - 1]];
    const double exp_cut = std::exp(cutoff);
    std::vector<double> exceed;
    for (std::size_t i = s - tail_len; i < s; ++i) exceed.push_back(std::exp(lw[order[i]]) - exp_cut);
    if (exceed.back() <= 0.0 || exceed.front() == exceed.back()) {
      out.k = kNaN;  // flat tail: nothing to fit
    } else {
      for (double& e : exceed) e = std::max(e, std::numeric_limits<double>::min());
      const ParetoFit fit = gpd_fit(exceed);
      out.k = fit.k;
      if (std::isfinite(fit.k)) {
        for (std::size_t i = 0; i < tail_len; ++i) {
          const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(tail_len);
          const double v = gpd_quantile(p, fit.k, fit.sigma) + exp_cut;
          lw[order[s - tail_len + i]] = std::min(std::log(v), 0.0);
        }
      }
    }
  }
  const double log_s = std::log(static_cast<double>(s));
  const double trunc = 0.75 * log_s - log_s + log_sum_exp(lw);
  lw = lw.cwiseMin(trunc);
  lw.array() -= log_sum_exp(lw);
  out.log_weights.assign(lw.data(), lw.data() + lw.size());
  return out;
}

LooResult psis_loo(const Eigen::MatrixXd& loglik) {
  const Eigen::Index s = loglik.rows();
  if (s < 100) throw DomainError("PSIS-LOO needs at least 100 draws");
  LooResult out;
  const double log_s = std::log(static_cast<double>(s));
  std::vector<double> lpd_i;
  for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
    const Eigen::VectorXd col = loglik.col(i);
    if (!col.allFinite()) {
      out.dropped.push_back(static_cast<std::size_t>(i));
      continue;
    }
    const Eigen::VectorXd neg = -col;
    const SmoothedWeights w = psis_smooth({neg.data(), static_cast<std::size_t>(neg.size())});
    const Eigen::VectorXd lw = Eigen::Map<const Eigen::VectorXd>(w.log_weights.data(), s);
    const double elpd = log_sum_exp(lw + col);
    out.pointwise_elpd.push_back(elpd);
    out.pareto_k.push_back(w.k);
    if (w.k > kParetoKThreshold) ++out.bad_k;
    lpd_i.push_back(log_sum_exp(col) - log_s);
  }
  const std::size_t n = out.pointwise_elpd.size();
  out.elpd_loo = std::accumulate(out.pointwise_elpd.begin(), out.pointwise_elpd.end(), 0.0);
  out.lpd = std::accumulate(lpd_i.begin(), lpd_i.end(), 0.0);
  out.p_loo = out.lpd - out.elpd_loo;
  if (n > 1) {
    const double mu = out.elpd_loo / static_cast<double>(n);
    double ss = 0.0;
    for (double e : out.pointwise_elpd) ss += (e - mu) * (e - mu);
    out.se_loo = std::sqrt(static_cast<double>(n) * ss / static_cast<double>(n - 1));
  }
  out.looic = -2.0 * out.elpd_loo;
  return out;
}

MetricReport evaluate(const std::vector<PatientTrajectory>& fit,
                      const std::vector<PatientData>& data, const Eigen::MatrixXd& loglik,
                      const std::vector<PatientTrajectory>* baseline) {
  MetricReport rep;
  const auto m12 = m1_m2_per_patient(fit, data);
  const auto base12 = baseline ? m1_m2_per_patient(*baseline, data) : m12;
  std::vector<double> base_m2;
  for (const auto& v : base12) base_m2.push_back(v.second);
  const std::vector<bool> keep = exclusion_mask(base_m2);
  const auto m3 = mse_per_patient(fit, data, Split::Train);
  const auto m4 = mse_per_patient(fit, data, Split::Test);
  const auto m5 = m5_per_patient(fit, data);

  std::vector<double> m1v, m2v;
  for (std::size_t n = 0; n < fit.size(); ++n) {
    PatientMetrics pm;
    pm.id = fit[n].id;
    pm.m1 = m12[n].first;
    pm.m2 = m12[n].second;
    pm.m3 = m3[n];
    pm.m4 = m4[n];
    pm.m5 = m5[n];
    pm.included = keep[n];
    if (!keep[n]) {
      rep.excluded.emplace_back(pm.id, "baseline M2 " + std::to_string(base_m2[n]) + " below " +
                                           std::to_string(kExclusionThreshold));
    }
    rep.patients.push_back(pm);
    m1v.push_back(pm.m1);
    m2v.push_back(pm.m2);
  }
  rep.m1 = mean_defined(m1v);
  rep.m2 = mean_defined(m2v);
  rep.m3 = mean_defined(m3, keep);
  rep.m4 = mean_defined(m4, keep);
  rep.m5 = mean_defined(m5);
  rep.loo = psis_loo(loglik);

  if (baseline) {
    const auto b4 = mse_per_patient(*baseline, data, Split::Test);
    std::vector<double> a, b;
    for (std::size_t n = 0; n < m4.size(); ++n) {
      if (!keep[n] || std::isnan(m4[n]) || std::isnan(b4[n])) continue;
      a.push_back(m4[n]);
      b.push_back(b4[n]);
    }
    if (!a.empty()) rep.u_test = mann_whitney_u(a, b);
  }
  return rep;
}

}  // namespace eivtraj
