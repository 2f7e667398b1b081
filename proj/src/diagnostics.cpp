#include "eivtraj/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

#include "eivtraj/types.hpp"

namespace eivtraj {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Chains = std::vector<std::vector<double>>;

void check_shape(std::span<const double> values, std::size_t chains, std::size_t draws) {
  if (chains < 1 || draws < 4) throw StructuralError("diagnostics need at least 4 draws per chain");
  if (values.size() != chains * draws) throw StructuralError("draw count does not match shape");
}

Chains split(std::span<const double> values, std::size_t chains, std::size_t draws) {
  const std::size_t half = draws / 2;
  Chains out;
  for (std::size_t c = 0; c < chains; ++c) {
    const double* base = values.data() + c * draws;
    out.emplace_back(base, base + half);
    out.emplace_back(base + draws - half, base + draws);
  }
  return out;
}

bool is_constant(const Chains& ch) {
  const double v0 = ch.front().front();
  for (const auto& c : ch)
    for (double v : c)
      if (v != v0) return false;
  return true;
}

Chains rank_normalize(const Chains& ch) {
  std::vector<std::pair<double, std::size_t>> all;
  std::size_t n = 0;
  for (const auto& c : ch)
    for (double v : c) all.emplace_back(v, n++);
  std::sort(all.begin(), all.end());
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && all[j + 1].first == all[i].first) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[all[k].second] = r;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> std_normal;
  const double s = static_cast<double>(n);
  Chains out = ch;
  std::size_t k = 0;
  for (auto& c : out)
    for (double& v : c) v = boost::math::quantile(std_normal, (ranks[k++] - 0.375) / (s + 0.25));
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double quantile_sorted(const std::vector<double>& s, double q) {
  const double h = (static_cast<double>(s.size()) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double rhat_plain(const Chains& ch) {
  const double m = static_cast<double>(ch.size());
  const double n = static_cast<double>(ch.front().size());
  std::vector<double> means, vars;
  for (const auto& c : ch) {
    const double mu = std::accumulate(c.begin(), c.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : c) ss += (v - mu) * (v - mu);
    means.push_back(mu);
    vars.push_back(ss / (n - 1.0));
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / (m - 1.0);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  if (w <= 0.0) return kNaN;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

std::vector<double> autocovariance(const std::vector<double>& x) {
  const std::size_t n = x.size();
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::size_t len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> padded(len, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - mu;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::complex<double>(std::norm(f), 0.0);
  std::vector<double> back;
  fft.inv(back, freq);
  std::vector<double> acov(n);
  for (std::size_t i = 0; i < n; ++i) acov[i] = back[i] / static_cast<double>(n);
  return acov;
}

double ess_plain(const Chains& ch) {
  const std::size_t m = ch.size();
  const std::size_t n = ch.front().size();
  std::vector<std::vector<double>> acov(m);
  std::vector<double> means(m);
  for (std::size_t c = 0; c < m; ++c) {
    acov[c] = autocovariance(ch[c]);
    means[c] = std::accumulate(ch[c].begin(), ch[c].end(), 0.0) / static_cast<double>(n);
  }
  const double dn = static_cast<double>(n);
  const double dm = static_cast<double>(m);
  double mean_var = 0.0;
  for (std::size_t c = 0; c < m; ++c) mean_var += acov[c][0] * dn / (dn - 1.0);
  mean_var /= dm;
  double var_plus = mean_var * (dn - 1.0) / dn;
  if (m > 1) {
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / dm;
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    var_plus += b / (dm - 1.0);
  }
  if (!(var_plus > 0.0)) return kNaN;

  const auto acov_mean = [&](std::size_t t) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += acov[c][t];
    return s / dm;
  };
  const auto rho_at = [&](std::size_t t) { return 1.0 - (mean_var - acov_mean(t)) / var_plus; };

  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = rho_at(1);
  rho[1] = rho_odd;
  std::size_t t = 1;
  while (t + 5 < n && rho_even + rho_odd > 0.0) {
    rho_even = rho_at(t + 1);
    rho_odd = rho_at(t + 2);
    if (rho_even + rho_odd >= 0.0) {
      rho[t + 1] = rho_even;
      rho[t + 2] = rho_odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0 && max_t + 1 < n) rho[max_t + 1] = rho_even;

  // initial monotone sequence
  for (t = 1; t + 4 <= max_t; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
      rho[t + 2] = rho[t + 1];
    }
  }
  const double total = dm * dn;
  double tau = -1.0;
  for (std::size_t i = 0; i <= max_t && i < n; ++i) tau += 2.0 * rho[i];
  if (max_t + 1 < n) tau += rho[max_t + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

Chains indicator(const Chains& ch, double threshold) {
  Chains out = ch;
  for (auto& c : out)
    for (double& v : c) v = v <= threshold ? 1.0 : 0.0;
  return out;
}

}  // namespace

double split_rhat(std::span<const double> values, std::size_t chains, std::size_t draws) {
  check_shape(values, chains, draws);
  const Chains ch = split(values, chains, draws);
  if (is_constant(ch)) return kNaN;
  const double bulk = rhat_plain(rank_normalize(ch));
  std::vector<double> all(values.begin(), values.end());
  const double med = median(all);
  Chains folded = ch;
  for (auto& c : folded)
    for (double& v : c) v = std::abs(v - med);
  const double tail = rhat_plain(rank_normalize(folded));
  if (std::isnan(bulk)) return tail;
  if (std::isnan(tail)) return bulk;
  return std::max(bulk, tail);
}

double ess_bulk(std::span<const double> values, std::size_t chains, std::size_t draws) {
  check_shape(values, chains, draws);
  const Chains ch = split(values, chains, draws);
  if (is_constant(ch)) return kNaN;
  return ess_plain(rank_normalize(ch));
}

double ess_tail(std::span<const double> values, std::size_t chains, std::size_t draws) {
  check_shape(values, chains, draws);
  const Chains ch = split(values, chains, draws);
  if (is_constant(ch)) return kNaN;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const Chains lo = indicator(ch, quantile_sorted(sorted, 0.05));
  const Chains hi = indicator(ch, quantile_sorted(sorted, 0.95));
  const double a = is_constant(lo) ? kNaN : ess_plain(lo);
  const double b = is_constant(hi) ? kNaN : ess_plain(hi);
  if (std::isnan(a)) return b;
  if (std::isnan(b)) return a;
  return std::min(a, b);
}

double ess_basic(std::span<const double> values, std::size_t chains, std::size_t draws) {
  check_shape(values, chains, draws);
  const Chains ch = split(values, chains, draws);
  if (is_constant(ch)) return kNaN;
  return ess_plain(ch);
}

std::vector<ParamDiagnostics> diagnostics(const PosteriorDraws& draws) {
  const std::size_t d = draws.dim();
  const std::size_t n = draws.total();
  std::vector<ParamDiagnostics> out;
  out.reserve(d);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < n; ++k) col[k] = draws.values[k * d + j];
    ParamDiagnostics p;
    p.name = draws.names[j];
    p.mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : col) ss += (v - p.mean) * (v - p.mean);
    p.sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    std::vector<double> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    p.q05 = quantile_sorted(sorted, 0.05);
    p.q95 = quantile_sorted(sorted, 0.95);
    p.degenerate = sorted.front() == sorted.back();
    if (p.degenerate) {
      check_shape(col, draws.chains, draws.draws);
      p.rhat = p.ess_bulk = p.ess_tail = kNaN;
    } else {
      p.rhat = split_rhat(col, draws.chains, draws.draws);
      p.ess_bulk = ess_bulk(col, draws.chains, draws.draws);
      p.ess_tail = ess_tail(col, draws.chains, draws.draws);
    }
    out.push_back(std::move(p));
  }
  return out;
}

double max_rhat(const std::vector<ParamDiagnostics>& diag) {
  double best = kNaN;
  for (const auto& p : diag) {
    if (std::isnan(p.rhat)) continue;
    if (std::isnan(best) || p.rhat > best) best = p.rhat;
  }
  return best;
}

}  // namespace eivtraj
