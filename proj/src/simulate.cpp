#include "eivtraj/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>

#include "eivtraj/response.hpp"

namespace eivtraj {

namespace {

using Rng = std::mt19937_64;

struct MealTruth {
  std::vector<double> times;
  std::vector<std::vector<double>> covariates;
};

MealTruth draw_meals(const SimConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> amount(cfg.covariate_low, cfg.covariate_high);
  MealTruth m;
  const double span = cfg.days * 1440.0;
  const double slot = span / static_cast<double>(std::max<std::size_t>(cfg.meals_per_patient, 1));
  for (std::size_t k = 0; k < cfg.meals_per_patient; ++k) {
    m.times.push_back(std::round(slot * (static_cast<double>(k) + 0.1 + 0.5 * unit(rng))));
    std::vector<double> x(cfg.covariate_dim);
    for (double& v : x) v = amount(rng);
    m.covariates.push_back(std::move(x));
  }
  return m;
}

std::vector<double> linear_trend(const SimConfig& cfg, const std::vector<double>& grid) {
  std::vector<double> t(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) t[i] = cfg.trend_intercept + cfg.trend_slope * grid[i];
  return t;
}

std::vector<double> gp_trend(const gp::KernelParams& kp, const std::vector<double>& grid, Rng& rng) {
  Eigen::MatrixXd k = gp::kernel(grid, grid, kp);
  const double scale = std::max(1.0, k.diagonal().maxCoeff());
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (double jitter = 1e-8; jitter <= 1e-2; jitter *= 10.0) {
    llt.compute(k + Eigen::MatrixXd::Identity(k.rows(), k.cols()) * (jitter * scale));
    if (llt.info() == Eigen::Success) break;
  }
  if (llt.info() != Eigen::Success) throw NumericalError("could not factor the trend covariance");
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(k.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  const Eigen::VectorXd f = llt.matrixL() * z;
  return {f.data(), f.data() + f.size()};
}

// Assembles outcome and observed events from the truth; perturbations must
// already be recorded in `truth`.
PatientData assemble(PatientTruth& truth, const std::vector<double>& grid,
                     const std::vector<std::vector<double>>& observed_cov, const SimConfig& cfg,
                     const ModelSpec& spec, Rng& rng) {
  PatientData d;
  d.id = truth.id;
  d.obs_times = grid;
  truth.response.assign(grid.size(), 0.0);
  for (std::size_t m = 0; m < truth.true_times.size(); ++m) {
    const ResponseShape r = response_params(truth.coef, truth.true_covariates[m],
                                            spec.length_scale_floor, spec.length_scale_unit);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      truth.response[i] += response_value(grid[i] - truth.true_times[m], r.height, r.length);
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  const double cut = cfg.train_days * 1440.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double e = truth.noise_sd > 0.0 ? truth.noise_sd * noise(rng) : 0.0;
    d.outcome.push_back(truth.trend[i] + truth.response[i] + e);
    d.train_mask.push_back(grid[i] < cut);
  }
  for (std::size_t m = 0; m < truth.true_times.size(); ++m) {
    d.events.push_back({truth.true_times[m] + truth.time_shift[m], observed_cov[m]});
  }
  d.validate();
  return d;
}

std::vector<double> time_shifts(std::size_t count, const SimConfig& cfg, Rng& rng) {
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::vector<double> s(count);
  for (double& v : s) v = cfg.time_bias + (cfg.time_jitter_sd > 0.0 ? cfg.time_jitter_sd * jitter(rng) : 0.0);
  return s;
}

// Exactly round(fraction * count) entries set, chosen uniformly.
std::vector<bool> perturbation_mask(std::size_t count, double fraction, Rng& rng) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(count)));
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> mask(count, false);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = true;
  return mask;
}

// Multiplicative amount error: observed = true * delta.
std::vector<std::vector<double>> perturb_amounts(PatientTruth& truth, const SimConfig& cfg, Rng& rng) {
  const std::size_t count = truth.true_times.size();
  truth.perturbed = perturbation_mask(count, cfg.perturb_fraction, rng);
  truth.delta.assign(count, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> observed = truth.true_covariates;
  for (std::size_t m = 0; m < count; ++m) {
    if (!truth.perturbed[m]) continue;
    truth.delta[m] = std::exp(cfg.perturb_sd * normal(rng));
    for (double& x : observed[m]) x *= truth.delta[m];
  }
  return observed;
}

double half_normal(double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  return std::abs(normal(rng));
}

double draw_value(const PosteriorDraws& post, const std::string& name, std::size_t row) {
  return post.row(row)[post.index_of(name)];
}

}  // namespace

std::string to_string(SimProtocol p) {
  switch (p) {
    case SimProtocol::Toy: return "toy";
    case SimProtocol::FromFit: return "from_fit";
    case SimProtocol::Generative: return "generative";
  }
  return "unknown";
}

SimProtocol protocol_from_string(const std::string& s) {
  if (s == "toy") return SimProtocol::Toy;
  if (s == "from_fit" || s == "fromfit") return SimProtocol::FromFit;
  if (s == "generative") return SimProtocol::Generative;
  throw DomainError("unknown simulation protocol '" + s + "'");
}

std::string to_string(TrendKind t) { return t == TrendKind::Linear ? "linear" : "gp"; }

TrendKind trend_from_string(const std::string& s) {
  if (s == "linear") return TrendKind::Linear;
  if (s == "gp") return TrendKind::GP;
  throw DomainError("unknown trend kind '" + s + "'");
}

void SimConfig::validate() const {
  if (!(perturb_fraction >= 0.0 && perturb_fraction <= 1.0)) {
    throw DomainError("perturb_fraction must lie in [0, 1]");
  }
  if (!(perturb_sd >= 0.0)) throw DomainError("perturb_sd must be non-negative");
  if (!(response_scale > 0.0)) throw DomainError("response_scale must be positive");
  if (!(days > 0.0) || !(cadence > 0.0)) throw DomainError("days and cadence must be positive");
  if (!(noise_sd >= 0.0) || !(time_jitter_sd >= 0.0)) throw DomainError("noise SDs must be non-negative");
  if (!(covariate_low >= 0.0 && covariate_high >= covariate_low)) {
    throw DomainError("covariate range must be non-negative and ordered");
  }
  if (protocol != SimProtocol::FromFit && covariate_dim == 0) {
    throw DomainError("covariate_dim must be positive");
  }
}

std::vector<double> observation_grid(const SimConfig& cfg) {
  std::vector<double> grid;
  const double span = cfg.days * 1440.0;
  for (std::size_t i = 0;; ++i) {
    const double t = static_cast<double>(i) * cfg.cadence;
    if (t >= span) break;
    grid.push_back(t);
  }
  return grid;
}

SimResult simulate_toy(const SimConfig& cfg, const ModelSpec& spec) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> height(0.5, 1.5);
  std::normal_distribution<double> length(0.0, 0.25);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::vector<double> grid = observation_grid(cfg);
  SimResult out;
  out.truth.protocol = SimProtocol::Toy;
  for (std::size_t n = 0; n < cfg.n_patients; ++n) {
    PatientTruth t;
    t.id = "toy" + std::to_string(n);
    t.coef.beta_h.resize(cfg.covariate_dim);
    t.coef.beta_l.resize(cfg.covariate_dim);
    for (double& b : t.coef.beta_h) b = cfg.response_scale * height(rng);
    for (double& b : t.coef.beta_l) b = length(rng);
    t.noise_sd = cfg.noise_sd;
    const MealTruth meals = draw_meals(cfg, rng);
    t.true_times = meals.times;
    t.true_covariates = meals.covariates;
    t.perturbed = perturbation_mask(meals.times.size(), cfg.perturb_fraction, rng);
    t.delta.assign(meals.times.size(), 1.0);
    auto observed = t.true_covariates;
    for (std::size_t m = 0; m < observed.size(); ++m) {
      std::vector<double> add(cfg.covariate_dim, 0.0);
      if (t.perturbed[m]) {
        for (std::size_t p = 0; p < add.size(); ++p) {
          add[p] = cfg.toy_shift_mean + cfg.perturb_sd * normal(rng);
          observed[m][p] = std::max(0.0, observed[m][p] + add[p]);
        }
      }
      t.additive_error.push_back(std::move(add));
    }
    t.time_shift = time_shifts(meals.times.size(), cfg, rng);
    t.trend = linear_trend(cfg, grid);
    out.data.push_back(assemble(t, grid, observed, cfg, spec, rng));
    out.truth.patients.push_back(std::move(t));
  }
  return out;
}

SimResult simulate_generative(const SimConfig& cfg, const ModelSpec& spec) {
  cfg.validate();
  spec.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t p = cfg.covariate_dim;
  std::vector<double> bh(p), bl(p), sh(p), sl(p);
  for (std::size_t i = 0; i < p; ++i) {
    bh[i] = spec.beta_tilde_scale * normal(rng);
    bl[i] = spec.beta_tilde_scale * normal(rng);
    sh[i] = half_normal(spec.sigma_h_scale, rng);
    sl[i] = half_normal(spec.sigma_l_scale, rng);
  }
  const std::vector<double> grid = observation_grid(cfg);
  SimResult out;
  out.truth.protocol = SimProtocol::Generative;
  for (std::size_t n = 0; n < cfg.n_patients; ++n) {
    PatientTruth t;
    t.id = "sim" + std::to_string(n);
    t.coef.beta_h.resize(p);
    t.coef.beta_l.resize(p);
    for (std::size_t i = 0; i < p; ++i) {
      if (has_hierarchy(spec.variant)) {
        t.coef.beta_h[i] = bh[i] + sh[i] * normal(rng);
        t.coef.beta_l[i] = bl[i] + sl[i] * normal(rng);
      } else {
        t.coef.beta_h[i] = spec.independent_beta_scale * normal(rng);
        t.coef.beta_l[i] = spec.independent_beta_scale * normal(rng);
      }
      t.coef.beta_h[i] *= cfg.response_scale;
    }
    t.kernel.se_amplitude = half_normal(spec.se_amplitude_scale, rng);
    t.kernel.se_lengthscale =
        std::exp(spec.se_lengthscale_log_mean + spec.se_lengthscale_log_sd * normal(rng));
    t.kernel.const_amplitude = half_normal(spec.const_amplitude_scale, rng);
    t.noise_sd = cfg.noise_sd;
    const MealTruth meals = draw_meals(cfg, rng);
    t.true_times = meals.times;
    t.true_covariates = meals.covariates;
    const auto observed = perturb_amounts(t, cfg, rng);
    t.time_shift = time_shifts(meals.times.size(), cfg, rng);
    t.trend = cfg.trend == TrendKind::GP ? gp_trend(t.kernel, grid, rng) : linear_trend(cfg, grid);
    out.data.push_back(assemble(t, grid, observed, cfg, spec, rng));
    out.truth.patients.push_back(std::move(t));
  }
  return out;
}

SimResult simulate_from_fit(const PosteriorDraws& posterior, const std::vector<PatientData>& templ,
                            const SimConfig& cfg, const ModelSpec& spec) {
  cfg.validate();
  if (posterior.total() == 0) throw DomainError("empty posterior");
  if (templ.empty()) throw DomainError("empty template dataset");
  Rng rng(cfg.seed);

  PosteriorDraws point;
  point.chains = 1;
  point.draws = 1;
  point.names = posterior.names;
  if (cfg.use_posterior_mean) {
    const Eigen::VectorXd m = posterior.mean();
    point.values.assign(m.data(), m.data() + m.size());
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, posterior.total() - 1);
    const auto r = posterior.row(pick(rng));
    point.values.assign(r.begin(), r.end());
  }

  const std::size_t count = cfg.n_patients == 0 ? templ.size() : std::min(cfg.n_patients, templ.size());
  const std::size_t p = covariate_dim(templ);
  const double sigma_y = draw_value(point, "sigma_y", 0);
  SimResult out;
  out.truth.protocol = SimProtocol::FromFit;
  for (std::size_t n = 0; n < count; ++n) {
    const PatientData& src = templ[n];
    const std::string tag = "[" + std::to_string(n) + "]";
    PatientTruth t;
    t.id = src.id;
    for (std::size_t i = 0; i < p; ++i) {
      const std::string idx = tag + "[" + std::to_string(i) + "]";
      t.coef.beta_h.push_back(cfg.response_scale * draw_value(point, "beta_h" + idx, 0));
      t.coef.beta_l.push_back(draw_value(point, "beta_l" + idx, 0));
    }
    t.kernel.se_amplitude = draw_value(point, "se_amplitude" + tag, 0);
    t.kernel.se_lengthscale = draw_value(point, "se_lengthscale" + tag, 0);
    t.kernel.const_amplitude = draw_value(point, "const_amplitude" + tag, 0);
    t.noise_sd = sigma_y;
    for (const auto& ev : src.events) {
      t.true_times.push_back(ev.observed_time);
      t.true_covariates.push_back(ev.covariates);
    }
    const auto observed = perturb_amounts(t, cfg, rng);
    t.time_shift = time_shifts(src.events.size(), cfg, rng);
    t.trend = cfg.trend == TrendKind::GP ? gp_trend(t.kernel, src.obs_times, rng)
                                         : linear_trend(cfg, src.obs_times);
    PatientTruth& stored = out.truth.patients.emplace_back(std::move(t));
    PatientData d = assemble(stored, src.obs_times, observed, cfg, spec, rng);
    d.train_mask = src.train_mask;
    out.data.push_back(std::move(d));
  }
  return out;
}

}  // namespace eivtraj
