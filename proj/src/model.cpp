#include "eivtraj/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <type_traits>

namespace eivtraj {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 log(2 pi)
constexpr double kLog2 = 0.69314718055994530942;

// Responses are skipped where |lag / l - 3| >= kCutoff (relative value
// below 3e-18).
constexpr double kCutoff = 9.0;

template <class T>
T normal_lpdf(const T& x, double mu, double sd) {
  const T z = (x - mu) / sd;
  return -0.5 * z * z - std::log(sd) - kHalfLog2Pi;
}

// Half-normal prior on sigma = exp(z), as a density over z.
template <class T>
T half_normal_on_log(const T& z, double scale) {
  using ad::exp;
  using std::exp;
  return kLog2 + normal_lpdf(exp(z), 0.0, scale) + z;
}

template <class T>
T weighted_sum(std::span<const T> x, std::span<const double> w) {
  if constexpr (std::is_same_v<T, ad::Var>) {
    return ad::dot(x, w);
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i];
    return s;
  }
}

// Index range of sorted `times` where a meal response is non-negligible.
std::pair<std::size_t, std::size_t> support(std::span<const double> times, double t_star,
                                            double l) {
  const double lo = t_star + (3.0 - kCutoff) * l;
  const double hi = t_star + (3.0 + kCutoff) * l;
  const auto b = std::upper_bound(times.begin(), times.end(), lo);
  const auto e = std::lower_bound(b, times.end(), hi);
  return {static_cast<std::size_t>(b - times.begin()), static_cast<std::size_t>(e - times.begin())};
}

Eigen::VectorXd residual_of(std::span<const double> times, std::span<const double> y,
                            std::span<const double> t_star, std::span<const double> h,
                            std::span<const double> l) {
  Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  for (std::size_t m = 0; m < t_star.size(); ++m) {
    const auto [b, e] = support(times, t_star[m], l[m]);
    for (std::size_t g = b; g < e; ++g) r[g] -= response_value(times[g] - t_star[m], h[m], l[m]);
  }
  return r;
}

struct LikelihoodGradient {
  double value = 0.0;
  std::vector<double> d_time, d_height, d_length;
  double d_se_amplitude = 0.0, d_se_lengthscale = 0.0, d_const_amplitude = 0.0, d_sigma_y = 0.0;
};

LikelihoodGradient likelihood_gradient(std::span<const double> times, std::span<const double> y,
                                       const gp::InducingSet& inducing,
                                       std::span<const double> t_star, std::span<const double> h,
                                       std::span<const double> l, const gp::KernelParams& kp,
                                       double sigma_y) {
  const Eigen::VectorXd r = residual_of(times, y, t_star, h, l);
  const gp::LowRankCovariance cov(times, inducing, kp, sigma_y);
  const auto g = cov.log_density_gradient(r);
  LikelihoodGradient out;
  out.value = g.value;
  out.d_se_amplitude = g.d_se_amplitude;
  out.d_se_lengthscale = g.d_se_lengthscale;
  out.d_const_amplitude = g.d_const_amplitude;
  out.d_sigma_y = g.d_sigma_y;
  const std::size_t mcount = t_star.size();
  out.d_time.assign(mcount, 0.0);
  out.d_height.assign(mcount, 0.0);
  out.d_length.assign(mcount, 0.0);
  // residual = y - sum R, so dL/dR_g = -dL/dr_g
  for (std::size_t m = 0; m < mcount; ++m) {
    const auto [b, e] = support(times, t_star[m], l[m]);
    double dh = 0.0, dt = 0.0, dl = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      const double lag = times[i] - t_star[m];
      const double z = lag / l[m] - 3.0;
      const double ex = std::exp(-0.5 * z * z);
      const double w = -g.d_residual[static_cast<Eigen::Index>(i)];
      dh += w * ex;
      const double hz = w * h[m] * ex * z;
      dt += hz / l[m];
      dl += hz * lag / (l[m] * l[m]);
    }
    out.d_time[m] = dt;
    out.d_height[m] = dh;
    out.d_length[m] = dl;
  }
  return out;
}

}  // namespace

Model::Model(std::vector<PatientData> data, ModelSpec spec)
    : data_(std::move(data)), spec_(spec) {
  spec_.validate();
  for (const auto& d : data_) d.validate();
  p_ = eivtraj::covariate_dim(data_);
  const Variant v = spec_.variant;

  sigma_y_ = layout_.add_scalar("sigma_y", Transform::Log);
  if (has_hierarchy(v)) {
    beta_h_tilde_ = layout_.add("beta_h_tilde", p_, Transform::Identity);
    beta_l_tilde_ = layout_.add("beta_l_tilde", p_, Transform::Identity);
    sigma_h_ = layout_.add("sigma_h", p_, Transform::Log);
    sigma_l_ = layout_.add("sigma_l", p_, Transform::Log);
  }
  patients_.resize(data_.size());
  for (std::size_t n = 0; n < data_.size(); ++n) {
    const PatientData& d = data_[n];
    PatientCache& c = patients_[n];
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!d.train_mask[i]) continue;
      c.times.push_back(d.obs_times[i]);
      c.y.push_back(d.outcome[i]);
    }
    if (c.times.size() < 2) {
      throw DomainError("patient '" + d.id + "' has fewer than two training observations");
    }
    c.inducing = gp::select_inducing(c.times, std::min(spec_.inducing_count, c.times.size()));
    const double last_train = c.times.back();
    c.latent_index.assign(d.events.size(), -1);
    for (std::size_t m = 0; m < d.events.size(); ++m) {
      if (d.events[m].observed_time <= last_train) {
        c.latent_index[m] = static_cast<int>(c.latent_meals++);
      }
    }
    const std::string tag = "[" + std::to_string(n) + "]";
    // non-centered hierarchy samples standardized offsets z, beta = tilde + sigma * z
    const std::string z = offsets() ? "_z" : "";
    c.beta_h = layout_.add("beta_h" + z + tag, p_, Transform::Identity);
    c.beta_l = layout_.add("beta_l" + z + tag, p_, Transform::Identity);
    c.se_amplitude = layout_.add_scalar("se_amplitude" + tag, Transform::Log);
    c.se_lengthscale = layout_.add_scalar("se_lengthscale" + tag, Transform::Log);
    c.const_amplitude = layout_.add_scalar("const_amplitude" + tag, Transform::Log);
    if (has_time_error(v)) {
      c.report_bias = layout_.add_scalar("report_bias" + tag, Transform::Identity);
      // total shift d_n + eps_m per latent meal; eps_m = shift - d_n
      c.time_shift = layout_.add("time_shift" + tag, c.latent_meals, Transform::Identity);
    }
    if (has_covariate_error(v)) {
      c.log_delta = layout_.add("log_delta" + tag, c.latent_meals, Transform::Identity);
    }
  }
}

template <class T>
T Model::patient_term(std::size_t n, std::span<const T> u, const T& sigma_y) const {
  using ad::exp;
  using ad::softplus;
  using std::exp;
  const PatientCache& c = patients_[n];
  const PatientData& d = data_[n];
  const Variant v = spec_.variant;

  std::vector<T> beta_h(p_), beta_l(p_);
  T lp = T(0.0);
  if (offsets()) {
    for (std::size_t p = 0; p < p_; ++p) {
      const T& zh = u[c.beta_h + p];
      const T& zl = u[c.beta_l + p];
      lp += normal_lpdf(zh, 0.0, 1.0) + normal_lpdf(zl, 0.0, 1.0);
      beta_h[p] = u[beta_h_tilde_ + p] + exp(u[sigma_h_ + p]) * zh;
      beta_l[p] = u[beta_l_tilde_ + p] + exp(u[sigma_l_ + p]) * zl;
    }
  } else if (has_hierarchy(v)) {
    for (std::size_t p = 0; p < p_; ++p) {
      beta_h[p] = u[c.beta_h + p];
      beta_l[p] = u[c.beta_l + p];
      const T zh = (beta_h[p] - u[beta_h_tilde_ + p]) * exp(-u[sigma_h_ + p]);
      const T zl = (beta_l[p] - u[beta_l_tilde_ + p]) * exp(-u[sigma_l_ + p]);
      lp += normal_lpdf(zh, 0.0, 1.0) - u[sigma_h_ + p];
      lp += normal_lpdf(zl, 0.0, 1.0) - u[sigma_l_ + p];
    }
  } else {
    for (std::size_t p = 0; p < p_; ++p) {
      beta_h[p] = u[c.beta_h + p];
      beta_l[p] = u[c.beta_l + p];
      lp += normal_lpdf(beta_h[p], 0.0, spec_.independent_beta_scale);
      lp += normal_lpdf(beta_l[p], 0.0, spec_.independent_beta_scale);
    }
  }

  const T s = exp(u[c.se_amplitude]);
  const T ell = exp(u[c.se_lengthscale]);
  const T k = exp(u[c.const_amplitude]);
  lp += half_normal_on_log(u[c.se_amplitude], spec_.se_amplitude_scale);
  lp += normal_lpdf(u[c.se_lengthscale], spec_.se_lengthscale_log_mean, spec_.se_lengthscale_log_sd);
  lp += half_normal_on_log(u[c.const_amplitude], spec_.const_amplitude_scale);

  T bias = T(0.0);
  if (has_time_error(v)) {
    bias = u[c.report_bias];
    lp += normal_lpdf(bias, 0.0, spec_.sigma_d);
    for (std::size_t j = 0; j < c.latent_meals; ++j) {
      lp += normal_lpdf(u[c.time_shift + j] - bias, 0.0, spec_.sigma_t);
    }
  }
  if (has_covariate_error(v)) {
    for (std::size_t j = 0; j < c.latent_meals; ++j) {
      lp += normal_lpdf(u[c.log_delta + j], 0.0, spec_.sigma_x);
    }
  }

  const std::size_t mcount = d.events.size();
  std::vector<T> t_star(mcount), h(mcount), l(mcount);
  for (std::size_t m = 0; m < mcount; ++m) {
    const auto& ev = d.events[m];
    const int j = c.latent_index[m];
    T t = has_time_error(v) && j >= 0 ? ev.observed_time - u[c.time_shift + static_cast<std::size_t>(j)]
                                      : ev.observed_time - bias;
    T eta_h = weighted_sum<T>(std::span<const T>(beta_h), ev.covariates);
    T eta_l = weighted_sum<T>(std::span<const T>(beta_l), ev.covariates);
    if (has_covariate_error(v) && j >= 0) {
      const T scale = exp(-u[c.log_delta + static_cast<std::size_t>(j)]);
      eta_h = eta_h * scale;
      eta_l = eta_l * scale;
    }
    t_star[m] = t;
    h[m] = eta_h;
    l[m] = detail::length_link(eta_l, spec_.length_scale_floor, spec_.length_scale_unit);
  }

  if constexpr (std::is_same_v<T, double>) {
    const Eigen::VectorXd r = residual_of(c.times, c.y, t_star, h, l);
    const gp::LowRankCovariance cov(c.times, c.inducing, {s, ell, k}, sigma_y);
    lp += cov.log_density(r);
  } else {
    std::vector<double> tv(mcount), hv(mcount), lv(mcount);
    for (std::size_t m = 0; m < mcount; ++m) {
      tv[m] = t_star[m].value();
      hv[m] = h[m].value();
      lv[m] = l[m].value();
    }
    const gp::KernelParams kp{s.value(), ell.value(), k.value()};
    const auto g = likelihood_gradient(c.times, c.y, c.inducing, tv, hv, lv, kp, sigma_y.value());
    std::vector<int> parents;
    std::vector<double> partials;
    parents.reserve(3 * mcount + 4);
    partials.reserve(3 * mcount + 4);
    for (std::size_t m = 0; m < mcount; ++m) {
      parents.insert(parents.end(), {t_star[m].index(), h[m].index(), l[m].index()});
      partials.insert(partials.end(), {g.d_time[m], g.d_height[m], g.d_length[m]});
    }
    parents.insert(parents.end(), {s.index(), ell.index(), k.index(), sigma_y.index()});
    partials.insert(partials.end(),
                    {g.d_se_amplitude, g.d_se_lengthscale, g.d_const_amplitude, g.d_sigma_y});
    ad::Tape* tape = s.tape();
    lp += ad::Var(g.value, tape, tape->nary(parents, partials));
  }
  return lp;
}

template <class T>
T Model::evaluate(std::span<const T> u) const {
  using ad::exp;
  using std::exp;
  T lp = half_normal_on_log(u[sigma_y_], spec_.sigma_y_scale);
  const T sigma_y = exp(u[sigma_y_]);
  if (has_hierarchy(spec_.variant)) {
    for (std::size_t p = 0; p < p_; ++p) {
      lp += normal_lpdf(u[beta_h_tilde_ + p], 0.0, spec_.beta_tilde_scale);
      lp += normal_lpdf(u[beta_l_tilde_ + p], 0.0, spec_.beta_tilde_scale);
      lp += half_normal_on_log(u[sigma_h_ + p], spec_.sigma_h_scale);
      lp += half_normal_on_log(u[sigma_l_ + p], spec_.sigma_l_scale);
    }
  }
  for (std::size_t n = 0; n < patients_.size(); ++n) lp += patient_term<T>(n, u, sigma_y);
  return lp;
}

double Model::log_density(std::span<const double> u) const {
  if (u.size() != dim()) throw StructuralError("parameter vector does not match model layout");
  try {
    const double v = evaluate<double>(u);
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  } catch (const NumericalError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

double Model::log_density_gradient(std::span<const double> u, std::span<double> grad,
                                   ad::Tape& tape) const {
  if (u.size() != dim() || grad.size() != dim()) {
    throw StructuralError("parameter vector does not match model layout");
  }
  tape.clear();
  std::vector<ad::Var> x(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) x[i] = ad::Var::independent(u[i], tape);
  const auto fail = [&] {
    std::fill(grad.begin(), grad.end(), 0.0);
    return -std::numeric_limits<double>::infinity();
  };
  ad::Var lp;
  try {
    lp = evaluate<ad::Var>(x);
  } catch (const NumericalError&) {
    return fail();
  }
  if (!std::isfinite(lp.value())) return fail();
  const auto& adj = tape.gradient(lp.index());
  for (std::size_t i = 0; i < u.size(); ++i) {
    grad[i] = lp.is_constant() ? 0.0 : adj[static_cast<std::size_t>(x[i].index())];
    if (!std::isfinite(grad[i])) return fail();
  }
  return lp.value();
}

Eigen::VectorXd Model::initial_point() const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  for (const auto& c : patients_) x[c.se_lengthscale] = spec_.se_lengthscale_log_mean;
  return x;
}

PatientState Model::patient_state(std::span<const double> u, std::size_t n) const {
  if (u.size() != dim()) throw StructuralError("parameter vector does not match model layout");
  const PatientCache& c = patients_[n];
  const std::size_t mcount = data_[n].events.size();
  PatientState st;
  st.sigma_y = std::exp(u[sigma_y_]);
  st.coef.beta_h.assign(u.begin() + c.beta_h, u.begin() + c.beta_h + p_);
  st.coef.beta_l.assign(u.begin() + c.beta_l, u.begin() + c.beta_l + p_);
  if (offsets()) {
    for (std::size_t p = 0; p < p_; ++p) {
      st.coef.beta_h[p] = u[beta_h_tilde_ + p] + std::exp(u[sigma_h_ + p]) * st.coef.beta_h[p];
      st.coef.beta_l[p] = u[beta_l_tilde_ + p] + std::exp(u[sigma_l_ + p]) * st.coef.beta_l[p];
    }
  }
  st.kernel = {std::exp(u[c.se_amplitude]), std::exp(u[c.se_lengthscale]),
               std::exp(u[c.const_amplitude])};
  st.latents.time_offsets.assign(mcount, 0.0);
  st.latents.log_amount_errors.assign(mcount, 0.0);
  for (std::size_t m = 0; m < mcount; ++m) {
    const int j = c.latent_index[m];
    if (j < 0) continue;
    if (has_time_error(spec_.variant)) st.latents.time_offsets[m] = u[c.time_shift + j] - u[c.report_bias];
    if (has_covariate_error(spec_.variant)) st.latents.log_amount_errors[m] = u[c.log_delta + j];
  }
  if (has_time_error(spec_.variant)) st.latents.report_bias = u[c.report_bias];
  return st;
}

std::vector<std::string> Model::constrained_names() const {
  std::vector<std::string> names = layout_.coordinate_names();
  for (auto& n : names) {
    for (const char* b : {"beta_h", "beta_l"}) {
      const std::string z = std::string(b) + "_z[";
      if (n.rfind(z, 0) == 0) n = std::string(b) + n.substr(z.size() - 1);
    }
  }
  return names;
}

Eigen::VectorXd Model::constrain(std::span<const double> u) const {
  Eigen::VectorXd out = layout_.untransform(u);
  if (!offsets()) return out;
  for (std::size_t n = 0; n < patients_.size(); ++n) {
    const PatientState st = patient_state(u, n);
    for (std::size_t p = 0; p < p_; ++p) {
      out[static_cast<Eigen::Index>(patients_[n].beta_h + p)] = st.coef.beta_h[p];
      out[static_cast<Eigen::Index>(patients_[n].beta_l + p)] = st.coef.beta_l[p];
    }
  }
  return out;
}

namespace {

MealShape meal_shape(const TreatmentEvent& ev, double eps, double bias, double log_delta,
                     const ResponseCoefficients& coef, const ModelSpec& spec) {
  const Variant v = spec.variant;
  MealShape s;
  s.time = ev.observed_time;
  if (has_time_error(v)) s.time -= bias + eps;
  std::vector<double> x = ev.covariates;
  if (has_covariate_error(v)) {
    const double scale = std::exp(-log_delta);
    for (double& xi : x) xi *= scale;
  }
  const ResponseShape r = response_params(coef, x, spec.length_scale_floor, spec.length_scale_unit);
  s.height = r.height;
  s.length = r.length;
  return s;
}

double entry_or_zero(const std::vector<double>& v, std::size_t i) {
  return i < v.size() ? v[i] : 0.0;
}

}  // namespace

std::vector<MealShape> Model::meal_shapes(std::size_t n, const PatientState& st) const {
  const auto& events = data_[n].events;
  std::vector<MealShape> out;
  out.reserve(events.size());
  for (std::size_t m = 0; m < events.size(); ++m) {
    out.push_back(meal_shape(events[m], entry_or_zero(st.latents.time_offsets, m),
                             st.latents.report_bias, entry_or_zero(st.latents.log_amount_errors, m),
                             st.coef, spec_));
  }
  return out;
}

double Model::patient_log_likelihood(std::span<const double> u, std::size_t n) const {
  const PatientState st = patient_state(u, n);
  const auto shapes = meal_shapes(n, st);
  std::vector<double> t, h, l;
  for (const auto& s : shapes) {
    t.push_back(s.time);
    h.push_back(s.height);
    l.push_back(s.length);
  }
  const PatientCache& c = patients_[n];
  const Eigen::VectorXd r = residual_of(c.times, c.y, t, h, l);
  const gp::LowRankCovariance cov(c.times, c.inducing, st.kernel, st.sigma_y);
  return cov.log_density(r);
}

std::vector<double> sum_responses_at(std::span<const MealShape> meals,
                                     std::span<const double> times) {
  std::vector<double> out(times.size(), 0.0);
  for (const auto& m : meals) {
    for (std::size_t i = 0; i < times.size(); ++i) {
      out[i] += response_value(times[i] - m.time, m.height, m.length);
    }
  }
  return out;
}

std::vector<double> sum_responses(const PatientData& patient, const MeasurementLatents& latents,
                                  const ResponseCoefficients& coef, const ModelSpec& spec) {
  std::vector<MealShape> shapes;
  shapes.reserve(patient.events.size());
  for (std::size_t m = 0; m < patient.events.size(); ++m) {
    shapes.push_back(meal_shape(patient.events[m], entry_or_zero(latents.time_offsets, m),
                                latents.report_bias,
                                entry_or_zero(latents.log_amount_errors, m), coef, spec));
  }
  return sum_responses_at(shapes, patient.obs_times);
}

double log_posterior(const ParamVector& params, const std::vector<PatientData>& data,
                     const ModelSpec& spec) {
  const Model model(data, spec);
  if (params.layout.dim() != model.dim() ||
      static_cast<std::size_t>(params.values.size()) != model.dim()) {
    throw StructuralError("parameter layout does not match data and model variant");
  }
  return model.log_density({params.values.data(), model.dim()});
}

ValueAndGradient grad_log_posterior(const ParamVector& params,
                                    const std::vector<PatientData>& data, const ModelSpec& spec) {
  const Model model(data, spec);
  if (params.layout.dim() != model.dim() ||
      static_cast<std::size_t>(params.values.size()) != model.dim()) {
    throw StructuralError("parameter layout does not match data and model variant");
  }
  ValueAndGradient out;
  out.grad.resize(static_cast<Eigen::Index>(model.dim()));
  ad::Tape tape;
  out.value = model.log_density_gradient({params.values.data(), model.dim()},
                                         {out.grad.data(), model.dim()}, tape);
  out.divergent = !std::isfinite(out.value);
  return out;
}

}  // namespace eivtraj
