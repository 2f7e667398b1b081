#include "eivtraj/fit.hpp"

#include <cmath>
#include <limits>

#include "eivtraj/gp.hpp"

namespace eivtraj {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kZ95 = 1.6448536269514722;

Eigen::VectorXd training_residual(const Model& model, std::size_t n,
                                  const std::vector<MealShape>& shapes) {
  const auto times = model.train_times(n);
  const auto y = model.train_outcome(n);
  const std::vector<double> resp = sum_responses_at(shapes, times);
  Eigen::VectorXd r(static_cast<Eigen::Index>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) r[static_cast<Eigen::Index>(i)] = y[i] - resp[i];
  return r;
}

}  // namespace

DensityFactory density_factory(std::shared_ptr<const Model> model) {
  return [model]() -> LogDensityGradient {
    auto tape = std::make_shared<ad::Tape>();
    return [model, tape](std::span<const double> x, std::span<double> grad) {
      return model->log_density_gradient(x, grad, *tape);
    };
  };
}

PosteriorDraws constrain(const Model& model, const PosteriorDraws& raw) {
  PosteriorDraws out = raw;
  out.names = model.constrained_names();
  for (std::size_t k = 0; k < raw.total(); ++k) {
    const Eigen::VectorXd v = model.constrain(raw.row(k));
    auto dst = out.row(k);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = v[static_cast<Eigen::Index>(j)];
  }
  return out;
}

FitResult fit_model(std::vector<PatientData> data, const ModelSpec& spec,
                    const SamplerConfig& config) {
  FitResult fit;
  auto model = std::make_shared<const Model>(std::move(data), spec);
  fit.model = model;
  const Eigen::VectorXd init = model->initial_point();
  fit.raw = nuts_sample(density_factory(model), config,
                        {init.data(), static_cast<std::size_t>(init.size())});
  fit.raw.names = model->layout().coordinate_names();
  fit.draws = constrain(*model, fit.raw);
  if (config.draws >= 4) {
    fit.summary = diagnostics(fit.draws);
    fit.max_rhat = max_rhat(fit.summary);
  } else {
    fit.max_rhat = std::numeric_limits<double>::quiet_NaN();
  }
  return fit;
}

std::vector<std::size_t> thin_indices(std::size_t total, std::size_t max_count) {
  std::vector<std::size_t> idx;
  if (total == 0 || max_count == 0) return idx;
  const std::size_t count = std::min(total, max_count);
  for (std::size_t i = 0; i < count; ++i) idx.push_back(i * total / count);
  return idx;
}

std::vector<PatientTrajectory> posterior_trajectories(const Model& model,
                                                      const PosteriorDraws& raw,
                                                      std::size_t max_draws) {
  const auto& data = model.data();
  const std::vector<std::size_t> picks = thin_indices(raw.total(), max_draws);
  if (picks.empty()) throw DomainError("no posterior draws");
  const double s = static_cast<double>(picks.size());

  std::vector<PatientTrajectory> out;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const PatientData& d = data[n];
    const std::size_t g = d.size();
    PatientTrajectory tr;
    tr.id = d.id;
    tr.times = d.obs_times;
    tr.train_mask = d.train_mask;
    tr.outcome = d.outcome;
    std::vector<double> t_sum(g, 0.0), t_sq(g, 0.0), t_var(g, 0.0);
    std::vector<double> r_sum(g, 0.0), f_sum(g, 0.0), f_sq(g, 0.0);
    for (std::size_t k : picks) {
      const PatientState st = model.patient_state(raw.row(k), n);
      const std::vector<MealShape> shapes = model.meal_shapes(n, st);
      const Eigen::VectorXd r = training_residual(model, n, shapes);
      const gp::TrendPosterior trend =
          gp::trend_posterior({r.data(), static_cast<std::size_t>(r.size())}, model.train_times(n),
                              d.obs_times, model.inducing(n), st.kernel, st.sigma_y);
      const std::vector<double> resp = sum_responses_at(shapes, d.obs_times);
      for (std::size_t i = 0; i < g; ++i) {
        const double f = trend.mean[i] + resp[i];
        t_sum[i] += trend.mean[i];
        t_sq[i] += trend.mean[i] * trend.mean[i];
        t_var[i] += trend.var[i];
        r_sum[i] += resp[i];
        f_sum[i] += f;
        f_sq[i] += f * f;
      }
    }
    for (std::size_t i = 0; i < g; ++i) {
      const double tm = t_sum[i] / s;
      const double fm = f_sum[i] / s;
      const double within = t_var[i] / s;
      const double t_between = std::max(0.0, t_sq[i] / s - tm * tm);
      const double f_between = std::max(0.0, f_sq[i] / s - fm * fm);
      const double fsd = std::sqrt(within + f_between);
      tr.trend_mean.push_back(tm);
      tr.trend_sd.push_back(std::sqrt(within + t_between));
      tr.response_mean.push_back(r_sum[i] / s);
      tr.total_mean.push_back(fm);
      tr.total_sd.push_back(fsd);
      tr.lower.push_back(fm - kZ95 * fsd);
      tr.upper.push_back(fm + kZ95 * fsd);
    }
    out.push_back(std::move(tr));
  }
  return out;
}

std::vector<MealLatentSummary> meal_latents(const Model& model, const PosteriorDraws& raw) {
  const auto& data = model.data();
  const std::size_t total = raw.total();
  if (total == 0) throw DomainError("no posterior draws");
  const double s = static_cast<double>(total);
  std::vector<MealLatentSummary> out;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const std::size_t mcount = data[n].events.size();
    std::vector<double> sh(mcount, 0.0), sh2(mcount, 0.0), eps(mcount, 0.0);
    std::vector<double> ld(mcount, 0.0), ld2(mcount, 0.0);
    for (std::size_t k = 0; k < total; ++k) {
      const PatientState st = model.patient_state(raw.row(k), n);
      for (std::size_t m = 0; m < mcount; ++m) {
        const double e = st.latents.time_offsets[m];
        const double shift = st.latents.report_bias + e;
        const double l = st.latents.log_amount_errors[m];
        sh[m] += shift;
        sh2[m] += shift * shift;
        eps[m] += e;
        ld[m] += l;
        ld2[m] += l * l;
      }
    }
    const auto idx = model.latent_index(n);
    for (std::size_t m = 0; m < mcount; ++m) {
      MealLatentSummary row;
      row.patient_id = data[n].id;
      row.meal = m;
      row.observed_time = data[n].events[m].observed_time;
      row.has_latent = idx[m] >= 0 && has_time_error(model.spec().variant);
      row.time_shift_mean = sh[m] / s;
      row.time_shift_sd = std::sqrt(std::max(0.0, sh2[m] / s - row.time_shift_mean * row.time_shift_mean));
      row.time_offset_mean = eps[m] / s;
      row.log_delta_mean = ld[m] / s;
      row.log_delta_sd = std::sqrt(std::max(0.0, ld2[m] / s - row.log_delta_mean * row.log_delta_mean));
      row.estimated_time = row.observed_time - row.time_shift_mean;
      out.push_back(row);
    }
  }
  return out;
}

std::vector<ResponseCoefficients> posterior_mean_coefficients(const Model& model,
                                                              const PosteriorDraws& raw) {
  if (raw.total() == 0) throw DomainError("no posterior draws");
  const Eigen::VectorXd mean = raw.mean();
  std::vector<ResponseCoefficients> out;
  for (std::size_t n = 0; n < model.data().size(); ++n) {
    out.push_back(model.patient_state({mean.data(), static_cast<std::size_t>(mean.size())}, n).coef);
  }
  return out;
}

Eigen::MatrixXd pointwise_loglik(const Model& model, const PosteriorDraws& raw,
                                 std::size_t max_draws) {
  const std::vector<std::size_t> picks = thin_indices(raw.total(), max_draws);
  std::size_t obs = 0;
  for (std::size_t n = 0; n < model.data().size(); ++n) obs += model.train_times(n).size();
  Eigen::MatrixXd ll(static_cast<Eigen::Index>(picks.size()), static_cast<Eigen::Index>(obs));
  for (std::size_t row = 0; row < picks.size(); ++row) {
    Eigen::Index col = 0;
    for (std::size_t n = 0; n < model.data().size(); ++n) {
      const PatientState st = model.patient_state(raw.row(picks[row]), n);
      const Eigen::VectorXd r = training_residual(model, n, model.meal_shapes(n, st));
      const gp::LowRankCovariance cov(model.train_times(n), model.inducing(n), st.kernel,
                                      st.sigma_y);
      const Eigen::VectorXd g = cov.solve(r);
      const Eigen::VectorXd cbar = cov.inverse_diagonal();
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        ll(static_cast<Eigen::Index>(row), col++) =
            -kHalfLog2Pi + 0.5 * std::log(cbar[i]) - 0.5 * g[i] * g[i] / cbar[i];
      }
    }
  }
  return ll;
}

}  // namespace eivtraj
