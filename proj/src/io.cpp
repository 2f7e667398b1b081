#include "eivtraj/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace eivtraj::io {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw InputError(where + ": cannot parse number '" + s + "'");
  }
  return v;
}

struct CsvFile {
  std::string header;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // line number, fields
};

CsvFile read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  CsvFile f;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      f.header = line;
      continue;
    }
    if (line.empty()) continue;
    f.rows.emplace_back(lineno, split_line(line));
  }
  return f;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  return out;
}

std::vector<std::string> meal_columns(std::size_t p) {
  if (p == kNutrients.size()) return kNutrients;
  std::vector<std::string> c;
  for (std::size_t i = 0; i < p; ++i) c.push_back("x" + std::to_string(i));
  return c;
}

}  // namespace

std::vector<bool> day_split(const std::vector<double>& times, double train_days) {
  std::vector<bool> mask;
  for (double t : times) mask.push_back(std::floor(t / kMinutesPerDay) < train_days);
  return mask;
}

std::vector<PatientData> ingest(const std::string& glucose_path, const std::string& meals_path,
                                double train_days) {
  const CsvFile g = read_csv(glucose_path);
  if (g.header != kGlucoseHeader) {
    throw InputError(glucose_path + ": header must be '" + kGlucoseHeader + "'");
  }
  std::vector<PatientData> data;
  std::map<std::string, std::size_t> index;
  std::vector<double> origin;
  for (const auto& [line, fields] : g.rows) {
    const std::string where = glucose_path + " row " + std::to_string(line);
    if (fields.size() != 3) throw InputError(where + ": expected 3 fields");
    auto [it, inserted] = index.emplace(fields[0], data.size());
    if (inserted) {
      data.emplace_back();
      data.back().id = fields[0];
    }
    PatientData& d = data[it->second];
    const double t = parse_double(fields[1], where);
    const double y = parse_double(fields[2], where);
    if (!std::isfinite(t) || !std::isfinite(y)) throw InputError(where + ": non-finite value");
    if (!d.obs_times.empty()) {
      if (t == d.obs_times.back()) throw InputError(where + ": duplicated timestamp");
      if (t < d.obs_times.back()) throw InputError(where + ": times not increasing");
    }
    d.obs_times.push_back(t);
    d.outcome.push_back(y);
  }
  for (auto& d : data) {
    const double t0 = d.obs_times.front();
    origin.push_back(t0);
    for (double& t : d.obs_times) t -= t0;
    d.train_mask = day_split(d.obs_times, train_days);
  }

  const CsvFile m = read_csv(meals_path);
  std::size_t p = kNutrients.size();
  if (!m.header.empty() || !m.rows.empty()) {
    const auto cols = split_line(m.header);
    if (m.header != kMealsHeader) {
      bool generic = cols.size() > 2 && cols[0] == "patient_id" && cols[1] == "time_min";
      for (std::size_t i = 2; generic && i < cols.size(); ++i) generic = cols[i] == "x" + std::to_string(i - 2);
      if (!generic) throw InputError(meals_path + ": header must be '" + kMealsHeader + "'");
    }
    p = cols.size() - 2;
  }
  for (const auto& [line, fields] : m.rows) {
    const std::string where = meals_path + " row " + std::to_string(line);
    if (fields.size() != p + 2) throw InputError(where + ": expected " + std::to_string(p + 2) + " fields");
    const auto it = index.find(fields[0]);
    if (it == index.end()) throw InputError(where + ": unknown patient '" + fields[0] + "'");
    TreatmentEvent ev;
    ev.observed_time = parse_double(fields[1], where) - origin[it->second];
    if (!std::isfinite(ev.observed_time)) throw InputError(where + ": non-finite time");
    for (std::size_t i = 0; i < p; ++i) {
      const double x = parse_double(fields[i + 2], where);
      if (!(x >= 0.0) || !std::isfinite(x)) throw InputError(where + ": negative or non-finite nutrient");
      ev.covariates.push_back(x);
    }
    data[it->second].events.push_back(std::move(ev));
  }
  for (const auto& d : data) {
    try {
      d.validate();
    } catch (const DomainError& e) {
      throw InputError(e.what());
    }
  }
  return data;
}

void write_glucose(const std::string& path, const std::vector<PatientData>& data) {
  auto out = open_out(path);
  out << kGlucoseHeader << '\n';
  for (const auto& d : data)
    for (std::size_t i = 0; i < d.size(); ++i)
      out << d.id << ',' << fmt(d.obs_times[i]) << ',' << fmt(d.outcome[i]) << '\n';
}

void write_meals(const std::string& path, const std::vector<PatientData>& data) {
  auto out = open_out(path);
  const std::size_t p = covariate_dim(data);
  const auto cols = meal_columns(p == 0 ? kNutrients.size() : p);
  out << "patient_id,time_min";
  for (const auto& c : cols) out << ',' << c;
  out << '\n';
  for (const auto& d : data) {
    for (const auto& ev : d.events) {
      out << d.id << ',' << fmt(ev.observed_time);
      for (double x : ev.covariates) out << ',' << fmt(x);
      out << '\n';
    }
  }
}

Standardization fit_standardization(const std::vector<PatientData>& data, bool outcome,
                                    bool covariates) {
  Standardization s;
  s.outcome = outcome;
  s.covariates = covariates;
  const std::size_t p = covariate_dim(data);
  s.covariate_scale.assign(p, 1.0);
  double ss = 0.0;
  std::size_t count = 0;
  std::vector<double> sums(p, 0.0);
  std::size_t meals = 0;
  for (const auto& d : data) {
    s.ids.push_back(d.id);
    double sum = 0.0;
    std::size_t k = 0;
    double last_train = -INFINITY;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!d.train_mask[i]) continue;
      sum += d.outcome[i];
      ++k;
      last_train = d.obs_times[i];
    }
    const double center = outcome && k ? sum / static_cast<double>(k) : 0.0;
    s.outcome_center.push_back(center);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!d.train_mask[i]) continue;
      ss += (d.outcome[i] - center) * (d.outcome[i] - center);
      ++count;
    }
    for (const auto& ev : d.events) {
      if (ev.observed_time > last_train) continue;
      for (std::size_t j = 0; j < p; ++j) sums[j] += ev.covariates[j];
      ++meals;
    }
  }
  if (outcome && count > 1) {
    const double sd = std::sqrt(ss / static_cast<double>(count - 1));
    if (sd > 0.0) s.outcome_scale = sd;
  }
  if (covariates && meals > 0) {
    for (std::size_t j = 0; j < p; ++j) {
      const double mean = sums[j] / static_cast<double>(meals);
      if (mean > 0.0) s.covariate_scale[j] = mean;
    }
  }
  return s;
}

std::vector<PatientData> standardize(std::vector<PatientData> data, const Standardization& s) {
  if (data.size() != s.ids.size()) throw StructuralError("standardization covers different patients");
  for (std::size_t n = 0; n < data.size(); ++n) {
    if (data[n].id != s.ids[n]) throw StructuralError("standardization patient order differs");
    for (double& y : data[n].outcome) y = (y - s.outcome_center[n]) / s.outcome_scale;
    for (auto& ev : data[n].events) {
      if (ev.covariates.size() != s.covariate_scale.size()) {
        throw StructuralError("standardization covariate count differs");
      }
      for (std::size_t j = 0; j < ev.covariates.size(); ++j) ev.covariates[j] /= s.covariate_scale[j];
    }
  }
  return data;
}

std::vector<PatientTrajectory> destandardize(std::vector<PatientTrajectory> tr,
                                             const std::vector<PatientData>& original,
                                             const Standardization& s) {
  for (std::size_t n = 0; n < tr.size(); ++n) {
    const double c = s.outcome_center[n];
    const double k = s.outcome_scale;
    auto& t = tr[n];
    t.outcome = original[n].outcome;
    for (std::size_t i = 0; i < t.times.size(); ++i) {
      t.trend_mean[i] = t.trend_mean[i] * k + c;
      t.trend_sd[i] *= k;
      t.response_mean[i] *= k;
      t.total_mean[i] = t.total_mean[i] * k + c;
      t.total_sd[i] *= k;
      t.lower[i] = t.lower[i] * k + c;
      t.upper[i] = t.upper[i] * k + c;
    }
  }
  return tr;
}

void write_draws(const std::string& path, const PosteriorDraws& draws) {
  auto out = open_out(path);
  out << "chain,draw,lp__,diverging,tree_depth";
  for (const auto& n : draws.names) out << ',' << n;
  out << '\n';
  for (std::size_t c = 0; c < draws.chains; ++c) {
    for (std::size_t k = 0; k < draws.draws; ++k) {
      const std::size_t r = c * draws.draws + k;
      out << c << ',' << k << ',' << fmt(draws.logp[r]) << ',' << int(draws.divergent[r]) << ','
          << draws.tree_depth[r];
      for (double v : draws.row(r)) out << ',' << fmt(v);
      out << '\n';
    }
  }
}

PosteriorDraws read_draws(const std::string& path) {
  const CsvFile f = read_csv(path);
  const auto cols = split_line(f.header);
  if (cols.size() < 5 || cols[0] != "chain" || cols[2] != "lp__") {
    throw InputError(path + ": not a draws file");
  }
  PosteriorDraws d;
  d.names.assign(cols.begin() + 5, cols.end());
  std::size_t max_chain = 0;
  for (const auto& [line, fields] : f.rows) {
    const std::string where = path + " row " + std::to_string(line);
    if (fields.size() != cols.size()) throw InputError(where + ": wrong field count");
    const auto chain = static_cast<std::size_t>(parse_double(fields[0], where));
    max_chain = std::max(max_chain, chain);
    if (chain == 0) ++d.draws;
    d.logp.push_back(parse_double(fields[2], where));
    d.divergent.push_back(fields[3] == "1" ? 1 : 0);
    d.tree_depth.push_back(static_cast<int>(parse_double(fields[4], where)));
    for (std::size_t j = 5; j < fields.size(); ++j) d.values.push_back(parse_double(fields[j], where));
  }
  d.chains = f.rows.empty() ? 0 : max_chain + 1;
  if (d.chains * d.draws != f.rows.size()) throw InputError(path + ": chains of unequal length");
  d.n_leapfrog.assign(f.rows.size(), 0);
  d.accept_stat.assign(f.rows.size(), 0.0);
  return d;
}

void write_trajectories(const std::string& path, const std::vector<PatientTrajectory>& tr,
                        bool test_only) {
  auto out = open_out(path);
  out << "patient_id,time_min,split,outcome,trend_mean,response_mean,total_mean,lower_5,upper_95\n";
  for (const auto& t : tr) {
    for (std::size_t i = 0; i < t.times.size(); ++i) {
      if (test_only && t.train_mask[i]) continue;
      out << t.id << ',' << fmt(t.times[i]) << ',' << (t.train_mask[i] ? "train" : "test") << ','
          << fmt(t.outcome[i]) << ',' << fmt(t.trend_mean[i]) << ',' << fmt(t.response_mean[i])
          << ',' << fmt(t.total_mean[i]) << ',' << fmt(t.lower[i]) << ',' << fmt(t.upper[i])
          << '\n';
    }
  }
}

void write_meal_latents(const std::string& path, const std::vector<MealLatentSummary>& rows,
                        Variant variant) {
  auto out = open_out(path);
  out << "patient_id,meal,observed_time,has_latent";
  if (has_time_error(variant)) out << ",time_shift_mean,time_shift_sd,time_offset_mean,estimated_time";
  if (has_covariate_error(variant)) out << ",log_delta_mean,log_delta_sd,delta_mean";
  out << '\n';
  for (const auto& r : rows) {
    out << r.patient_id << ',' << r.meal << ',' << fmt(r.observed_time) << ',' << int(r.has_latent);
    if (has_time_error(variant)) {
      out << ',' << fmt(r.time_shift_mean) << ',' << fmt(r.time_shift_sd) << ','
          << fmt(r.time_offset_mean) << ',' << fmt(r.estimated_time);
    }
    if (has_covariate_error(variant)) {
      out << ',' << fmt(r.log_delta_mean) << ',' << fmt(r.log_delta_sd) << ','
          << fmt(std::exp(r.log_delta_mean));
    }
    out << '\n';
  }
}

void write_pareto_k(const std::string& path, const LooResult& loo) {
  auto out = open_out(path);
  out << "observation,pareto_k,elpd_i\n";
  for (std::size_t i = 0; i < loo.pareto_k.size(); ++i) {
    out << i << ',' << fmt(loo.pareto_k[i]) << ',' << fmt(loo.pointwise_elpd[i]) << '\n';
  }
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json to_json(const ModelSpec& s) {
  return {{"variant", to_string(s.variant)},
          {"sigma_x", s.sigma_x},
          {"sigma_t", s.sigma_t},
          {"sigma_d", s.sigma_d},
          {"sigma_y_scale", s.sigma_y_scale},
          {"sigma_h_scale", s.sigma_h_scale},
          {"sigma_l_scale", s.sigma_l_scale},
          {"beta_tilde_scale", s.beta_tilde_scale},
          {"independent_beta_scale", s.independent_beta_scale},
          {"se_amplitude_scale", s.se_amplitude_scale},
          {"const_amplitude_scale", s.const_amplitude_scale},
          {"se_lengthscale_log_mean", s.se_lengthscale_log_mean},
          {"se_lengthscale_log_sd", s.se_lengthscale_log_sd},
          {"length_scale_floor", s.length_scale_floor},
          {"length_scale_unit", s.length_scale_unit},
          {"inducing_count", s.inducing_count},
          {"noncentered", s.noncentered}};
}

ModelSpec model_spec_from_json(const json& j, ModelSpec s) {
  if (j.contains("variant")) s.variant = variant_from_string(j.at("variant").get<std::string>());
  s.sigma_x = j.value("sigma_x", s.sigma_x);
  s.sigma_t = j.value("sigma_t", s.sigma_t);
  s.sigma_d = j.value("sigma_d", s.sigma_d);
  s.sigma_y_scale = j.value("sigma_y_scale", s.sigma_y_scale);
  s.sigma_h_scale = j.value("sigma_h_scale", s.sigma_h_scale);
  s.sigma_l_scale = j.value("sigma_l_scale", s.sigma_l_scale);
  s.beta_tilde_scale = j.value("beta_tilde_scale", s.beta_tilde_scale);
  s.independent_beta_scale = j.value("independent_beta_scale", s.independent_beta_scale);
  s.se_amplitude_scale = j.value("se_amplitude_scale", s.se_amplitude_scale);
  s.const_amplitude_scale = j.value("const_amplitude_scale", s.const_amplitude_scale);
  s.se_lengthscale_log_mean = j.value("se_lengthscale_log_mean", s.se_lengthscale_log_mean);
  s.se_lengthscale_log_sd = j.value("se_lengthscale_log_sd", s.se_lengthscale_log_sd);
  s.length_scale_floor = j.value("length_scale_floor", s.length_scale_floor);
  s.length_scale_unit = j.value("length_scale_unit", s.length_scale_unit);
  s.inducing_count = j.value("inducing_count", s.inducing_count);
  s.noncentered = j.value("noncentered", s.noncentered);
  return s;
}

json to_json(const SamplerConfig& c) {
  return {{"chains", c.chains},
          {"warmup", c.warmup},
          {"draws", c.draws},
          {"target_accept", c.target_accept},
          {"max_tree_depth", c.max_tree_depth},
          {"seed", c.seed},
          {"init_jitter", c.init_jitter},
          {"max_delta_h", c.max_delta_h}};
}

SamplerConfig sampler_config_from_json(const json& j, SamplerConfig c) {
  c.chains = j.value("chains", c.chains);
  c.warmup = j.value("warmup", c.warmup);
  c.draws = j.value("draws", c.draws);
  c.target_accept = j.value("target_accept", c.target_accept);
  c.max_tree_depth = j.value("max_tree_depth", c.max_tree_depth);
  c.seed = j.value("seed", c.seed);
  c.init_jitter = j.value("init_jitter", c.init_jitter);
  c.max_delta_h = j.value("max_delta_h", c.max_delta_h);
  return c;
}

json to_json(const SimConfig& c) {
  return {{"protocol", to_string(c.protocol)},
          {"n_patients", c.n_patients},
          {"meals_per_patient", c.meals_per_patient},
          {"covariate_dim", c.covariate_dim},
          {"perturb_fraction", c.perturb_fraction},
          {"perturb_sd", c.perturb_sd},
          {"response_scale", c.response_scale},
          {"trend", to_string(c.trend)},
          {"seed", c.seed},
          {"days", c.days},
          {"cadence", c.cadence},
          {"train_days", c.train_days},
          {"trend_slope", c.trend_slope},
          {"trend_intercept", c.trend_intercept},
          {"noise_sd", c.noise_sd},
          {"toy_shift_mean", c.toy_shift_mean},
          {"covariate_low", c.covariate_low},
          {"covariate_high", c.covariate_high},
          {"time_bias", c.time_bias},
          {"time_jitter_sd", c.time_jitter_sd},
          {"use_posterior_mean", c.use_posterior_mean}};
}

SimConfig sim_config_from_json(const json& j, SimConfig c) {
  if (j.contains("protocol")) c.protocol = protocol_from_string(j.at("protocol").get<std::string>());
  if (j.contains("trend")) c.trend = trend_from_string(j.at("trend").get<std::string>());
  c.n_patients = j.value("n_patients", c.n_patients);
  c.meals_per_patient = j.value("meals_per_patient", c.meals_per_patient);
  c.covariate_dim = j.value("covariate_dim", c.covariate_dim);
  c.perturb_fraction = j.value("perturb_fraction", c.perturb_fraction);
  c.perturb_sd = j.value("perturb_sd", c.perturb_sd);
  c.response_scale = j.value("response_scale", c.response_scale);
  c.seed = j.value("seed", c.seed);
  c.days = j.value("days", c.days);
  c.cadence = j.value("cadence", c.cadence);
  c.train_days = j.value("train_days", c.train_days);
  c.trend_slope = j.value("trend_slope", c.trend_slope);
  c.trend_intercept = j.value("trend_intercept", c.trend_intercept);
  c.noise_sd = j.value("noise_sd", c.noise_sd);
  c.toy_shift_mean = j.value("toy_shift_mean", c.toy_shift_mean);
  c.covariate_low = j.value("covariate_low", c.covariate_low);
  c.covariate_high = j.value("covariate_high", c.covariate_high);
  c.time_bias = j.value("time_bias", c.time_bias);
  c.time_jitter_sd = j.value("time_jitter_sd", c.time_jitter_sd);
  c.use_posterior_mean = j.value("use_posterior_mean", c.use_posterior_mean);
  return c;
}

json to_json(const Standardization& s) {
  return {{"outcome", s.outcome},
          {"covariates", s.covariates},
          {"ids", s.ids},
          {"outcome_center", s.outcome_center},
          {"outcome_scale", s.outcome_scale},
          {"covariate_scale", s.covariate_scale}};
}

Standardization standardization_from_json(const json& j) {
  Standardization s;
  s.outcome = j.at("outcome").get<bool>();
  s.covariates = j.at("covariates").get<bool>();
  s.ids = j.at("ids").get<std::vector<std::string>>();
  s.outcome_center = j.at("outcome_center").get<std::vector<double>>();
  s.outcome_scale = j.at("outcome_scale").get<double>();
  s.covariate_scale = j.at("covariate_scale").get<std::vector<double>>();
  return s;
}

json to_json(const std::vector<ParamDiagnostics>& diag) {
  json arr = json::array();
  for (const auto& p : diag) {
    arr.push_back({{"name", p.name},
                   {"mean", number(p.mean)},
                   {"sd", number(p.sd)},
                   {"q05", number(p.q05)},
                   {"q95", number(p.q95)},
                   {"rhat", number(p.rhat)},
                   {"ess_bulk", number(p.ess_bulk)},
                   {"ess_tail", number(p.ess_tail)},
                   {"degenerate", p.degenerate}});
  }
  return arr;
}

json to_json(const GroundTruth& truth) {
  json patients = json::array();
  for (const auto& t : truth.patients) {
    std::vector<int> mask(t.perturbed.begin(), t.perturbed.end());
    patients.push_back({{"id", t.id},
                        {"beta_h", t.coef.beta_h},
                        {"beta_l", t.coef.beta_l},
                        {"kernel",
                         {{"se_amplitude", t.kernel.se_amplitude},
                          {"se_lengthscale", t.kernel.se_lengthscale},
                          {"const_amplitude", t.kernel.const_amplitude}}},
                        {"noise_sd", t.noise_sd},
                        {"true_times", t.true_times},
                        {"true_covariates", t.true_covariates},
                        {"perturbed", mask},
                        {"delta", t.delta},
                        {"additive_error", t.additive_error},
                        {"time_shift", t.time_shift}});
  }
  return {{"protocol", to_string(truth.protocol)}, {"patients", patients}};
}

json to_json(const LooResult& loo) {
  return {{"elpd_loo", number(loo.elpd_loo)},
          {"p_loo", number(loo.p_loo)},
          {"se_loo", number(loo.se_loo)},
          {"looic", number(loo.looic)},
          {"lpd", number(loo.lpd)},
          {"pareto_k_above_0.7", loo.bad_k},
          {"dropped_observations", loo.dropped}};
}

json to_json(const MetricReport& rep) {
  json patients = json::array();
  for (const auto& p : rep.patients) {
    patients.push_back({{"id", p.id},
                        {"M1", number(p.m1)},
                        {"M2", number(p.m2)},
                        {"M3", number(p.m3)},
                        {"M4", number(p.m4)},
                        {"M5", number(p.m5)},
                        {"included", p.included}});
  }
  json excluded = json::array();
  for (const auto& [id, reason] : rep.excluded) excluded.push_back({{"id", id}, {"reason", reason}});
  json table = {{"M1", number(rep.m1)},
                {"M2", number(rep.m2)},
                {"M3", number(rep.m3)},
                {"M4", number(rep.m4)},
                {"M5", number(rep.m5)},
                {"p_value_U_test", rep.u_test ? number(rep.u_test->p_one_sided) : json(nullptr)},
                {"LOO", number(rep.loo.looic)},
                {"pLOO", number(rep.loo.p_loo)},
                {"SE_LOO", number(2.0 * rep.loo.se_loo)}};
  json out = {{"table", table},
              {"loo", to_json(rep.loo)},
              {"loo_orientation", "LOO is -2*elpd_loo (lower is better); elpd_loo is higher-is-better"},
              {"patients", patients},
              {"excluded_patients", excluded}};
  if (rep.u_test) {
    out["u_test"] = {{"u", rep.u_test->u},
                     {"p_one_sided", number(rep.u_test->p_one_sided)},
                     {"exact", rep.u_test->exact},
                     {"degenerate", rep.u_test->degenerate}};
  }
  return out;
}

void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

}  // namespace eivtraj::io
