#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "eivtraj/eval.hpp"
#include "eivtraj/fit.hpp"
#include "eivtraj/io.hpp"
#include "eivtraj/simulate.hpp"

using namespace eivtraj;
namespace fs = std::filesystem;
using io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConvergence = 2;
constexpr int kExitInput = 3;
constexpr int kExitNumerical = 4;
constexpr double kRhatLimit = 1.05;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

// Everything a command needs; filled from the config file then the flags.
struct RunConfig {
  std::string command;
  std::string glucose;
  std::string meals;
  std::string out;
  std::string fit_dir;
  std::string baseline_dir;
  double train_days = 2.0;
  bool standardize_outcome = true;
  bool standardize_covariates = true;
  std::string units = "mmol/L";
  ModelSpec model;
  SamplerConfig sampler;
  SimConfig sim;
};

json to_json(const RunConfig& c) {
  return {{"command", c.command},
          {"glucose", c.glucose},
          {"meals", c.meals},
          {"out", c.out},
          {"fit", c.fit_dir},
          {"baseline", c.baseline_dir},
          {"train_days", c.train_days},
          {"standardize_outcome", c.standardize_outcome},
          {"standardize_covariates", c.standardize_covariates},
          {"units", c.units},
          {"model", io::to_json(c.model)},
          {"sampler", io::to_json(c.sampler)},
          {"sim", io::to_json(c.sim)}};
}

void apply_json(RunConfig& c, const json& j) {
  auto str = [&](const char* key, std::string& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::string>();
  };
  str("glucose", c.glucose);
  str("meals", c.meals);
  str("out", c.out);
  str("fit", c.fit_dir);
  str("baseline", c.baseline_dir);
  str("units", c.units);
  if (j.contains("train_days")) c.train_days = j.at("train_days").get<double>();
  if (j.contains("standardize_outcome")) c.standardize_outcome = j.at("standardize_outcome").get<bool>();
  if (j.contains("standardize_covariates"))
    c.standardize_covariates = j.at("standardize_covariates").get<bool>();
  if (j.contains("model")) c.model = io::model_spec_from_json(j.at("model"), c.model);
  if (j.contains("sampler")) c.sampler = io::sampler_config_from_json(j.at("sampler"), c.sampler);
  if (j.contains("sim")) c.sim = io::sim_config_from_json(j.at("sim"), c.sim);
}

// Command-line values land here and override the config only when given.
struct Flags {
  std::string config;
  std::string variant;
  std::string protocol;
  std::string trend;
  std::optional<double> sigma_x, sigma_t, sigma_d, train_days, target_accept;
  std::optional<std::size_t> inducing, chains, warmup, draws, max_depth;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> patients, meals_per_patient, covariates;
  std::optional<double> perturb_fraction, perturb_sd, response_scale, days, cadence, time_bias,
      time_jitter;
  bool no_std_outcome = false;
  bool no_std_covariates = false;
};

void apply_flags(RunConfig& c, const Flags& f) {
  if (!f.variant.empty()) c.model.variant = variant_from_string(f.variant);
  if (f.sigma_x) c.model.sigma_x = *f.sigma_x;
  if (f.sigma_t) c.model.sigma_t = *f.sigma_t;
  if (f.sigma_d) c.model.sigma_d = *f.sigma_d;
  if (f.inducing) c.model.inducing_count = *f.inducing;
  if (f.chains) c.sampler.chains = *f.chains;
  if (f.warmup) c.sampler.warmup = *f.warmup;
  if (f.draws) c.sampler.draws = *f.draws;
  if (f.max_depth) c.sampler.max_tree_depth = static_cast<int>(*f.max_depth);
  if (f.target_accept) c.sampler.target_accept = *f.target_accept;
  if (f.seed) {
    c.sampler.seed = *f.seed;
    c.sim.seed = *f.seed;
  }
  if (f.train_days) {
    c.train_days = *f.train_days;
    c.sim.train_days = *f.train_days;
  }
  if (f.no_std_outcome) c.standardize_outcome = false;
  if (f.no_std_covariates) c.standardize_covariates = false;
  if (!f.protocol.empty()) c.sim.protocol = protocol_from_string(f.protocol);
  if (!f.trend.empty()) c.sim.trend = trend_from_string(f.trend);
  if (f.patients) c.sim.n_patients = *f.patients;
  if (f.meals_per_patient) c.sim.meals_per_patient = *f.meals_per_patient;
  if (f.covariates) c.sim.covariate_dim = *f.covariates;
  if (f.perturb_fraction) c.sim.perturb_fraction = *f.perturb_fraction;
  if (f.perturb_sd) c.sim.perturb_sd = *f.perturb_sd;
  if (f.response_scale) c.sim.response_scale = *f.response_scale;
  if (f.days) c.sim.days = *f.days;
  if (f.cadence) c.sim.cadence = *f.cadence;
  if (f.time_bias) c.sim.time_bias = *f.time_bias;
  if (f.time_jitter) c.sim.time_jitter_sd = *f.time_jitter;
  if (const char* env = std::getenv("EIVTRAJ_THREADS")) {
    try {
      c.sampler.threads = static_cast<std::size_t>(std::stoul(env));
    } catch (const std::exception&) {
      throw InputError("EIVTRAJ_THREADS must be a non-negative integer");
    }
  }
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw InputError("missing " + what + " path");
  if (!fs::exists(path)) throw InputError(what + " not found: " + path);
}

void write_manifest(const fs::path& dir, const RunConfig& c, const std::vector<std::string>& files,
                    const std::vector<std::string>& argv) {
  json hashes = json::object();
  for (const auto& f : files) hashes[f] = sha256_file(dir / f);
  json m{{"command", c.command},
         {"argv", argv},
         {"config", to_json(c)},
         {"seed", c.command == "simulate" ? c.sim.seed : c.sampler.seed},
         {"artifacts", hashes}};
  io::write_json((dir / "manifest.json").string(), m);
}

// Data and model of a finished fit, rebuilt from its directory.
struct LoadedFit {
  RunConfig config;
  std::vector<PatientData> original;
  io::Standardization standardization;
  std::shared_ptr<const Model> model;
  PosteriorDraws raw;
};

LoadedFit load_fit(const std::string& dir, const std::string& glucose = "",
                   const std::string& meals = "") {
  const fs::path d(dir);
  if (!fs::exists(d / "config.json") || !fs::exists(d / "raw_draws.csv"))
    throw InputError("no fit found in " + dir);
  LoadedFit f;
  apply_json(f.config, io::read_json((d / "config.json").string()));
  f.config.model.validate();
  const std::string g = glucose.empty() ? f.config.glucose : glucose;
  const std::string m = meals.empty() ? f.config.meals : meals;
  require_file(g, "glucose");
  require_file(m, "meals");
  f.original = io::ingest(g, m, f.config.train_days);
  f.standardization = io::standardization_from_json(io::read_json((d / "standardization.json").string()));
  f.model = std::make_shared<const Model>(io::standardize(f.original, f.standardization), f.config.model);
  f.raw = io::read_draws((d / "raw_draws.csv").string());
  if (f.raw.dim() != f.model->dim()) throw StructuralError("draws do not match the model for " + dir);
  return f;
}

int run_fit(RunConfig c, const std::vector<std::string>& argv) {
  require_file(c.glucose, "glucose");
  require_file(c.meals, "meals");
  if (c.out.empty()) throw InputError("missing output directory");
  c.model.validate();
  c.sampler.validate();
  const auto original = io::ingest(c.glucose, c.meals, c.train_days);
  const auto s = io::fit_standardization(original, c.standardize_outcome, c.standardize_covariates);
  const FitResult fit = fit_model(io::standardize(original, s), c.model, c.sampler);

  const fs::path dir(c.out);
  fs::create_directories(dir);
  io::write_json((dir / "config.json").string(), to_json(c));
  io::write_json((dir / "standardization.json").string(), io::to_json(s));
  io::write_draws((dir / "draws.csv").string(), fit.draws);
  io::write_draws((dir / "raw_draws.csv").string(), fit.raw);
  json summary{{"variant", to_string(c.model.variant)},
               {"max_rhat", io::number(fit.max_rhat)},
               {"divergences", fit.draws.divergence_count()},
               {"parameters", io::to_json(fit.summary)}};
  io::write_json((dir / "summary.json").string(), summary);
  const auto tr = io::destandardize(posterior_trajectories(*fit.model, fit.raw), original, s);
  io::write_trajectories((dir / "trajectory.csv").string(), tr);
  io::write_meal_latents((dir / "meal_latents.csv").string(), meal_latents(*fit.model, fit.raw),
                         c.model.variant);
  write_manifest(dir,
                 c,
                 {"config.json", "standardization.json", "draws.csv", "raw_draws.csv", "summary.json",
                  "trajectory.csv", "meal_latents.csv"},
                 argv);

  std::cout << "fit " << to_string(c.model.variant) << ": max R-hat " << fit.max_rhat << ", "
            << fit.draws.divergence_count() << " divergences\n";
  if (!(fit.max_rhat <= kRhatLimit)) {
    std::cerr << "warning: R-hat above " << kRhatLimit << ", chains have not converged\n";
    return kExitConvergence;
  }
  return kExitOk;
}

int run_predict(RunConfig c, const std::vector<std::string>& argv) {
  if (c.out.empty()) throw InputError("missing output directory");
  const LoadedFit f = load_fit(c.fit_dir, c.glucose, c.meals);
  const auto tr = io::destandardize(posterior_trajectories(*f.model, f.raw), f.original, f.standardization);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  io::write_trajectories((dir / "prediction.csv").string(), tr, true);
  c.sampler = f.config.sampler;
  c.model = f.config.model;
  write_manifest(dir, c, {"prediction.csv"}, argv);
  return kExitOk;
}

int run_simulate(RunConfig c, const std::vector<std::string>& argv) {
  if (c.out.empty()) throw InputError("missing output directory");
  c.sim.validate();
  SimResult r;
  if (c.sim.protocol == SimProtocol::FromFit) {
    if (c.fit_dir.empty()) throw InputError("the from_fit protocol needs --fit");
    const LoadedFit f = load_fit(c.fit_dir);
    const PosteriorDraws post = io::read_draws((fs::path(c.fit_dir) / "draws.csv").string());
    c.model = f.config.model;
    r = simulate_from_fit(post, f.model->data(), c.sim, c.model);
  } else if (c.sim.protocol == SimProtocol::Generative) {
    r = simulate_generative(c.sim, c.model);
  } else {
    r = simulate_toy(c.sim, c.model);
  }
  const fs::path dir(c.out);
  fs::create_directories(dir);
  io::write_glucose((dir / "glucose.csv").string(), r.data);
  io::write_meals((dir / "meals.csv").string(), r.data);
  io::write_json((dir / "truth.json").string(), io::to_json(r.truth));
  write_manifest(dir, c, {"glucose.csv", "meals.csv", "truth.json"}, argv);
  return kExitOk;
}

json evaluate_json(const RunConfig& c) {
  const LoadedFit f = load_fit(c.fit_dir, c.glucose, c.meals);
  const auto tr = io::destandardize(posterior_trajectories(*f.model, f.raw), f.original, f.standardization);
  std::vector<PatientTrajectory> base;
  if (!c.baseline_dir.empty()) {
    const LoadedFit b = load_fit(c.baseline_dir, c.glucose, c.meals);
    if (b.original.size() != f.original.size())
      throw StructuralError("fit and baseline were trained on different datasets");
    for (std::size_t n = 0; n < f.original.size(); ++n) {
      if (b.original[n].id != f.original[n].id || b.original[n].obs_times != f.original[n].obs_times ||
          b.original[n].outcome != f.original[n].outcome)
        throw StructuralError("fit and baseline were trained on different datasets");
    }
    base = io::destandardize(posterior_trajectories(*b.model, b.raw), b.original, b.standardization);
  }
  const MetricReport rep =
      evaluate(tr, f.original, pointwise_loglik(*f.model, f.raw), base.empty() ? nullptr : &base);
  json j = io::to_json(rep);
  j["variant"] = to_string(f.config.model.variant);
  j["fit"] = c.fit_dir;
  if (!c.baseline_dir.empty()) j["baseline"] = c.baseline_dir;
  return j;
}

int run_evaluate(RunConfig c, const std::vector<std::string>& argv) {
  if (c.out.empty()) throw InputError("missing output directory");
  const json j = evaluate_json(c);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  io::write_json((dir / "metrics.json").string(), j);
  write_manifest(dir, c, {"metrics.json"}, argv);
  return kExitOk;
}

std::string cell(const json& v, int precision = 3) {
  if (v.is_null()) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v.get<double>();
  return s.str();
}

int run_report(const std::vector<std::string>& metric_files) {
  if (metric_files.empty()) throw InputError("report needs at least one metrics.json");
  const std::vector<std::string> cols{"M1", "M2", "M3", "M4", "M5", "p_value_U_test", "LOO", "pLOO", "SE_LOO"};
  std::cout << std::left << std::setw(16) << "Model" << std::right;
  for (const auto& h : cols) std::cout << std::setw(h.size() > 9 ? h.size() + 1 : 10) << h;
  std::cout << '\n';
  for (const auto& path : metric_files) {
    require_file(path, "metrics");
    const json j = io::read_json(path);
    const json& t = j.at("table");
    std::cout << std::left << std::setw(16) << j.value("variant", std::string("?")) << std::right;
    for (const auto& h : cols)
      std::cout << std::setw(h.size() > 9 ? h.size() + 1 : 10) << cell(t.at(h), h[0] == 'M' || h[0] == 'p' ? 3 : 1);
    std::cout << '\n';
  }
  return kExitOk;
}

void add_model_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--variant", f.variant, "ind, hier, hier+time or hier+time+cov");
  cmd->add_option("--sigma-x", f.sigma_x, "SD of log amount error");
  cmd->add_option("--sigma-t", f.sigma_t, "per-meal time jitter SD (minutes)");
  cmd->add_option("--sigma-d", f.sigma_d, "per-patient reporting bias SD (minutes)");
  cmd->add_option("--inducing", f.inducing, "inducing points per patient");
}

void add_data_flags(CLI::App* cmd, RunConfig& c, Flags& f) {
  cmd->add_option("--glucose", c.glucose, "glucose CSV");
  cmd->add_option("--meals", c.meals, "meals CSV");
  cmd->add_option("--train-days", f.train_days, "days used for training");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment-response trajectories with errors-in-variables"};
  app.require_subcommand(1);
  RunConfig c;
  Flags f;
  std::vector<std::string> metric_files;
  app.add_option("--config", f.config, "JSON config; flags override it");

  auto* fit = app.add_subcommand("fit", "sample the posterior and write fit artifacts");
  add_data_flags(fit, c, f);
  add_model_flags(fit, f);
  fit->add_option("--out", c.out, "output directory")->required();
  fit->add_option("--chains", f.chains);
  fit->add_option("--warmup", f.warmup);
  fit->add_option("--draws", f.draws);
  fit->add_option("--max-tree-depth", f.max_depth);
  fit->add_option("--target-accept", f.target_accept);
  fit->add_option("--seed", f.seed);
  fit->add_flag("--no-standardize-outcome", f.no_std_outcome);
  fit->add_flag("--no-standardize-covariates", f.no_std_covariates);

  auto* predict = app.add_subcommand("predict", "posterior trajectories for the test period");
  predict->add_option("--fit", c.fit_dir, "fit directory")->required();
  add_data_flags(predict, c, f);
  predict->add_option("--out", c.out, "output directory")->required();

  auto* sim = app.add_subcommand("simulate", "write a synthetic dataset with ground truth");
  add_model_flags(sim, f);
  sim->add_option("--out", c.out, "output directory")->required();
  sim->add_option("--protocol", f.protocol, "toy, from_fit or generative");
  sim->add_option("--fit", c.fit_dir, "fit directory for from_fit");
  sim->add_option("--trend", f.trend, "linear or gp");
  sim->add_option("--patients", f.patients);
  sim->add_option("--meals-per-patient", f.meals_per_patient);
  sim->add_option("--covariates", f.covariates);
  sim->add_option("--perturb-fraction", f.perturb_fraction);
  sim->add_option("--perturb-sd", f.perturb_sd);
  sim->add_option("--response-scale", f.response_scale);
  sim->add_option("--days", f.days);
  sim->add_option("--cadence", f.cadence);
  sim->add_option("--time-bias", f.time_bias);
  sim->add_option("--time-jitter", f.time_jitter);
  sim->add_option("--train-days", f.train_days);
  sim->add_option("--seed", f.seed);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "metrics, LOO and the U-test against a baseline");
  evaluate_cmd->add_option("--fit", c.fit_dir, "fit directory")->required();
  evaluate_cmd->add_option("--baseline", c.baseline_dir, "baseline fit directory");
  add_data_flags(evaluate_cmd, c, f);
  evaluate_cmd->add_option("--out", c.out, "output directory")->required();

  auto* report = app.add_subcommand("report", "print a comparison table of metrics files");
  report->add_option("metrics", metric_files, "metrics.json files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    // command-line paths win over the config file
    RunConfig from_flags = c;
    c = RunConfig{};
    if (!f.config.empty()) {
      require_file(f.config, "config");
      apply_json(c, io::read_json(f.config));
    }
    for (auto [dst, src] : {std::pair{&c.glucose, &from_flags.glucose}, {&c.meals, &from_flags.meals},
                            {&c.out, &from_flags.out}, {&c.fit_dir, &from_flags.fit_dir},
                            {&c.baseline_dir, &from_flags.baseline_dir}})
      if (!src->empty()) *dst = *src;
    apply_flags(c, f);
    c.command = app.get_subcommands().front()->get_name();

    if (*fit) return run_fit(c, args);
    if (*predict) return run_predict(c, args);
    if (*sim) return run_simulate(c, args);
    if (*evaluate_cmd) return run_evaluate(c, args);
    return run_report(metric_files);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const StructuralError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DomainError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  }
}
