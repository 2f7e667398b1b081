#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "eivtraj/io.hpp"
#include "eivtraj/simulate.hpp"

using namespace eivtraj;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("eivtraj_io_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

std::string error_of(const std::string& glucose, const std::string& meals) {
  TempDir dir;
  write_text(dir.file("g.csv"), glucose);
  write_text(dir.file("m.csv"), meals);
  try {
    io::ingest(dir.file("g.csv"), dir.file("m.csv"));
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

const std::string kGlucose =
    "patient_id,time_min,glucose\n"
    "p1,100,5.5\n"
    "p1,115,6.0\n"
    "p1,130,6.5\n"
    "p2,0,4.0\n"
    "p2,15,4.5\n";

const std::string kMealsHead = "patient_id,time_min,starch,sugar,fiber,fat,protein\n";

}  // namespace

TEST_CASE("day split") {
  const std::vector<double> t{0.0, 1439.0, 1440.0, 2879.0, 2880.0, 5000.0};
  CHECK(io::day_split(t) == std::vector<bool>{true, true, true, true, false, false});
  CHECK(io::day_split(t, 1.0) == std::vector<bool>{true, true, false, false, false, false});
}

TEST_CASE("ingest aligns times per patient") {
  TempDir dir;
  write_text(dir.file("g.csv"), kGlucose);
  write_text(dir.file("m.csv"), kMealsHead + "p1,110,10,5,1,2,3\np2,5,1,0,0,0,0\n");
  const auto data = io::ingest(dir.file("g.csv"), dir.file("m.csv"));
  REQUIRE(data.size() == 2);
  CHECK(data[0].id == "p1");
  CHECK(data[0].obs_times == std::vector<double>{0.0, 15.0, 30.0});
  REQUIRE(data[0].events.size() == 1);
  CHECK(data[0].events[0].observed_time == 10.0);
  CHECK(data[0].events[0].covariates == std::vector<double>{10, 5, 1, 2, 3});
  CHECK(data[1].events[0].observed_time == 5.0);
  CHECK(data[0].train_count() == 3);
}

TEST_CASE("ingest errors name the offending row") {
  const std::string dup = "patient_id,time_min,glucose\np1,0,5\np1,0,6\n";
  CHECK(error_of(dup, kMealsHead).find("row 3") != std::string::npos);
  CHECK(error_of(dup, kMealsHead).find("duplicated timestamp") != std::string::npos);
  CHECK(error_of("patient,time,value\np1,0,1\n", kMealsHead).find("header") != std::string::npos);
  const std::string unknown = error_of(kGlucose, kMealsHead + "p9,10,1,1,1,1,1\n");
  CHECK(unknown.find("row 2") != std::string::npos);
  CHECK(unknown.find("unknown patient") != std::string::npos);
  const std::string neg = error_of(kGlucose, kMealsHead + "p1,110,1,1,1,1,1\np1,120,1,-2,1,1,1\n");
  CHECK(neg.find("row 3") != std::string::npos);
  CHECK(neg.find("negative") != std::string::npos);
  CHECK(error_of(kGlucose, kMealsHead + "p1,110,1,1\n").find("fields") != std::string::npos);
  CHECK(error_of("patient_id,time_min,glucose\np1,0,x\n", kMealsHead).find("cannot parse") != std::string::npos);
  CHECK(error_of("patient_id,time_min,glucose\np1,10,1\np1,5,1\n", kMealsHead).find("increasing") != std::string::npos);
}

TEST_CASE("empty meals file gives patients without events") {
  TempDir dir;
  write_text(dir.file("g.csv"), kGlucose);
  write_text(dir.file("m.csv"), kMealsHead);
  const auto data = io::ingest(dir.file("g.csv"), dir.file("m.csv"));
  CHECK(data[0].events.empty());
  write_text(dir.file("m.csv"), "");
  CHECK(io::ingest(dir.file("g.csv"), dir.file("m.csv"))[1].events.empty());
  CHECK_THROWS_AS(io::ingest(dir.file("missing.csv"), dir.file("m.csv")), InputError);
}

TEST_CASE("write then ingest reproduces simulated data") {
  for (std::size_t p : {std::size_t{5}, std::size_t{2}}) {
    SimConfig cfg;
    cfg.n_patients = 2;
    cfg.covariate_dim = p;
    cfg.time_jitter_sd = 3.3;
    const auto data = simulate_toy(cfg).data;
    TempDir dir;
    io::write_glucose(dir.file("g.csv"), data);
    io::write_meals(dir.file("m.csv"), data);
    const auto back = io::ingest(dir.file("g.csv"), dir.file("m.csv"), cfg.train_days);
    REQUIRE(back.size() == data.size());
    for (std::size_t n = 0; n < data.size(); ++n) {
      CHECK(back[n].id == data[n].id);
      CHECK(back[n].outcome == data[n].outcome);
      CHECK(back[n].obs_times == data[n].obs_times);
      CHECK(back[n].train_mask == data[n].train_mask);
      REQUIRE(back[n].events.size() == data[n].events.size());
      for (std::size_t m = 0; m < data[n].events.size(); ++m) {
        CHECK(back[n].events[m].observed_time == data[n].events[m].observed_time);
        CHECK(back[n].events[m].covariates == data[n].events[m].covariates);
      }
    }
  }
}

TEST_CASE("draws round trip") {
  PosteriorDraws d;
  d.chains = 2;
  d.draws = 3;
  d.names = {"sigma_y", "beta_h[0][1]"};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 12; ++i) d.values.push_back(n(rng));
  for (int i = 0; i < 6; ++i) {
    d.logp.push_back(n(rng));
    d.divergent.push_back(i == 4);
    d.tree_depth.push_back(i % 4);
  }
  TempDir dir;
  io::write_draws(dir.file("d.csv"), d);
  const PosteriorDraws b = io::read_draws(dir.file("d.csv"));
  CHECK(b.chains == 2);
  CHECK(b.draws == 3);
  CHECK(b.names == d.names);
  CHECK(b.values == d.values);
  CHECK(b.logp == d.logp);
  CHECK(b.divergent == d.divergent);
  CHECK(b.tree_depth == d.tree_depth);
  write_text(dir.file("bad.csv"), "a,b\n1,2\n");
  CHECK_THROWS_AS(io::read_draws(dir.file("bad.csv")), InputError);
}

TEST_CASE("standardization") {
  SimConfig cfg;
  cfg.n_patients = 3;
  cfg.trend_intercept = 7.0;
  const auto data = simulate_toy(cfg).data;
  const io::Standardization s = io::fit_standardization(data);
  const auto z = io::standardize(data, s);
  double ss = 0.0;
  std::size_t count = 0;
  for (const auto& d : z) {
    double sum = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!d.train_mask[i]) continue;
      sum += d.outcome[i];
      ss += d.outcome[i] * d.outcome[i];
      ++k;
    }
    CHECK(sum / static_cast<double>(k) == doctest::Approx(0.0).scale(1.0));
    count += k;
  }
  CHECK(std::sqrt(ss / static_cast<double>(count - 1)) == doctest::Approx(1.0));

  std::vector<double> sums(2, 0.0);
  std::size_t meals = 0;
  for (const auto& d : z) {
    double last = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.train_mask[i]) last = d.obs_times[i];
    for (const auto& ev : d.events) {
      if (ev.observed_time > last) continue;
      sums[0] += ev.covariates[0];
      sums[1] += ev.covariates[1];
      ++meals;
    }
  }
  CHECK(sums[0] / static_cast<double>(meals) == doctest::Approx(1.0));
  CHECK(sums[1] / static_cast<double>(meals) == doctest::Approx(1.0));

  const io::Standardization back = io::standardization_from_json(io::to_json(s));
  CHECK(back.outcome_center == s.outcome_center);
  CHECK(back.outcome_scale == s.outcome_scale);
  CHECK(back.covariate_scale == s.covariate_scale);

  std::vector<PatientData> reordered{data[1], data[0], data[2]};
  CHECK_THROWS_AS(io::standardize(reordered, s), StructuralError);
}

TEST_CASE("destandardized trajectories are in outcome units") {
  SimConfig cfg;
  cfg.n_patients = 2;
  const auto data = simulate_toy(cfg).data;
  const io::Standardization s = io::fit_standardization(data);
  const auto z = io::standardize(data, s);
  std::vector<PatientTrajectory> tr;
  for (const auto& d : z) {
    PatientTrajectory t;
    t.id = d.id;
    t.times = d.obs_times;
    t.train_mask = d.train_mask;
    t.outcome = d.outcome;
    t.trend_mean = d.outcome;
    t.trend_sd.assign(d.size(), 1.0);
    t.response_mean.assign(d.size(), 0.5);
    t.total_mean = d.outcome;
    t.total_sd.assign(d.size(), 1.0);
    t.lower = d.outcome;
    t.upper = d.outcome;
    tr.push_back(t);
  }
  const auto back = io::destandardize(tr, data, s);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < data[n].size(); ++i) {
      CHECK(back[n].total_mean[i] == doctest::Approx(data[n].outcome[i]));
      CHECK(back[n].outcome[i] == data[n].outcome[i]);
      CHECK(back[n].response_mean[i] == doctest::Approx(0.5 * s.outcome_scale));
      CHECK(back[n].total_sd[i] == doctest::Approx(s.outcome_scale));
    }
  }
}

TEST_CASE("configuration JSON round trips") {
  ModelSpec spec;
  spec.variant = Variant::HierTime;
  spec.sigma_t = 7.5;
  spec.inducing_count = 9;
  const ModelSpec s2 = io::model_spec_from_json(io::to_json(spec));
  CHECK(s2.variant == Variant::HierTime);
  CHECK(s2.sigma_t == 7.5);
  CHECK(s2.inducing_count == 9);
  const ModelSpec partial = io::model_spec_from_json(io::json{{"sigma_x", 0.4}});
  CHECK(partial.sigma_x == 0.4);
  CHECK(partial.sigma_t == ModelSpec{}.sigma_t);

  SamplerConfig sc;
  sc.chains = 3;
  sc.seed = 99;
  const SamplerConfig sc2 = io::sampler_config_from_json(io::to_json(sc));
  CHECK(sc2.chains == 3);
  CHECK(sc2.seed == 99);

  SimConfig sim;
  sim.protocol = SimProtocol::Generative;
  sim.perturb_sd = 0.33;
  const SimConfig sim2 = io::sim_config_from_json(io::to_json(sim));
  CHECK(sim2.protocol == SimProtocol::Generative);
  CHECK(sim2.perturb_sd == 0.33);

  CHECK(io::number(std::nan("")).is_null());
  CHECK(io::number(1.5).get<double>() == 1.5);

  TempDir dir;
  io::write_json(dir.file("x.json"), io::to_json(spec));
  CHECK(io::read_json(dir.file("x.json"))["sigma_t"].get<double>() == 7.5);
  write_text(dir.file("bad.json"), "{not json");
  CHECK_THROWS_AS(io::read_json(dir.file("bad.json")), InputError);
}
