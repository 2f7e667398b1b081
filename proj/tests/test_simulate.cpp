#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "eivtraj/model.hpp"
#include "eivtraj/simulate.hpp"

using namespace eivtraj;

namespace {

SimConfig quiet_config() {
  SimConfig cfg;
  cfg.days = 1.0;
  cfg.meals_per_patient = 6;
  cfg.noise_sd = 0.0;
  return cfg;
}

// Natural-scale posterior with a single draw for patients 0..n-1.
PosteriorDraws single_draw(std::size_t patients, std::size_t p) {
  PosteriorDraws d;
  d.chains = 1;
  d.draws = 1;
  d.names.push_back("sigma_y");
  d.values.push_back(0.0);
  for (std::size_t n = 0; n < patients; ++n) {
    const std::string tag = "[" + std::to_string(n) + "]";
    for (std::size_t i = 0; i < p; ++i) {
      d.names.push_back("beta_h" + tag + "[" + std::to_string(i) + "]");
      d.values.push_back(0.5 + static_cast<double>(i));
      d.names.push_back("beta_l" + tag + "[" + std::to_string(i) + "]");
      d.values.push_back(-0.2);
    }
    for (const char* k : {"se_amplitude", "se_lengthscale", "const_amplitude"}) {
      d.names.push_back(std::string(k) + tag);
      d.values.push_back(std::string(k) == "se_lengthscale" ? 100.0 : 0.5);
    }
  }
  return d;
}

std::vector<PatientData> template_data(std::size_t meals) {
  SimConfig cfg = quiet_config();
  cfg.meals_per_patient = meals;
  cfg.n_patients = 2;
  cfg.train_days = 0.5;
  return simulate_toy(cfg).data;
}

}  // namespace

TEST_CASE("toy outcome without meals or noise is the linear trend") {
  SimConfig cfg = quiet_config();
  cfg.meals_per_patient = 0;
  cfg.trend_intercept = 2.0;
  cfg.trend_slope = 0.003;
  const SimResult r = simulate_toy(cfg);
  REQUIRE(r.data.size() == 1);
  const auto& d = r.data[0];
  CHECK(d.events.empty());
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.outcome[i] == doctest::Approx(2.0 + 0.003 * d.obs_times[i]));
}

TEST_CASE("observation grid and split") {
  SimConfig cfg;
  cfg.days = 3.0;
  cfg.cadence = 15.0;
  const auto grid = observation_grid(cfg);
  CHECK(grid.size() == 288);
  CHECK(grid.back() == 4305.0);
  const SimResult r = simulate_toy(cfg);
  const auto& d = r.data[0];
  CHECK(d.train_count() == 192);
  CHECK(d.train_mask[191]);
  CHECK_FALSE(d.train_mask[192]);
}

TEST_CASE("toy outcome is trend plus responses plus noise") {
  SimConfig cfg = quiet_config();
  const SimResult r = simulate_toy(cfg);
  const auto& d = r.data[0];
  const auto& t = r.truth.patients[0];
  for (std::size_t m = 0; m < t.true_times.size(); ++m) CHECK(d.events[m].observed_time == t.true_times[m]);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.outcome[i] == doctest::Approx(t.trend[i] + t.response[i]));
  // response from the true inputs
  ModelSpec spec;
  spec.variant = Variant::Hier;
  PatientData truth_view = d;
  for (std::size_t m = 0; m < t.true_times.size(); ++m) truth_view.events[m] = {t.true_times[m], t.true_covariates[m]};
  const auto resp = sum_responses(truth_view, {}, t.coef, spec);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(resp[i] == doctest::Approx(t.response[i]).epsilon(1e-12));
}

TEST_CASE("zero perturbation fraction keeps observed amounts") {
  SimConfig cfg = quiet_config();
  cfg.perturb_fraction = 0.0;
  const SimResult r = simulate_toy(cfg);
  for (std::size_t m = 0; m < r.data[0].events.size(); ++m) {
    CHECK(r.data[0].events[m].covariates == r.truth.patients[0].true_covariates[m]);
    CHECK_FALSE(r.truth.patients[0].perturbed[m]);
  }
}

TEST_CASE("toy perturbation count and mean shift") {
  SimConfig cfg = quiet_config();
  cfg.meals_per_patient = 10;
  cfg.perturb_fraction = 0.5;
  const SimResult r = simulate_toy(cfg);
  const auto& t = r.truth.patients[0];
  CHECK(std::count(t.perturbed.begin(), t.perturbed.end(), true) == 5);

  cfg.n_patients = 200;
  cfg.meals_per_patient = 50;
  cfg.covariate_dim = 1;
  const SimResult big = simulate_toy(cfg);
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& p : big.truth.patients) {
    for (std::size_t m = 0; m < p.perturbed.size(); ++m) {
      if (!p.perturbed[m]) continue;
      sum += p.additive_error[m][0];
      ++count;
    }
  }
  CHECK(count == 200 * 25);
  CHECK(sum / static_cast<double>(count) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("time shifts follow bias and jitter") {
  SimConfig cfg = quiet_config();
  cfg.time_bias = 12.0;
  const SimResult r = simulate_toy(cfg);
  for (std::size_t m = 0; m < r.data[0].events.size(); ++m) {
    CHECK(r.data[0].events[m].observed_time == doctest::Approx(r.truth.patients[0].true_times[m] + 12.0));
  }
}

TEST_CASE("simulation is deterministic in the seed") {
  SimConfig cfg;
  cfg.n_patients = 3;
  cfg.seed = 77;
  cfg.time_jitter_sd = 5.0;
  const SimResult a = simulate_toy(cfg);
  const SimResult b = simulate_toy(cfg);
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(a.data[n].outcome == b.data[n].outcome);
    CHECK(a.data[n].events.size() == b.data[n].events.size());
  }
  cfg.seed = 78;
  const SimResult c = simulate_toy(cfg);
  CHECK(a.data[0].outcome != c.data[0].outcome);
  const SimResult g1 = simulate_generative(cfg);
  const SimResult g2 = simulate_generative(cfg);
  CHECK(g1.data[1].outcome == g2.data[1].outcome);
}

TEST_CASE("simulated data are valid") {
  for (SimProtocol proto : {SimProtocol::Toy, SimProtocol::Generative}) {
    for (TrendKind trend : {TrendKind::Linear, TrendKind::GP}) {
      SimConfig cfg;
      cfg.n_patients = 2;
      cfg.trend = trend;
      cfg.time_jitter_sd = 10.0;
      const SimResult r = proto == SimProtocol::Toy ? simulate_toy(cfg) : simulate_generative(cfg);
      for (const auto& d : r.data) {
        CHECK_NOTHROW(d.validate());
        for (const auto& ev : d.events) {
          for (double x : ev.covariates) CHECK(x >= 0.0);
        }
      }
    }
  }
}

TEST_CASE("replay from a fit") {
  const auto templ = template_data(10);
  const PosteriorDraws post = single_draw(2, 2);
  SimConfig cfg = quiet_config();
  cfg.protocol = SimProtocol::FromFit;
  cfg.n_patients = 0;
  cfg.perturb_fraction = 0.5;
  cfg.perturb_sd = 0.0;
  cfg.response_scale = 2.0;
  const SimResult r = simulate_from_fit(post, templ, cfg);
  REQUIRE(r.data.size() == 2);
  for (std::size_t n = 0; n < 2; ++n) {
    const auto& t = r.truth.patients[n];
    CHECK(r.data[n].train_mask == templ[n].train_mask);
    CHECK(r.data[n].obs_times == templ[n].obs_times);
    CHECK(t.coef.beta_h[0] == doctest::Approx(1.0));
    CHECK(t.coef.beta_h[1] == doctest::Approx(3.0));
    CHECK(t.kernel.se_lengthscale == 100.0);
    CHECK(std::count(t.perturbed.begin(), t.perturbed.end(), true) == 5);
    for (std::size_t m = 0; m < templ[n].events.size(); ++m) {
      CHECK(t.delta[m] == 1.0);
      CHECK(r.data[n].events[m].covariates == templ[n].events[m].covariates);
    }
  }
  cfg.n_patients = 1;
  CHECK(simulate_from_fit(post, templ, cfg).data.size() == 1);
  cfg.n_patients = 2;
  CHECK_THROWS_AS(simulate_from_fit(single_draw(1, 2), templ, cfg), StructuralError);
}

TEST_CASE("multiplicative perturbation has log-normal mean") {
  std::vector<PatientData> templ = template_data(1000);
  templ.resize(1);
  const PosteriorDraws post = single_draw(1, 2);
  SimConfig cfg;
  cfg.protocol = SimProtocol::FromFit;
  cfg.perturb_fraction = 1.0;
  cfg.perturb_sd = 0.2;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    cfg.seed = seed;
    const SimResult r = simulate_from_fit(post, templ, cfg);
    for (double d : r.truth.patients[0].delta) {
      sum += d;
      ++count;
    }
  }
  REQUIRE(count == 100000);
  CHECK(sum / static_cast<double>(count) == doctest::Approx(std::exp(0.5 * 0.04)).epsilon(0.01));
}

TEST_CASE("invalid configurations") {
  SimConfig cfg;
  cfg.perturb_fraction = 1.5;
  CHECK_THROWS_AS(simulate_toy(cfg), DomainError);
  cfg = {};
  cfg.response_scale = 0.0;
  CHECK_THROWS_AS(simulate_toy(cfg), DomainError);
  cfg = {};
  cfg.covariate_dim = 0;
  CHECK_THROWS_AS(simulate_generative(cfg), DomainError);
  CHECK_THROWS_AS(protocol_from_string("other"), DomainError);
  CHECK(protocol_from_string(to_string(SimProtocol::FromFit)) == SimProtocol::FromFit);
  CHECK(trend_from_string("gp") == TrendKind::GP);
}
