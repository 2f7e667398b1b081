#include <doctest.h>

#include <cmath>
#include <random>

#include "eivtraj/gp.hpp"
#include "eivtraj/model.hpp"
#include "eivtraj/response.hpp"
#include "fixtures.hpp"

using namespace eivtraj;

namespace {

double log_half_normal(double x, double scale) {
  return std::log(2.0) - 0.5 * std::log(2.0 * M_PI) - std::log(scale) - 0.5 * x * x / (scale * scale);
}

double log_normal_pdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -0.5 * std::log(2.0 * M_PI) - std::log(sd) - 0.5 * z * z;
}

PatientData flat_patient(std::size_t n_obs, std::size_t p) {
  PatientData d;
  d.id = "flat";
  for (std::size_t i = 0; i < n_obs; ++i) {
    d.obs_times.push_back(15.0 * static_cast<double>(i));
    d.outcome.push_back(0.0);
    d.train_mask.push_back(true);
  }
  (void)p;
  return d;
}

std::vector<double> training_subset(const PatientData& d, const std::vector<double>& v) {
  std::vector<double> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.train_mask[i]) out.push_back(v[i]);
  }
  return out;
}

}  // namespace

TEST_CASE("no meals give a zero response sum") {
  PatientData d = flat_patient(10, 0);
  const auto r = sum_responses(d, {}, {}, ModelSpec{});
  REQUIRE(r.size() == 10);
  for (double v : r) CHECK(v == 0.0);
}

TEST_CASE("single meal reproduces the response curve") {
  PatientData d = flat_patient(40, 1);
  d.events.push_back({60.0, {2.0}});
  ModelSpec spec;
  spec.variant = Variant::Hier;
  const ResponseCoefficients coef{{0.7}, {0.3}};
  const auto r = sum_responses(d, {}, coef, spec);
  const double h = 0.7 * 2.0;
  const double l = spec.length_scale_floor + spec.length_scale_unit * std::log1p(std::exp(0.6));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double lag[] = {d.obs_times[i] - 60.0};
    CHECK(r[i] == doctest::Approx(response_curve(lag, h, l)[0]).epsilon(1e-12));
  }
}

TEST_CASE("overlapping meals add") {
  PatientData d = flat_patient(60, 1);
  d.events.push_back({30.0, {1.0}});
  d.events.push_back({90.0, {1.5}});
  const ResponseCoefficients coef{{1.0}, {0.0}};
  ModelSpec spec;
  spec.variant = Variant::Hier;
  const auto both = sum_responses(d, {}, coef, spec);
  PatientData a = d, b = d;
  a.events.pop_back();
  b.events.erase(b.events.begin());
  const auto ra = sum_responses(a, {}, coef, spec);
  const auto rb = sum_responses(b, {}, coef, spec);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(both[i] == doctest::Approx(ra[i] + rb[i]));
}

TEST_CASE("latents shift and rescale meals") {
  PatientData d = flat_patient(60, 1);
  d.events.push_back({120.0, {2.0}});
  ModelSpec spec;
  spec.variant = Variant::HierTimeCov;
  const ResponseCoefficients coef{{1.0}, {0.2}};
  MeasurementLatents lat;
  lat.time_offsets = {10.0};
  lat.report_bias = 5.0;
  lat.log_amount_errors = {std::log(2.0)};
  const auto shifted = sum_responses(d, lat, coef, spec);
  PatientData moved = d;
  moved.events[0] = {105.0, {1.0}};
  const auto oracle = sum_responses(moved, {}, coef, spec);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(shifted[i] == doctest::Approx(oracle[i]).epsilon(1e-12));

  spec.variant = Variant::Hier;
  const auto ignored = sum_responses(d, lat, coef, spec);
  const auto plain = sum_responses(d, {}, coef, spec);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(ignored[i] == plain[i]);
}

TEST_CASE("density without meals is the trend likelihood plus priors") {
  PatientData d = flat_patient(30, 0);
  ModelSpec spec;
  spec.variant = Variant::Hier;
  const Model model({d}, spec);
  REQUIRE(model.dim() == 4);
  const std::vector<double> u{std::log(0.4), std::log(0.7), std::log(90.0), std::log(0.3)};
  const double sy = 0.4, s = 0.7, ell = 90.0, c = 0.3;

  const std::vector<double> zero(30, 0.0);
  const gp::KernelParams kp{s, ell, c};
  const double lik = gp::lowrank_marginal_loglik(zero, d.obs_times, model.inducing(0), kp, sy);
  const double prior = log_half_normal(sy, spec.sigma_y_scale) + u[0] +
                       log_half_normal(s, spec.se_amplitude_scale) + u[1] +
                       log_normal_pdf(u[2], spec.se_lengthscale_log_mean, spec.se_lengthscale_log_sd) +
                       log_half_normal(c, spec.const_amplitude_scale) + u[3];
  CHECK(model.log_density(u) == doctest::Approx(lik + prior).epsilon(1e-12));

  ParamVector pv;
  pv.layout = model.layout();
  pv.values = Eigen::Map<const Eigen::VectorXd>(u.data(), 4);
  CHECK(log_posterior(pv, {d}, spec) == doctest::Approx(lik + prior).epsilon(1e-12));
}

TEST_CASE("patient likelihood is the trend likelihood of the residual") {
  const auto data = fixtures::small_dataset(2, 4, 11);
  for (Variant v : {Variant::Ind, Variant::Hier, Variant::HierTime, Variant::HierTimeCov}) {
    ModelSpec spec;
    spec.variant = v;
    const Model model(data, spec);
    std::mt19937_64 rng(5);
    const auto u = fixtures::random_point(model, rng);
    for (std::size_t n = 0; n < data.size(); ++n) {
      const PatientState st = model.patient_state(u, n);
      const auto r = training_subset(data[n], sum_responses(data[n], st.latents, st.coef, spec));
      const auto y = training_subset(data[n], data[n].outcome);
      std::vector<double> resid(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) resid[i] = y[i] - r[i];
      const double oracle = gp::lowrank_marginal_loglik(resid, model.train_times(n), model.inducing(n),
                                                        st.kernel, st.sigma_y);
      CHECK(model.patient_log_likelihood(u, n) == doctest::Approx(oracle).epsilon(1e-10));
    }
  }
}

TEST_CASE("zero latents reduce to the hierarchical likelihood") {
  const auto data = fixtures::small_dataset(1, 5, 12);
  ModelSpec full, hier;
  full.variant = Variant::HierTimeCov;
  hier.variant = Variant::Hier;
  const Model mf(data, full), mh(data, hier);
  std::mt19937_64 rng(6);
  const auto uh = fixtures::random_point(mh, rng);
  std::vector<double> uf(mf.dim(), 0.0);
  for (std::size_t i = 0; i < uh.size(); ++i) uf[i] = uh[i];
  CHECK(mf.patient_log_likelihood(uf, 0) == doctest::Approx(mh.patient_log_likelihood(uh, 0)).epsilon(1e-12));
}

TEST_CASE("amount latent moves the density by its prior and likelihood changes") {
  const auto data = fixtures::small_dataset(1, 5, 13);
  ModelSpec spec;
  spec.variant = Variant::HierTimeCov;
  const Model model(data, spec);
  std::mt19937_64 rng(7);
  const auto u = fixtures::random_point(model, rng);
  const std::size_t j = model.layout().block("log_delta[0]").offset;
  auto v = u;
  v[j] += 0.05;
  const double expected = log_normal_pdf(v[j], 0.0, spec.sigma_x) - log_normal_pdf(u[j], 0.0, spec.sigma_x) +
                          model.patient_log_likelihood(v, 0) - model.patient_log_likelihood(u, 0);
  CHECK(model.log_density(v) - model.log_density(u) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("density is invariant to patient order") {
  const auto data = fixtures::small_dataset(2, 4, 14);
  const std::vector<PatientData> swapped{data[1], data[0]};
  ModelSpec spec;
  spec.variant = Variant::HierTimeCov;
  const Model a(data, spec), b(swapped, spec);
  std::mt19937_64 rng(8);
  const auto u = fixtures::random_point(a, rng);
  // move each patient's block to its new position
  std::vector<double> w(u.size());
  const auto& la = a.layout();
  const auto& lb = b.layout();
  for (const auto& blk : la.blocks()) {
    std::string name = blk.name;
    if (name.ends_with("[0]")) name.replace(name.size() - 3, 3, "[1]");
    else if (name.ends_with("[1]")) name.replace(name.size() - 3, 3, "[0]");
    const std::size_t off = lb.block(name).offset;
    for (std::size_t i = 0; i < blk.size; ++i) w[off + i] = u[blk.offset + i];
  }
  CHECK(b.log_density(w) == doctest::Approx(a.log_density(u)).epsilon(1e-12));
}

TEST_CASE("hierarchical variant ignores measurement scales") {
  const auto data = fixtures::small_dataset(2, 4, 15);
  ModelSpec a, b;
  a.variant = b.variant = Variant::Hier;
  b.sigma_x = 3.0;
  b.sigma_t = 1.0;
  b.sigma_d = 99.0;
  const Model ma(data, a), mb(data, b);
  std::mt19937_64 rng(9);
  const auto u = fixtures::random_point(ma, rng);
  CHECK(ma.log_density(u) == mb.log_density(u));
}

TEST_CASE("gradient matches finite differences for every variant") {
  const auto data = fixtures::small_dataset(2, 4, 16);
  for (Variant v : {Variant::Ind, Variant::Hier, Variant::HierTime, Variant::HierTimeCov}) {
    CAPTURE(to_string(v));
    ModelSpec spec;
    spec.variant = v;
    const Model model(data, spec);
    std::mt19937_64 rng(10);
    ad::Tape tape;
    for (int trial = 0; trial < 3; ++trial) {
      const auto u = fixtures::random_point(model, rng, 0.3);
      std::vector<double> g(model.dim());
      const double value = model.log_density_gradient(u, g, tape);
      CHECK(value == doctest::Approx(model.log_density(u)).epsilon(1e-12));
      const auto fd = fixtures::fd_gradient([&](std::span<const double> x) { return model.log_density(x); }, u);
      for (std::size_t i = 0; i < g.size(); ++i) {
        CAPTURE(model.layout().coordinate_names()[i]);
        CHECK(fixtures::gradient_close(g[i], fd[i]));
      }
    }
  }
}

TEST_CASE("population block gradient vanishes at zero") {
  PatientData d = flat_patient(20, 0);
  ModelSpec spec;
  spec.variant = Variant::Hier;
  const Model model({d}, spec);
  ParamVector pv;
  pv.layout = model.layout();
  pv.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.dim()));
  const auto vg = grad_log_posterior(pv, {d}, spec);
  CHECK_FALSE(vg.divergent);
  // with p = 0 there are no beta blocks; use a one-covariate patient instead
  PatientData e = d;
  e.events.push_back({1000.0, {1.0}});
  e.train_mask.assign(e.size(), true);
  const Model m1({e}, spec);
  pv.layout = m1.layout();
  pv.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m1.dim()));
  const auto g1 = grad_log_posterior(pv, {e}, spec);
  CHECK(g1.grad[static_cast<Eigen::Index>(m1.layout().block("beta_h_tilde").offset)] == doctest::Approx(0.0));
  CHECK(g1.grad[static_cast<Eigen::Index>(m1.layout().block("beta_l_tilde").offset)] == doctest::Approx(0.0));
}

TEST_CASE("layout mismatch is a structural error") {
  const auto data = fixtures::small_dataset(1, 3, 17);
  ModelSpec spec;
  ParamVector pv;
  pv.layout.add_scalar("sigma_y", Transform::Log);
  pv.values = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(log_posterior(pv, data, spec), StructuralError);
  CHECK_THROWS_AS(grad_log_posterior(pv, data, spec), StructuralError);
  const Model model(data, spec);
  std::vector<double> short_u(2, 0.0);
  CHECK_THROWS_AS(model.patient_state(short_u, 0), StructuralError);
}

TEST_CASE("latents exist only for training-period meals") {
  const auto data = fixtures::small_dataset(1, 8, 18);
  ModelSpec spec;
  const Model model(data, spec);
  const double last = model.train_times(0).back();
  std::size_t expected = 0;
  for (const auto& ev : data[0].events) expected += ev.observed_time <= last ? 1 : 0;
  CHECK(model.latent_meal_count(0) == expected);
  CHECK(model.layout().block("time_shift[0]").size == expected);
}

TEST_CASE("hierarchical coefficients are offsets from the population mean") {
  const auto data = fixtures::small_dataset(2, 4, 19);
  ModelSpec spec;
  spec.variant = Variant::Hier;
  const Model model(data, spec);
  std::mt19937_64 rng(20);
  const auto u = fixtures::random_point(model, rng);
  const auto& l = model.layout();
  const Eigen::VectorXd c = model.constrain(u);
  const auto names = model.constrained_names();
  for (std::size_t n = 0; n < 2; ++n) {
    const std::string tag = "[" + std::to_string(n) + "]";
    const PatientState st = model.patient_state(u, n);
    for (std::size_t p = 0; p < 2; ++p) {
      const double z = u[l.block("beta_h_z" + tag).offset + p];
      const double expected = u[l.block("beta_h_tilde").offset + p] + std::exp(u[l.block("sigma_h").offset + p]) * z;
      CHECK(st.coef.beta_h[p] == doctest::Approx(expected));
      const std::size_t col = l.block("beta_h_z" + tag).offset + p;
      CHECK(names[col] == "beta_h" + tag + "[" + std::to_string(p) + "]");
      CHECK(c[static_cast<Eigen::Index>(col)] == doctest::Approx(expected));
    }
  }
  CHECK(c[0] == doctest::Approx(std::exp(u[0])));
}

TEST_CASE("centered coefficients give the offset density plus the log Jacobian") {
  const auto data = fixtures::small_dataset(2, 4, 21);
  for (Variant v : {Variant::Hier, Variant::HierTimeCov}) {
    CAPTURE(to_string(v));
    ModelSpec spec;
    spec.variant = v;
    const Model offset_model(data, spec);
    spec.noncentered = false;
    const Model centered(data, spec);
    REQUIRE(centered.dim() == offset_model.dim());
    CHECK_NOTHROW(centered.layout().block("beta_h[0]"));
    std::mt19937_64 rng(22);
    ad::Tape tape;
    for (int trial = 0; trial < 3; ++trial) {
      const auto u = fixtures::random_point(offset_model, rng, 0.3);
      const Eigen::VectorXd natural = offset_model.constrain(u);
      std::vector<double> w(u.begin(), u.end());
      double log_jacobian = 0.0;
      const auto& l = offset_model.layout();
      for (std::size_t n = 0; n < 2; ++n) {
        const std::string tag = "[" + std::to_string(n) + "]";
        for (const char* b : {"beta_h", "beta_l"}) {
          const std::size_t off = l.block(std::string(b) + "_z" + tag).offset;
          const std::size_t sig = l.block(std::string(b) == "beta_h" ? "sigma_h" : "sigma_l").offset;
          for (std::size_t p = 0; p < 2; ++p) {
            w[off + p] = natural[static_cast<Eigen::Index>(off + p)];
            log_jacobian += u[sig + p];
          }
        }
      }
      CHECK(centered.log_density(w) == doctest::Approx(offset_model.log_density(u) - log_jacobian).epsilon(1e-12));
      CHECK((centered.constrain(w) - natural).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(centered.constrained_names() == offset_model.constrained_names());
      std::vector<double> g(centered.dim());
      centered.log_density_gradient(w, g, tape);
      const auto fd = fixtures::fd_gradient([&](std::span<const double> x) { return centered.log_density(x); }, w);
      for (std::size_t i = 0; i < g.size(); ++i) {
        CAPTURE(centered.layout().coordinate_names()[i]);
        CHECK(fixtures::gradient_close(g[i], fd[i]));
      }
    }
  }
}
