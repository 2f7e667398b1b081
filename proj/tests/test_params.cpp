#include <doctest.h>

#include <cmath>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "eivtraj/params.hpp"
#include "eivtraj/types.hpp"

using namespace eivtraj;

namespace {

ParamLayout sample_layout() {
  ParamLayout l;
  l.add_scalar("sigma", Transform::Log);
  l.add("beta", 3, Transform::Identity);
  l.add("scales", 2, Transform::Log);
  l.add("single", 1, Transform::Identity);
  return l;
}

}  // namespace

TEST_CASE("layout partitions the vector") {
  const ParamLayout l = sample_layout();
  CHECK(l.dim() == 7);
  CHECK(l.block("beta").offset == 1);
  CHECK(l.block("scales").offset == 4);
  CHECK(l.contains("single"));
  CHECK_FALSE(l.contains("missing"));
  CHECK_THROWS_AS(l.block("missing"), StructuralError);
  ParamLayout dup = sample_layout();
  CHECK_THROWS_AS(dup.add("beta", 1, Transform::Identity), StructuralError);
}

TEST_CASE("coordinate names") {
  const auto names = sample_layout().coordinate_names();
  REQUIRE(names.size() == 7);
  CHECK(names[0] == "sigma");
  CHECK(names[1] == "beta[0]");
  CHECK(names[5] == "scales[1]");
  CHECK(names[6] == "single[0]");
}

TEST_CASE("log transform of one is zero") {
  ParamLayout l;
  l.add_scalar("s", Transform::Log);
  const double one[] = {1.0};
  CHECK(l.transform(one)[0] == 0.0);
}

TEST_CASE("round trip within 1e-12") {
  const ParamLayout l = sample_layout();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> u(l.dim());
    for (double& v : u) v = n(rng);
    const Eigen::VectorXd c = l.untransform(u);
    const Eigen::VectorXd back = l.transform({c.data(), static_cast<std::size_t>(c.size())});
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(std::abs(back[static_cast<Eigen::Index>(i)] - u[i]) < 1e-12);
  }
}

TEST_CASE("domain and shape errors") {
  const ParamLayout l = sample_layout();
  std::vector<double> c(l.dim(), 1.0);
  c[0] = -1.0;
  CHECK_THROWS_AS(l.transform(c), DomainError);
  std::vector<double> short_vec(3, 0.0);
  CHECK_THROWS_AS(l.untransform(short_vec), StructuralError);
}

TEST_CASE("log Jacobian sums log-block coordinates") {
  const ParamLayout l = sample_layout();
  const std::vector<double> u{0.3, 5.0, 6.0, 7.0, -0.2, 0.9, 11.0};
  CHECK(l.log_jacobian(u) == doctest::Approx(0.3 - 0.2 + 0.9));
}

TEST_CASE("Jacobian makes the half-normal integrate to one on the log scale") {
  ParamLayout l;
  l.add_scalar("s", Transform::Log);
  const double scale = 0.7;
  const auto density = [&](double u) {
    const double s = std::exp(u);
    const double half_normal = std::sqrt(2.0 / M_PI) / scale * std::exp(-0.5 * s * s / (scale * scale));
    const double uu[] = {u};
    return half_normal * std::exp(l.log_jacobian(uu));
  };
  const double total =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, -40.0, 5.0, 15, 1e-12);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("parameter vector views") {
  ParamVector pv;
  pv.layout = sample_layout();
  pv.values = Eigen::VectorXd::LinSpaced(7, 0.0, 6.0);
  const auto beta = pv.view("beta");
  REQUIRE(beta.size() == 3);
  CHECK(beta[0] == 1.0);
  CHECK(beta[2] == 3.0);
}
