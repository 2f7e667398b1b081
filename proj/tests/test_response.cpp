#include <doctest.h>

#include <cmath>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "eivtraj/response.hpp"

using namespace eivtraj;

namespace {

const double kSqrt2Pi = std::sqrt(2.0 * M_PI);

// Numerical integral of h exp(-0.5 ((d - 3l) / l)^2) over the real line.
double area_by_quadrature(double h, double l) {
  const auto f = [&](double d) {
    const double z = (d - 3.0 * l) / l;
    return h * std::exp(-0.5 * z * z);
  };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      f, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 15, 1e-14);
}

double area_of(const ResponseCoefficients& c, std::vector<double> x, double floor, double unit) {
  const ResponseShape s = response_params(c, x, floor, unit);
  return response_area(s.height, s.length);
}

}  // namespace

TEST_CASE("curve examples") {
  const double peak[] = {120.0};
  CHECK(response_curve(peak, 2.0, 40.0)[0] == doctest::Approx(2.0));
  const double any[] = {17.0};
  CHECK(response_curve(any, 0.0, 30.0)[0] == 0.0);
  const double zero[] = {0.0};
  CHECK(response_curve(zero, 1.0, 1.0)[0] == doctest::Approx(0.011108996538242306));
  CHECK(response_value(0.0, 1.0, 1.0) == doctest::Approx(std::exp(-4.5)));
}

TEST_CASE("non-positive length-scale is a domain error") {
  const double lag[] = {1.0};
  CHECK_THROWS_AS(response_curve(lag, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(response_curve(lag, 1.0, -2.0), DomainError);
  CHECK_THROWS_AS(response_area(1.0, 0.0), DomainError);
}

TEST_CASE("maximum at three length-scales") {
  const double l = 23.0;
  std::vector<double> lags;
  for (int i = 0; i <= 30000; ++i) lags.push_back(i * 0.01);
  const auto v = response_curve(lags, 1.7, l);
  const auto best = std::max_element(v.begin(), v.end()) - v.begin();
  CHECK(lags[static_cast<std::size_t>(best)] == doctest::Approx(3.0 * l));
}

TEST_CASE("curve is linear in the height") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const std::vector<double> lags{-10.0, 0.0, 15.0, 60.0, 200.0};
  for (int t = 0; t < 20; ++t) {
    const double h = u(rng), a = u(rng), l = 10.0 + 10.0 * std::abs(u(rng));
    const auto base = response_curve(lags, h, l);
    const auto scaled = response_curve(lags, a * h, l);
    for (std::size_t i = 0; i < lags.size(); ++i) CHECK(scaled[i] == doctest::Approx(a * base[i]));
  }
}

TEST_CASE("height and length links") {
  ResponseCoefficients c;
  c.beta_h = {1, 0, 0, 0, 0};
  c.beta_l = {0, 0, 0, 0, 0};
  const std::vector<double> x{3, 0, 0, 0, 0};
  CHECK(response_params(c, x, 5.0).height == doctest::Approx(3.0));
  const std::vector<double> zero(5, 0.0);
  const ResponseShape s = response_params(c, zero, 5.0);
  CHECK(s.height == 0.0);
  CHECK(s.length == doctest::Approx(5.0 + std::log(2.0)));
  CHECK(response_params(c, zero, 5.0, 15.0).length == doctest::Approx(5.0 + 15.0 * std::log(2.0)));
}

TEST_CASE("area examples") {
  CHECK(response_area(1.0, 1.0) == doctest::Approx(2.5066282746310002));
  CHECK(response_area(0.0, 4.0) == 0.0);
  CHECK(response_area(2.0, 3.0) == doctest::Approx(6.0 * kSqrt2Pi));
  CHECK(area_by_quadrature(1.0, 1.0) == doctest::Approx(kSqrt2Pi).epsilon(1e-10));
}

TEST_CASE("area matches quadrature for random parameters") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> hd(-5.0, 5.0), ld(0.5, 80.0);
  for (int t = 0; t < 100; ++t) {
    const double h = hd(rng), l = ld(rng);
    const double q = area_by_quadrature(h, l);
    CHECK(std::abs(response_area(h, l) - q) <= 1e-8 * std::max(1.0, std::abs(q)));
  }
}

TEST_CASE("area sensitivity matches finite differences") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.8);
  std::uniform_real_distribution<double> xd(0.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    ResponseCoefficients c;
    std::vector<double> x(5);
    for (int p = 0; p < 5; ++p) {
      c.beta_h.push_back(n(rng));
      c.beta_l.push_back(n(rng));
      x[static_cast<std::size_t>(p)] = xd(rng);
    }
    for (const double unit : {1.0, 15.0}) {
      for (std::size_t p = 0; p < 5; ++p) {
        const double step = 1e-5;
        auto up = x, dn = x;
        up[p] += step;
        dn[p] -= step;
        const double fd = (area_of(c, up, 5.0, unit) - area_of(c, dn, 5.0, unit)) / (2.0 * step);
        const double an = area_sensitivity(c, x, p, 5.0, unit);
        CHECK(std::abs(an - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("zero coefficients give zero sensitivity") {
  ResponseCoefficients c{{0, 0}, {0, 0}};
  const std::vector<double> x{1.0, 2.0};
  CHECK(area_sensitivity(c, x, 0, 5.0) == 0.0);
  CHECK(area_sensitivity(c, x, 1, 5.0, 15.0) == 0.0);
}
