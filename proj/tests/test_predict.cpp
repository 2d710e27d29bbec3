#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nmtlab/errors.hpp"
#include "nmtlab/predict.hpp"

#include <cmath>
#include <numbers>

using namespace nmtlab;

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::MatrixXcd constant_shape(int knots) {
  Eigen::MatrixXcd phi(3, knots);
  for (int k = 0; k < knots; ++k) phi.col(k) << 0.2, 0.5, 1.0;
  return phi;
}

ModalFunctions linear_functions(double w, double z) {
  return ModalFunctions({1e-6, 1e-5, 1e-4, 1e-3, 1e-2}, std::vector<double>(5, w), std::vector<double>(5, z),
                        constant_shape(5), 2);
}

ModalFunctions softening() {
  return ModalFunctions({1e-6, 1e-5, 1e-4, 1e-3, 1e-2}, {700.0, 690.0, 600.0, 470.0, 430.0},
                        {0.001, 0.004, 0.08, 0.05, 0.02}, constant_shape(5), 2);
}

double balance_error(const ModalFunctions& mf, const FrfPoint& p, double F) {
  const double w = mf.omega(p.a), z = mf.zeta(p.a);
  const double lhs = std::hypot(w * w - p.omega * p.omega, 2.0 * z * w * p.omega);
  const double rhs = std::abs(mf.phi1(p.a)(mf.drive_sensor())) * F / p.a;
  return std::abs(lhs - rhs) / rhs;
}

}  // namespace

TEST_CASE("constant data gives a constant interpolant") {
  const ModalFunctions mf = linear_functions(500.0, 0.01);
  for (double a : {1e-6, 3.3e-6, 2e-4, 7.7e-3, 1e-2}) {
    CHECK(mf.omega(a) == doctest::Approx(500.0).epsilon(1e-14));
    CHECK(mf.zeta(a) == doctest::Approx(0.01).epsilon(1e-14));
    CHECK(std::abs(mf.phi1(a)(1) - Complex(0.5, 0.0)) < 1e-14);
  }
}

TEST_CASE("monotone data is interpolated without overshoot") {
  const ModalFunctions mf = softening();
  double prev = mf.omega(mf.a_min());
  const auto& knots = mf.knots();
  for (int k = 0; k <= 400; ++k) {
    const double a = std::exp(std::log(knots.front()) + (std::log(knots.back()) - std::log(knots.front())) * k / 400.0);
    const double w = mf.omega(std::min(a, mf.a_max()));
    CHECK(w <= prev + 1e-9);
    CHECK(w >= 430.0 - 1e-9);
    CHECK(w <= 700.0 + 1e-9);
    prev = w;
  }
  // The knots are reproduced exactly.
  CHECK(mf.omega(1e-4) == doctest::Approx(600.0).epsilon(1e-14));
  CHECK(mf.zeta(1e-4) == doctest::Approx(0.08).epsilon(1e-14));
}

TEST_CASE("evaluation outside the amplitude range is rejected") {
  const ModalFunctions mf = softening();
  CHECK_THROWS_AS(mf.omega(mf.a_max() * (1.0 + 1e-9)), ConfigError);
  CHECK_THROWS_AS(mf.zeta(mf.a_min() * (1.0 - 1e-9)), ConfigError);
  CHECK_THROWS_AS(mf.phi1(0.0), ConfigError);
}

TEST_CASE("linear modal functions give the single-mode FRF") {
  const double w = 600.0, z = 0.01, F = 0.3;
  const ModalFunctions mf = linear_functions(w, z);
  const FrfCurve c = synthesize_frf(mf, F, 40);
  REQUIRE(c.points.size() > 10);
  for (const auto& p : c.points) {
    const double exact = 1.0 * F / std::hypot(w * w - p.omega * p.omega, 2.0 * z * w * p.omega);
    CHECK(p.amplitude(2) == doctest::Approx(exact).epsilon(5e-3));
    CHECK(p.amplitude(0) == doctest::Approx(0.2 * p.amplitude(2)).epsilon(1e-12));
  }
  const FrfPoint& pk = c.peak(2);
  CHECK(pk.omega == doctest::Approx(w * std::sqrt(1.0 - 2.0 * z * z)).epsilon(1e-3));
  CHECK(pk.amplitude(2) == doctest::Approx(F / (2.0 * z * w * w * std::sqrt(1.0 - z * z))).epsilon(5e-3));
}

TEST_CASE("phase-resonant force level crosses the backbone at a quarter period lag") {
  const ModalFunctions mf = softening();
  const double a = mf.a_max();
  const double F = 2.0 * mf.zeta(a) * mf.omega(a) * mf.omega(a) * a / std::abs(mf.phi1(a)(2));
  const FrfCurve c = synthesize_frf(mf, F);
  bool found = false;
  for (const auto& p : c.points) {
    if (p.a != a || p.branch != FrfBranch::high) continue;
    found = true;
    CHECK(p.omega == doctest::Approx(mf.omega(a)).epsilon(1e-10));
    CHECK(p.theta_m == doctest::Approx(kPi / 2.0).epsilon(1e-9));
  }
  CHECK(found);
}

TEST_CASE("every point satisfies the magnitude balance") {
  const ModalFunctions mf = softening();
  for (double F : {1e-3, 0.05, 1.0}) {
    const FrfCurve c = synthesize_frf(mf, F);
    for (const auto& p : c.points) {
      CHECK(balance_error(mf, p, F) < 1e-8);
      CHECK(p.theta_m >= 0.0);
      CHECK(p.theta_m <= kPi);
      const double w = mf.omega(p.a), z = mf.zeta(p.a), u = w * w * (1.0 - 2.0 * z * z);
      CHECK((p.branch == FrfBranch::low) == (p.omega * p.omega <= u * (1.0 + 1e-12)));
    }
  }
}

TEST_CASE("reachable amplitude grows with the force") {
  const ModalFunctions mf = softening();
  double prev = 0.0;
  for (double F : {2e-3, 1e-2, 0.1, 1.0, 3.0}) {
    const FrfCurve c = synthesize_frf(mf, F);
    const double peak = c.peak(2).a;
    CHECK(peak >= prev);
    prev = peak;
  }
}

TEST_CASE("invalid force vectors are rejected") {
  const ModalFunctions mf = softening();
  Eigen::VectorXcd f = Eigen::VectorXcd::Zero(3);
  CHECK_THROWS_AS(synthesize_frf(mf, f), ConfigError);
  f(0) = 1.0;
  CHECK_THROWS_AS(synthesize_frf(mf, f), ConfigError);
  CHECK_THROWS_AS(synthesize_frf(mf, Eigen::VectorXcd::Ones(2)), ConfigError);
}

TEST_CASE("fitting a backbone averages duplicates and aligns the drive phase") {
  Backbone bb;
  bb.drive_sensor = 1;
  auto add = [&](double a, double w, double z, Complex rot, bool valid = true) {
    BackbonePoint p;
    p.a = a;
    p.omega = w;
    p.zeta = z;
    p.valid = valid;
    p.phi1 = Eigen::VectorXcd(2);
    p.phi1 << 0.4 * rot, 0.9 * rot;
    bb.points.push_back(p);
  };
  add(1e-5, 700.0, 0.001, std::polar(1.0, 0.3));
  add(1e-4, 650.0, 0.01, std::polar(1.0, -1.2));
  add(1e-4, 640.0, 0.03, std::polar(1.0, 2.0));
  add(1e-3, 500.0, 0.05, 1.0);
  add(3e-3, 450.0, 0.02, Complex(0.0, 1.0));
  add(5e-3, 1.0, 0.9, 1.0, false);
  const ModalFunctions mf = fit_backbone_functions(bb);
  CHECK(mf.knots().size() == 4);
  CHECK(mf.a_max() == 3e-3);
  CHECK(mf.omega(1e-4) == doctest::Approx(645.0));
  CHECK(mf.zeta(1e-4) == doctest::Approx(0.02));
  for (double a : mf.knots()) {
    CHECK(std::abs(mf.phi1(a)(1) - Complex(0.9, 0.0)) < 1e-12);
    CHECK(std::abs(mf.phi1(a)(0) - Complex(0.4, 0.0)) < 1e-12);
  }
}
