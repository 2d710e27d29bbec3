#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nmtlab/epmc.hpp"
#include "nmtlab/errors.hpp"
#include "nmtlab/structure.hpp"

#include <cmath>
#include <numbers>

using namespace nmtlab;

namespace {

constexpr double kPi = std::numbers::pi;

StructuralModel single_jenkins(double kt, double fc) {
  StructuralModel m;
  m.n_dof = 1;
  m.mass = Eigen::MatrixXd::Identity(1, 1);
  m.stiffness = Eigen::MatrixXd::Constant(1, 1, 1e4);
  m.damping = Eigen::MatrixXd::Zero(1, 1);
  m.friction = {JenkinsElement{0, kt, fc, 0.0}};
  m.sensor_dofs = {0};
  m.drive_dof = 0;
  return m;
}

// Stabilized Jenkins force for u = X cos(tau), tau in [0, 2 pi).
double jenkins_loop_force(double tau, double X, double kt, double fc) {
  const double u = X * std::cos(tau);
  if (tau <= kPi) return std::max(-fc, fc - kt * (X - u));
  return std::min(fc, -fc + kt * (u + X));
}

const StructuralModel& rig() {
  static const StructuralModel m = build_beam_model(default_rig_config());
  return m;
}

const EpmcTrace& rig_trace() {
  static const EpmcTrace t = trace_epmc_backbone(rig(), log_amplitudes(5e-6, 2.5e-2, 16));
  return t;
}

}  // namespace

TEST_CASE("AFT force in full stick is the spring force") {
  const double kt = 2e5, fc = 3.0;
  const StructuralModel m = single_jenkins(kt, fc);
  Eigen::MatrixXcd X = Eigen::MatrixXcd::Zero(1, 4);
  X(0, 1) = Complex(3e-6, -2e-6);
  X(0, 3) = Complex(1e-7, 4e-7);
  const Eigen::MatrixXcd G = aft_nonlinear_force(m, X, 256);
  for (int n = 1; n <= 3; ++n) CHECK(std::abs(G(0, n) - kt * X(0, n)) < 1e-10 * kt * std::abs(X(0, 1)));
  CHECK(std::abs(G(0, 0)) < 1e-10 * kt * std::abs(X(0, 1)));
}

TEST_CASE("AFT fundamental matches the describing function by quadrature") {
  const double kt = 2e5, fc = 3.0;
  const StructuralModel m = single_jenkins(kt, fc);
  for (double X : {2.0 * fc / kt, 5.0 * fc / kt, 40.0 * fc / kt}) {
    Eigen::MatrixXcd Xh = Eigen::MatrixXcd::Zero(1, 2);
    Xh(0, 1) = X;
    const Complex g = aft_nonlinear_force(m, Xh, 1 << 14)(0, 1);
    const int n = 1 << 20;
    Complex ref = 0.0;
    for (int k = 0; k < n; ++k) {
      const double tau = 2.0 * kPi * (k + 0.5) / n;
      ref += jenkins_loop_force(tau, X, kt, fc) * std::exp(Complex(0.0, -tau));
    }
    ref *= 2.0 / n;
    CHECK(std::abs(g - ref) < 1e-6 * std::abs(ref));
    // Dissipation per cycle equals the loop area.
    CHECK(kPi * X * ref.imag() == doctest::Approx(4.0 * fc * (X - fc / kt)).epsilon(1e-5));
  }
}

TEST_CASE("linear mode solves the residual exactly") {
  const StructuralModel lin = stuck_linear_model(rig());
  const EpmcSystem sys(lin);
  const double a = 1e-4;
  const Eigen::VectorXd y = sys.linear_guess(a);
  const Eigen::VectorXd r = sys.residual(y, a);
  const double force_scale = (lin.stiffness * sys.stuck_modes().full_shapes.col(0)).norm() * a;
  CHECK(r.head(r.size() - 2).norm() < 1e-8 * force_scale);
  CHECK(std::abs(r(r.size() - 2)) < 1e-12 * a);
  CHECK(r(r.size() - 1) == 0.0);
}

TEST_CASE("zero harmonics leave only the amplitude constraint") {
  const EpmcSystem sys(rig());
  const double a = 3e-5;
  const Eigen::VectorXd y = sys.pack(Eigen::MatrixXcd::Zero(rig().n_dof, sys.harmonics() + 1), 700.0, 1.0);
  const Eigen::VectorXd r = sys.residual(y, a);
  CHECK(r.head(r.size() - 2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r(r.size() - 2) == doctest::Approx(-a));
  CHECK(r(r.size() - 1) == 0.0);
}

TEST_CASE("pack and unpack are inverse") {
  const EpmcSystem sys(rig());
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(sys.n_unknowns(), -1.0, 2.0);
  const Eigen::MatrixXcd X = sys.unpack(y);
  CHECK(X.col(0).imag().cwiseAbs().maxCoeff() == 0.0);
  CHECK((sys.pack(X, sys.omega_of(y), sys.xi_of(y)) - y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jacobian passes a Taylor test") {
  const EpmcSystem sys(rig());
  const double a = 2e-4;
  const EpmcSolution s = sys.solve(a, sys.linear_guess(a));
  REQUIRE(s.converged);
  const Eigen::VectorXd y = sys.pack(s.harmonics, s.omega, s.xi);
  const Eigen::MatrixXd J = sys.jacobian(y, a);
  const Eigen::VectorXd r0 = sys.residual(y, a);
  Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(y.size(), 0.3, 1.0).cwiseProduct(y.cwiseAbs());
  d(d.size() - 2) = 1e-3 * s.omega;
  d(d.size() - 1) = 1e-3 * s.omega;
  auto remainder = [&](double eps) { return (sys.residual(y + eps * d, a) - r0 - eps * J * d).norm(); };
  auto linear = [&](double eps) { return (eps * J * d).norm(); };
  CHECK(remainder(1e-3) < 1e-2 * linear(1e-3));
  CHECK(remainder(1e-4) < 1e-3 * linear(1e-4));
}

TEST_CASE("linear model traces a constant backbone") {
  const StructuralModel lin = stuck_linear_model(rig());
  const EpmcTrace t = trace_epmc_backbone(lin, log_amplitudes(1e-6, 1e-2, 6));
  REQUIRE(t.solutions.size() == 6);
  const double w = linear_modes(lin, ContactCondition::stuck, 1).frequencies(0);
  for (const auto& s : t.solutions) {
    CHECK(s.converged);
    CHECK(s.omega == doctest::Approx(w).epsilon(1e-9));
    CHECK(s.zeta == doctest::Approx(0.0012).epsilon(1e-8));
  }
}

TEST_CASE("default rig backbone softens between the stuck and free limits") {
  const EpmcTrace& t = rig_trace();
  REQUIRE_FALSE(t.stalled);
  REQUIRE(t.solutions.size() == 16);
  const double w_stuck = linear_modes(rig(), ContactCondition::stuck, 1).frequencies(0);
  const double w_free = linear_modes(rig(), ContactCondition::free, 1).frequencies(0);
  for (std::size_t i = 0; i < t.solutions.size(); ++i) {
    const auto& s = t.solutions[i];
    CHECK(s.converged);
    CHECK(s.omega <= w_stuck * (1.0 + 1e-9));
    CHECK(s.omega >= w_free);
    if (i > 0) CHECK(s.omega <= t.solutions[i - 1].omega * (1.0 + 1e-9));
  }
  CHECK(t.solutions.front().omega == doctest::Approx(w_stuck).epsilon(1e-3));
}

TEST_CASE("default rig damping rises to a peak and falls") {
  const EpmcTrace& t = rig_trace();
  std::size_t peak = 0;
  for (std::size_t i = 0; i < t.solutions.size(); ++i)
    if (t.solutions[i].zeta > t.solutions[peak].zeta) peak = i;
  CHECK(peak > 0);
  CHECK(peak + 1 < t.solutions.size());
  CHECK(t.solutions.front().zeta == doctest::Approx(0.0012).epsilon(0.05));
  CHECK(t.solutions[peak].zeta > 0.05);
  CHECK(t.solutions.back().zeta < 0.5 * t.solutions[peak].zeta);
}

TEST_CASE("solutions balance injected and dissipated energy") {
  for (const auto& s : rig_trace().solutions) CHECK(energy_balance_error(rig(), s) < 1e-6);
}

TEST_CASE("fundamental is converged in the AFT sample count") {
  const double a = 1e-3;
  EpmcOptions fine;
  fine.n_time = 2048;
  const EpmcSystem coarse_sys(rig()), fine_sys(rig(), fine);
  const EpmcSolution c = coarse_sys.solve(a, coarse_sys.linear_guess(a));
  const EpmcSolution f = fine_sys.solve(a, c.converged ? coarse_sys.pack(c.harmonics, c.omega, c.xi)
                                                      : fine_sys.linear_guess(a));
  REQUIRE(c.converged);
  REQUIRE(f.converged);
  const int d = rig().drive_dof;
  CHECK(std::abs(f.harmonics(d, 1) - c.harmonics(d, 1)) < 1e-6 * std::abs(c.harmonics(d, 1)));
  CHECK(f.omega == doctest::Approx(c.omega).epsilon(1e-6));
}

TEST_CASE("invalid EPMC inputs are rejected") {
  CHECK_THROWS_AS(trace_epmc_backbone(rig(), {}), ConfigError);
  CHECK_THROWS_AS(trace_epmc_backbone(rig(), {1e-5, 1e-6}), ConfigError);
  EpmcOptions o;
  o.harmonics = 0;
  CHECK_THROWS_AS(EpmcSystem(rig(), o), ConfigError);
  const EpmcSystem sys(rig());
  CHECK_THROWS_AS(sys.solve(0.0, sys.linear_guess(1e-5)), ConfigError);
}

TEST_CASE("log-spaced amplitudes") {
  const auto a = log_amplitudes(1e-6, 1e-2, 5);
  REQUIRE(a.size() == 5);
  CHECK(a.front() == doctest::Approx(1e-6));
  CHECK(a[2] == doctest::Approx(1e-4));
  CHECK(a.back() == doctest::Approx(1e-2));
}
