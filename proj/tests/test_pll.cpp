#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nmtlab/errors.hpp"
#include "nmtlab/identify.hpp"
#include "nmtlab/pll.hpp"
#include "nmtlab/structure.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

using namespace nmtlab;

namespace {

constexpr double kPi = std::numbers::pi;

double settle_detector(double harmonic3) {
  const double w = 2.0 * kPi * 100.0, tau = 1.0, dt = 2.0 * kPi / w / 200.0;
  SynchronousDetector det(tau);
  double th = 0.0;
  const int n = static_cast<int>(5.0 * tau / dt);
  for (int k = 0; k < n; ++k) {
    const double t = k * dt;
    th = det.step(std::cos(w * t), std::cos(w * t - kPi / 2.0) + harmonic3 * std::cos(3.0 * w * t), w * t, dt);
  }
  return th;
}

struct LinearRig {
  StructuralModel model = stuck_linear_model(build_beam_model(default_rig_config()));
  LinearModeSet stuck = linear_modes(model, ContactCondition::stuck, 3);
  PllConfig pll = default_pll_config(stuck);

  // Drive-point receptance.
  Complex receptance(double W) const {
    const Eigen::MatrixXcd D = model.stiffness.cast<Complex>() - W * W * model.mass.cast<Complex>() +
                               Complex(0.0, W) * model.damping.cast<Complex>();
    Eigen::VectorXcd f = Eigen::VectorXcd::Zero(model.n_dof);
    f(model.drive_dof) = 1.0;
    return D.partialPivLu().solve(f)(model.drive_dof);
  }
  // Acceleration-minus-force phase at the drive point.
  double accel_phase(double W) const { return wrap_phase(kPi + std::arg(receptance(W))); }
};

LinearRig& linear_rig() {
  static LinearRig r;
  return r;
}

}  // namespace

TEST_CASE("detector on a quadrature pair") {
  CHECK(settle_detector(0.0) == doctest::Approx(-kPi / 2.0).epsilon(1e-3 / (kPi / 2.0)));
}

TEST_CASE("third harmonic does not move the fundamental phase") {
  CHECK(std::abs(settle_detector(0.3) - settle_detector(0.0)) < 1e-3);
}

TEST_CASE("zero response leaves the phase undefined") {
  SynchronousDetector det(0.01);
  for (int k = 0; k < 1000; ++k) det.step(std::cos(0.01 * k), 0.0, 0.01 * k, 1e-4);
  CHECK_FALSE(det.defined());
}

TEST_CASE("PI controller") {
  PiController p{2.0, 0.0};
  CHECK(p.step(0.5, 1e-3) == doctest::Approx(1.0));

  PiController i{0.0, 1.0};
  const double dt = 1e-4;
  double y = 0.0;
  for (int k = 0; k < 20000; ++k) y = i.step(1.0, dt);
  CHECK(std::abs(y - 2.0) <= dt);

  PiController c{0.0, 1.0, 1.0};
  for (int k = 0; k < 10; ++k) y = c.step(10.0, 0.05);
  CHECK(y == 1.0);
  const double frozen = c.integrator;
  c.step(10.0, 0.05);
  CHECK(c.integrator == frozen);
}

TEST_CASE("phase wrapping") {
  CHECK(wrap_phase(3.0 * kPi / 2.0) == doctest::Approx(-kPi / 2.0));
  CHECK(wrap_phase(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_phase(0.25) == doctest::Approx(0.25));
}

TEST_CASE("phase resonance lock on the stuck-linear rig") {
  LinearRig& r = linear_rig();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(r.model.stiffness, r.model.mass);
  const double w1 = std::sqrt(es.eigenvalues()(0));
  const LockResult lr = lock_phase_point(r.model, r.pll, 0.1);
  CHECK(lr.omega == doctest::Approx(w1).epsilon(1e-3));

  // Locked-state properties of the recorded window.
  const auto& th = lr.record.channel("theta_hat");
  double max_err = 0.0;
  for (double v : th) max_err = std::max(max_err, std::abs(wrap_phase(v - r.pll.theta_setpoint)));
  CHECK(max_err < r.pll.lock_tolerance);
  const auto& om = lr.record.channel("omega");
  const auto [lo, hi] = std::minmax_element(om.begin(), om.end());
  CHECK((*hi - *lo) / lr.omega < 1e-6);
  const HarmonicSet h = fourier_coefficients(lr.record, lr.omega, 7, {"force"});
  CHECK(thd(h, "force") < 1e-10);
}

TEST_CASE("lock at a 45 degree setpoint follows the linear FRF phase") {
  LinearRig& r = linear_rig();
  // Bisection for the frequency with a 45 degree acceleration-force phase.
  double lo = r.stuck.frequencies(0), hi = 1.2 * r.stuck.frequencies(0);
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (r.accel_phase(mid) > kPi / 4.0 ? lo : hi) = mid;
  }
  PllConfig cfg = r.pll;
  cfg.theta_setpoint = kPi / 4.0;
  const LockResult lr = lock_phase_point(r.model, cfg, 0.1);
  CHECK(lr.omega == doctest::Approx(0.5 * (lo + hi)).epsilon(2e-3));
}

TEST_CASE("zero force cannot lock") {
  LinearRig& r = linear_rig();
  PllConfig cfg = r.pll;
  cfg.max_lock_time = 2.0;
  CHECK_THROWS_AS(lock_phase_point(r.model, cfg, 0.0), LockError);
}

TEST_CASE("single-level schedule") {
  LinearRig& r = linear_rig();
  const Backbone bb = track_backbone(r.model, r.pll, {0.05});
  CHECK(bb.points.size() == 1);
  CHECK(bb.points[0].valid);
  CHECK(bb.drive_sensor == r.model.drive_sensor());
}

TEST_CASE("stepped sine on the linear rig lies on the FRF") {
  LinearRig& r = linear_rig();
  const double F = 0.1;
  std::vector<double> setpoints;
  for (double d : {20.0, 60.0, 80.0, 90.0, 100.0, 120.0, 145.0}) setpoints.push_back(d * kPi / 180.0);
  AmplitudeLoop loop;
  const SteppedSineCurve c = run_stepped_sine_frf(r.model, r.pll, F, setpoints, loop);
  REQUIRE(c.points.size() == setpoints.size());
  const int ds = r.model.drive_sensor();
  const SteppedSinePoint* best = nullptr;
  for (const auto& p : c.points) {
    CHECK(p.valid);
    CHECK(p.f1 == doctest::Approx(F).epsilon(loop.tolerance));
    CHECK(p.amplitude(ds) == doctest::Approx(std::abs(r.receptance(p.omega)) * p.f1).epsilon(0.01));
    if (!best || p.amplitude(ds) > best->amplitude(ds)) best = &p;
  }
  // Phase resonance maximizes the response in the linear regime.
  CHECK(best->theta_setpoint == doctest::Approx(kPi / 2.0));

  // The 90 degree point coincides with the backbone point at the same force.
  const Backbone bb = track_backbone(r.model, r.pll, {F});
  const auto& p = bb.points.at(0);
  CHECK(best->omega == doctest::Approx(p.omega).epsilon(1e-3));
  CHECK(best->amplitude(ds) == doctest::Approx(std::abs(p.harmonics(ds, 1))).epsilon(0.01));
}

TEST_CASE("backbone repeats over an increasing and decreasing schedule") {
  const StructuralModel m = build_beam_model(default_rig_config());
  const PllConfig cfg = default_pll_config(linear_modes(m, ContactCondition::stuck, 1));
  const Backbone up = track_backbone(m, cfg, {0.3, 3.0, 18.0});
  const Backbone down = track_backbone(m, cfg, {18.0, 3.0, 0.3});
  REQUIRE(up.points.size() == 3);
  REQUIRE(down.points.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const auto& a = up.points[i];
    const auto& b = down.points[2 - i];
    CHECK(b.omega == doctest::Approx(a.omega).epsilon(0.02));
    CHECK(b.a == doctest::Approx(a.a).epsilon(0.05));
  }
  CHECK(up.points[1].omega < up.points[0].omega);
  CHECK(up.points[2].omega < up.points[1].omega);
  // Micro-slip raises the damping well above the stick limit.
  CHECK(up.points[2].zeta > 10.0 * up.points[0].zeta);
}

TEST_CASE("lowest default level has the stuck-linear damping") {
  const StructuralModel m = build_beam_model(default_rig_config());
  const PllConfig cfg = default_pll_config(linear_modes(m, ContactCondition::stuck, 1));
  const Backbone bb = track_backbone(m, cfg, {0.01});
  CHECK(bb.points.at(0).zeta == doctest::Approx(0.0012).epsilon(0.10));
  CHECK(bb.points.at(0).gamma_stuck(0) >= 0.95);
}
