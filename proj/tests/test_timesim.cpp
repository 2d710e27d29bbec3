#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nmtlab/errors.hpp"
#include "nmtlab/identify.hpp"
#include "nmtlab/structure.hpp"
#include "nmtlab/timesim.hpp"

#include <cmath>
#include <numbers>

using namespace nmtlab;

namespace {

constexpr double kPi = std::numbers::pi;

StructuralModel sdof(double k, double c) {
  StructuralModel m;
  m.n_dof = 1;
  m.mass = Eigen::MatrixXd::Identity(1, 1);
  m.stiffness = Eigen::MatrixXd::Constant(1, 1, k);
  m.damping = Eigen::MatrixXd::Constant(1, 1, c);
  m.sensor_dofs = {0};
  m.drive_dof = 0;
  return m;
}

double fundamental(const TimeSeriesRecord& r, const std::string& ch, double omega) {
  return std::abs(fourier_coefficients(r, omega, 1, {ch}).channel(ch)[1]);
}

}  // namespace

TEST_CASE("undamped SDOF free vibration keeps amplitude and period") {
  const double w = 2.0 * kPi * 10.0;
  const StructuralModel m = sdof(w * w, 0.0);
  const double T = 0.1, dt = T / 500.0;
  Simulator sim(m, dt);
  SimState s = rest_state(m);
  s.x(0) = 1.0;
  s.a(0) = -w * w;
  sim.set_state(s);
  double peak = 0.0, first_up = -1.0, last_up = -1.0;
  int ups = 0;
  double x_prev = 1.0;
  for (int k = 1; k <= 100 * 500; ++k) {
    sim.advance(0.0);
    const double x = sim.state().x(0);
    if (k > 99 * 500) peak = std::max(peak, std::abs(x));
    if (x_prev < 0.0 && x >= 0.0) {
      const double tc = sim.state().t - dt * x / (x - x_prev);
      if (first_up < 0.0) first_up = tc;
      last_up = tc;
      ++ups;
    }
    x_prev = x;
  }
  CHECK(peak == doctest::Approx(1.0).epsilon(0.005));
  CHECK((last_up - first_up) / (ups - 1) == doctest::Approx(T).epsilon(1e-4));
}

TEST_CASE("damped MDOF energy follows modal superposition") {
  StructuralModel m;
  m.n_dof = 2;
  m.mass = Eigen::MatrixXd::Identity(2, 2);
  m.stiffness.resize(2, 2);
  m.stiffness << 2e4, -1e4, -1e4, 1e4;
  m.damping = Eigen::MatrixXd::Zero(2, 2);
  m.sensor_dofs = {0, 1};
  m.drive_dof = 1;
  const LinearModeSet modes = linear_modes(m, ContactCondition::stuck, 2);
  const Eigen::Vector2d zeta(0.01, 0.02);
  const Eigen::MatrixXd mp = m.mass * modes.full_shapes;
  m.damping = mp * (2.0 * zeta.cwiseProduct(modes.frequencies)).asDiagonal() * mp.transpose();

  const Eigen::Vector2d q0(1.0, 0.5);
  const double T1 = 2.0 * kPi / modes.frequencies(0);
  const double dt = T1 / 500.0;
  Simulator sim(m, dt);
  SimState s = rest_state(m);
  s.x = modes.full_shapes * q0;
  s.a = -m.stiffness * s.x;
  sim.set_state(s);
  const int n = 50 * 500;
  for (int k = 0; k < n; ++k) sim.advance(0.0);
  const double t = sim.state().t;

  double e_exact = 0.0;
  for (int j = 0; j < 2; ++j) {
    const double w = modes.frequencies(j), z = zeta(j), wd = w * std::sqrt(1.0 - z * z);
    const double c = q0(j), b = z * w * q0(j) / wd;
    const double q = std::exp(-z * w * t) * (c * std::cos(wd * t) + b * std::sin(wd * t));
    const double qd = std::exp(-z * w * t) * ((-z * w * c + wd * b) * std::cos(wd * t) + (-z * w * b - wd * c) * std::sin(wd * t));
    e_exact += 0.5 * (qd * qd + w * w * q * q);
  }
  const auto& st = sim.state();
  const double e_sim = 0.5 * st.v.dot(m.mass * st.v) + 0.5 * st.x.dot(m.stiffness * st.x);
  CHECK(e_sim == doctest::Approx(e_exact).epsilon(0.01));
}

TEST_CASE("zero force from rest stays at rest") {
  const StructuralModel m = build_beam_model(default_rig_config());
  SimState s = rest_state(m);
  const Eigen::VectorXd f = Eigen::VectorXd::Zero(m.n_dof);
  for (int k = 0; k < 50; ++k) s = newmark_step(m, s, f, 1e-5);
  CHECK(s.x.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("steady state of a resonant SDOF") {
  const double w = 2.0 * kPi * 50.0, zeta = 0.01, F = 1.0;
  const StructuralModel m = sdof(w * w, 2.0 * zeta * w);
  Simulator sim(m, 2.0 * kPi / w / 500.0);
  SteadyConfig cfg;
  const TimeSeriesRecord r = run_to_steady_state(sim, [&](double t) { return F * std::cos(w * t); }, w, cfg);
  CHECK(r.size() == static_cast<std::size_t>(cfg.n_record * samples_per_period(sim.dt(), w)));
  CHECK(fundamental(r, "drive_disp", w) == doctest::Approx(F / (2.0 * zeta * w * w)).epsilon(0.005));
}

TEST_CASE("stuck-linear steady state matches the linear FRF") {
  const StructuralModel m = stuck_linear_model(build_beam_model(default_rig_config()));
  const double Omega = 650.0, F = 0.5;
  Simulator sim(m, 2.0 * kPi / Omega / 500.0);
  const TimeSeriesRecord r = run_to_steady_state(sim, [&](double t) { return F * std::cos(Omega * t); }, Omega, {});
  Eigen::VectorXcd f = Eigen::VectorXcd::Zero(m.n_dof);
  f(m.drive_dof) = F;
  const Eigen::MatrixXcd D = m.stiffness.cast<Complex>() - Omega * Omega * m.mass.cast<Complex>() +
                             Complex(0.0, Omega) * m.damping.cast<Complex>();
  const Eigen::VectorXcd x = D.partialPivLu().solve(f);
  CHECK(fundamental(r, "drive_disp", Omega) == doctest::Approx(std::abs(x(m.drive_dof))).epsilon(0.01));
}

TEST_CASE("never-settling run times out with a partial record") {
  const double w = 2.0 * kPi * 50.0;
  const StructuralModel m = sdof(w * w, 2.0 * 1e-4 * w);
  Simulator sim(m, 2.0 * kPi / w / 200.0);
  SteadyConfig cfg;
  cfg.max_periods = 12;
  bool thrown = false;
  try {
    run_to_steady_state(sim, [&](double t) { return std::cos(w * t); }, w, cfg);
  } catch (const SteadyStateTimeout& e) {
    thrown = true;
    CHECK(e.trace().rms_velocity.size() > 0);
  }
  CHECK(thrown);
}

TEST_CASE("friction model below slip equals the stuck-linear model") {
  const StructuralModel full = build_beam_model(default_rig_config());
  const StructuralModel lin = stuck_linear_model(full);
  const double Omega = 690.0, dt = 2.0 * kPi / Omega / 500.0;
  Simulator a(full, dt), b(lin, dt);
  for (int k = 1; k <= 3000; ++k) {
    const double f = 1e-3 * std::sin(Omega * k * dt);
    a.advance(f);
    b.advance(f);
  }
  const double scale = b.state().x.cwiseAbs().maxCoeff();
  CHECK(scale > 0.0);
  CHECK((a.state().x - b.state().x).cwiseAbs().maxCoeff() < 1e-8 * scale);
}

TEST_CASE("records are deterministic and converged in dt") {
  const StructuralModel m = build_beam_model(default_rig_config());
  const double Omega = 640.0, F = 2.0;
  auto run = [&](double div) {
    Simulator sim(m, 2.0 * kPi / Omega / 500.0 / div);
    return run_to_steady_state(sim, [&](double t) { return F * std::cos(Omega * t); }, Omega, {});
  };
  const TimeSeriesRecord r1 = run(1.0), r2 = run(1.0), r3 = run(2.0);
  CHECK(r1.data == r2.data);
  const double a1 = fundamental(r1, "drive_disp", Omega), a3 = fundamental(r3, "drive_disp", Omega);
  CHECK(std::abs(a1 - a3) / a3 < 2e-3);
}

TEST_CASE("settling detector") {
  CHECK(sequence_settled({1.0, 1.0, 1.0, 1.0, 1.0, 1.0}, 5, 1e-3));
  CHECK_FALSE(sequence_settled({1.0, 1.1, 1.2, 1.3, 1.4, 1.5}, 5, 1e-3));
  // Slow geometric drift whose remaining change exceeds the tolerance.
  std::vector<double> v;
  for (int k = 0; k < 10; ++k) v.push_back(1.0 - 0.01 * std::pow(0.99, k));
  CHECK_FALSE(sequence_settled(v, 5, 1e-3));
  // Small alternating ripple.
  CHECK(sequence_settled({1.0, 1.0001, 1.0, 1.0001, 1.0, 1.0001}, 5, 1e-3));
  CHECK_FALSE(sequence_settled({1.0, 1.0}, 5, 1e-3));
}
