#include "nmtlab/epmc.hpp"

#include "nmtlab/errors.hpp"
#include "nmtlab/identify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace nmtlab {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct TrigTable {
  int H = -1, n_time = 0;
  Eigen::MatrixXd c, s;  // (H+1) x n_time
};

const TrigTable& trig_table(int H, int n_time) {
  thread_local TrigTable t;
  if (t.H != H || t.n_time != n_time) {
    t.H = H;
    t.n_time = n_time;
    t.c.resize(H + 1, n_time);
    t.s.resize(H + 1, n_time);
    for (int n = 0; n <= H; ++n)
      for (int k = 0; k < n_time; ++k) {
        const double ph = kTwoPi * n * k / n_time;
        t.c(n, k) = std::cos(ph);
        t.s(n, k) = std::sin(ph);
      }
  }
  return t;
}

}  // namespace

Eigen::MatrixXcd aft_nonlinear_force(const StructuralModel& model, const Eigen::MatrixXcd& X, int n_time,
                                     int max_cycles) {
  if (X.rows() != model.n_dof || X.cols() < 1) throw ConfigError("harmonic matrix has the wrong shape");
  const int H = static_cast<int>(X.cols()) - 1;
  if (n_time < 4 * H + 4) throw ConfigError("AFT needs at least 4H+4 time samples");
  const TrigTable& tt = trig_table(H, n_time);
  Eigen::MatrixXcd G = Eigen::MatrixXcd::Zero(model.n_dof, H + 1);
  if (model.friction.empty()) return G;

  std::vector<int> dofs;
  for (const auto& e : model.friction)
    if (std::find(dofs.begin(), dofs.end(), e.dof) == dofs.end()) dofs.push_back(e.dof);

  Eigen::VectorXd u(n_time), f(n_time), fe(n_time);
  for (int d : dofs) {
    Eigen::RowVectorXd re(H + 1), im(H + 1);
    for (int n = 0; n <= H; ++n) {
      re(n) = X(d, n).real();
      im(n) = n == 0 ? 0.0 : X(d, n).imag();
    }
    u = (re * tt.c - im * tt.s).transpose();
    const double umax = u.cwiseAbs().maxCoeff();
    f.setZero();
    for (const auto& e : model.friction) {
      if (e.dof != d) continue;
      JenkinsElement el = e;
      bool repeating = false;
      for (int cycle = 0; cycle < max_cycles && !repeating; ++cycle) {
        const double w0 = el.slider;
        for (int k = 0; k < n_time; ++k) {
          const JenkinsResponse r = jenkins_update(el, u(k));
          el.slider = r.slider;
          fe(k) = r.force;
        }
        repeating = std::abs(el.slider - w0) <= 1e-13 * (umax + e.fc / e.kt);
      }
      if (!repeating) throw ConvergenceError("friction hysteresis loop did not become periodic");
      f += fe;
    }
    for (int n = 0; n <= H; ++n) {
      const double scale = (n == 0 ? 1.0 : 2.0) / n_time;
      G(d, n) = Complex(scale * tt.c.row(n).dot(f), -scale * tt.s.row(n).dot(f));
    }
    G(d, 0) = Complex(G(d, 0).real(), 0.0);
  }
  return G;
}

EpmcSystem::EpmcSystem(const StructuralModel& model, const EpmcOptions& options)
    : model_(model), opt_(options), H_(options.harmonics) {
  model_.validate();
  if (H_ < 1) throw ConfigError("EPMC needs at least one harmonic");
  if (opt_.n_time < 4 * H_ + 4) throw ConfigError("AFT needs at least 4H+4 time samples");
  N_ = model_.n_dof;
  n_unknowns_ = N_ * (2 * H_ + 1) + 2;
  stuck_ = linear_modes(model_, ContactCondition::stuck, 3);
  sensor_pinv_ = pseudo_inverse(stuck_.shapes);
  for (const auto& e : model_.friction)
    if (std::find(friction_dofs_.begin(), friction_dofs_.end(), e.dof) == friction_dofs_.end())
      friction_dofs_.push_back(e.dof);
}

Eigen::VectorXd EpmcSystem::pack(const Eigen::MatrixXcd& X, double omega, double xi) const {
  if (X.rows() != N_ || X.cols() != H_ + 1) throw ConfigError("harmonic matrix has the wrong shape");
  Eigen::VectorXd y(n_unknowns_);
  y.head(N_) = X.col(0).real();
  for (int n = 1; n <= H_; ++n) {
    const Eigen::Index base = N_ + (n - 1) * 2 * N_;
    y.segment(base, N_) = X.col(n).real();
    y.segment(base + N_, N_) = X.col(n).imag();
  }
  y(n_unknowns_ - 2) = omega;
  y(n_unknowns_ - 1) = xi;
  return y;
}

Eigen::MatrixXcd EpmcSystem::unpack(const Eigen::VectorXd& y) const {
  if (y.size() != n_unknowns_) throw ConfigError("unknown vector has the wrong size");
  Eigen::MatrixXcd X(N_, H_ + 1);
  X.col(0) = y.head(N_).cast<Complex>();
  for (int n = 1; n <= H_; ++n) {
    const Eigen::Index base = N_ + (n - 1) * 2 * N_;
    for (Eigen::Index i = 0; i < N_; ++i) X(i, n) = Complex(y(base + i), y(base + N_ + i));
  }
  return X;
}

double EpmcSystem::modal_amplitude_of(const Eigen::MatrixXcd& X) const {
  Eigen::VectorXcd x1(static_cast<Eigen::Index>(model_.sensor_dofs.size()));
  for (std::size_t s = 0; s < model_.sensor_dofs.size(); ++s) x1(static_cast<Eigen::Index>(s)) = X(model_.sensor_dofs[s], 1);
  return (sensor_pinv_.cast<Complex>() * x1).norm();
}

Eigen::VectorXd EpmcSystem::residual_with(const Eigen::VectorXd& y, double a, const Eigen::MatrixXcd& g) const {
  const Eigen::MatrixXcd X = unpack(y);
  const double omega = omega_of(y), xi = xi_of(y);
  const auto& M = model_.mass;
  const auto& K = model_.stiffness;
  const auto& C = model_.damping;
  Eigen::VectorXd r(n_unknowns_);
  r.head(N_) = K * X.col(0).real() + g.col(0).real();
  for (int n = 1; n <= H_; ++n) {
    const double nw = n * omega;
    const Eigen::VectorXd xr = X.col(n).real(), xim = X.col(n).imag();
    const Eigen::VectorXd kr = K * xr - nw * nw * (M * xr), ki = K * xim - nw * nw * (M * xim);
    const Eigen::VectorXd dr = nw * (C * xr - xi * (M * xr)), di = nw * (C * xim - xi * (M * xim));
    const Eigen::Index base = N_ + (n - 1) * 2 * N_;
    r.segment(base, N_) = kr - di + g.col(n).real();
    r.segment(base + N_, N_) = ki + dr + g.col(n).imag();
  }
  r(n_unknowns_ - 2) = modal_amplitude_of(X) - a;
  r(n_unknowns_ - 1) = X(model_.drive_dof, 1).imag();
  return r;
}

Eigen::VectorXd EpmcSystem::residual(const Eigen::VectorXd& y, double a) const {
  return residual_with(y, a, aft_nonlinear_force(model_, unpack(y), opt_.n_time, opt_.max_aft_cycles));
}

Eigen::VectorXd EpmcSystem::scales(double a) const {
  Eigen::VectorXd s = Eigen::VectorXd::Constant(n_unknowns_, a * stuck_.full_shapes.col(0).cwiseAbs().maxCoeff());
  s(n_unknowns_ - 2) = stuck_.frequencies(0);
  s(n_unknowns_ - 1) = stuck_.frequencies(0);
  return s;
}

Eigen::VectorXd EpmcSystem::residual_weights(double a) const {
  const Eigen::VectorXd phi = stuck_.full_shapes.col(0);
  const double f_scale = (model_.stiffness * (a * phi)).cwiseAbs().maxCoeff();
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n_unknowns_, 1.0 / f_scale);
  w(n_unknowns_ - 2) = 1.0 / a;
  w(n_unknowns_ - 1) = 1.0 / (a * phi.cwiseAbs().maxCoeff());
  return w;
}

Eigen::MatrixXd EpmcSystem::jacobian(const Eigen::VectorXd& y, double a) const {
  const Eigen::MatrixXcd g0 = aft_nonlinear_force(model_, unpack(y), opt_.n_time, opt_.max_aft_cycles);
  const Eigen::VectorXd r0 = residual_with(y, a, g0);
  const Eigen::VectorXd s = scales(a);
  Eigen::MatrixXd J(n_unknowns_, n_unknowns_);
  const Eigen::Index n_disp = N_ * (2 * H_ + 1);
  for (Eigen::Index j = 0; j < n_unknowns_; ++j) {
    Eigen::VectorXd yj = y;
    const double h = opt_.fd_step * std::max(std::abs(y(j)), s(j));
    yj(j) += h;
    bool friction_column = false;
    if (j < n_disp) {
      const Eigen::Index dof = j < N_ ? j : ((j - N_) % (2 * N_)) % N_;
      friction_column = std::find(friction_dofs_.begin(), friction_dofs_.end(), static_cast<int>(dof)) !=
                        friction_dofs_.end();
    }
    // Friction forces depend only on friction-DOF harmonics.
    const Eigen::VectorXd rj =
        friction_column ? residual(yj, a) : residual_with(yj, a, g0);
    J.col(j) = (rj - r0) / h;
  }
  return J;
}

Eigen::VectorXd EpmcSystem::linear_guess(double a) const {
  Eigen::MatrixXcd X = Eigen::MatrixXcd::Zero(N_, H_ + 1);
  X.col(1) = (a * stuck_.full_shapes.col(0)).cast<Complex>();
  const double w = stuck_.frequencies(0);
  return pack(X, w, 2.0 * stuck_.damping_ratios(0) * w);
}

EpmcSolution EpmcSystem::solve(double a, const Eigen::VectorXd& guess) const {
  if (!(a > 0.0)) throw ConfigError("EPMC amplitude must be positive");
  const Eigen::VectorXd W = residual_weights(a);
  const Eigen::VectorXd D = scales(a);
  Eigen::VectorXd y = guess;
  EpmcSolution sol;
  sol.a = a;
  double norm = W.cwiseProduct(residual(y, a)).norm();
  int it = 0;
  for (; it < opt_.max_iterations && !(norm < opt_.tolerance); ++it) {
    const Eigen::MatrixXd Js = W.asDiagonal() * jacobian(y, a) * D.asDiagonal();
    const Eigen::VectorXd rs = W.cwiseProduct(residual(y, a));
    const Eigen::VectorXd dz = Js.partialPivLu().solve(-rs);
    if (!dz.allFinite()) break;
    const Eigen::VectorXd dy = D.cwiseProduct(dz);
    double lambda = 1.0;
    Eigen::VectorXd trial;
    double trial_norm = std::numeric_limits<double>::infinity();
    for (int ls = 0; ls < 8; ++ls, lambda *= 0.5) {
      trial = y + lambda * dy;
      try {
        trial_norm = W.cwiseProduct(residual(trial, a)).norm();
      } catch (const ConvergenceError&) {
        trial_norm = std::numeric_limits<double>::infinity();
      }
      if (trial_norm < norm) break;
    }
    if (!(trial_norm < std::numeric_limits<double>::infinity())) break;
    y = trial;
    norm = trial_norm;
  }
  sol.iterations = it;
  sol.residual_norm = norm;
  sol.converged = norm < opt_.tolerance;
  sol.harmonics = unpack(y);
  sol.omega = omega_of(y);
  sol.xi = xi_of(y);
  sol.zeta = sol.xi / (2.0 * sol.omega);
  return sol;
}

Eigen::VectorXd epmc_residual(const StructuralModel& model, const Eigen::VectorXd& unknowns, double a,
                              const EpmcOptions& options) {
  return EpmcSystem(model, options).residual(unknowns, a);
}

std::vector<double> log_amplitudes(double a_min, double a_max, int n) {
  if (!(a_min > 0.0) || !(a_max > a_min) || n < 2) throw ConfigError("invalid amplitude range");
  std::vector<double> a(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) a[static_cast<std::size_t>(k)] = a_min * std::pow(a_max / a_min, static_cast<double>(k) / (n - 1));
  a.back() = a_max;
  return a;
}

EpmcTrace trace_epmc_backbone(const StructuralModel& model, const std::vector<double>& amplitudes,
                              const EpmcOptions& options) {
  if (amplitudes.empty()) throw ConfigError("empty amplitude range");
  for (std::size_t i = 0; i < amplitudes.size(); ++i) {
    if (!(amplitudes[i] > 0.0)) throw ConfigError("amplitudes must be positive");
    if (i > 0 && !(amplitudes[i] > amplitudes[i - 1])) throw ConfigError("amplitudes must be increasing");
  }
  const EpmcSystem sys(model, options);
  EpmcTrace trace;

  auto to_y = [&](const EpmcSolution& s) { return sys.pack(s.harmonics, s.omega, s.xi); };
  std::vector<std::pair<double, Eigen::VectorXd>> history;  // converged (log a, y)

  auto predict = [&](double a) -> Eigen::VectorXd {
    const double la = std::log(a);
    if (history.empty()) return sys.linear_guess(a);
    const auto& [l1, y1] = history.back();
    if (history.size() == 1) {
      Eigen::VectorXd y = y1;
      const double ratio = a / std::exp(l1);
      y.head(y.size() - 2) *= ratio;
      return y;
    }
    const auto& [l0, y0] = history[history.size() - 2];
    return y1 + (y1 - y0) * ((la - l1) / (l1 - l0));
  };

  for (double target : amplitudes) {
    double a_try = target;
    int halvings = 0;
    while (true) {
      EpmcSolution sol = sys.solve(a_try, predict(a_try));
      if (sol.converged) {
        history.emplace_back(std::log(a_try), to_y(sol));
        if (a_try == target) {
          trace.solutions.push_back(std::move(sol));
          break;
        }
        a_try = target;
        continue;
      }
      if (history.empty() || ++halvings > options.max_halvings) {
        std::ostringstream os;
        os << "continuation stalled at a = " << a_try << " (target " << target << ", residual "
           << sol.residual_norm << " after " << sol.iterations << " iterations)";
        trace.stalled = true;
        trace.diagnostic = os.str();
        return trace;
      }
      a_try = std::exp(0.5 * (history.back().first + std::log(a_try)));
    }
  }
  return trace;
}

double energy_balance_error(const StructuralModel& model, const EpmcSolution& s, int n_time) {
  const Eigen::MatrixXcd& X = s.harmonics;
  const Eigen::MatrixXcd G = aft_nonlinear_force(model, X, n_time);
  double injected = 0.0, viscous = 0.0, friction = 0.0;
  for (Eigen::Index n = 1; n < X.cols(); ++n) {
    const double nw = static_cast<double>(n) * s.omega;
    const Eigen::VectorXcd v = Complex(0.0, nw) * X.col(n);
    injected += 0.5 * s.xi * (v.adjoint() * model.mass.cast<Complex>() * v)(0).real();
    viscous += 0.5 * (v.adjoint() * model.damping.cast<Complex>() * v)(0).real();
    friction += 0.5 * v.dot(G.col(n)).real();
  }
  if (injected == 0.0) return viscous + friction == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(injected - viscous - friction) / std::abs(injected);
}

Backbone epmc_backbone(const StructuralModel& model, const EpmcTrace& trace) {
  const LinearModeSet stuck = linear_modes(model, ContactCondition::stuck, 3);
  const LinearModeSet free = linear_modes(model, ContactCondition::free, 3);
  const auto ns = static_cast<Eigen::Index>(model.sensor_dofs.size());
  Backbone bb;
  bb.source = "epmc";
  bb.drive_sensor = model.drive_sensor();
  for (std::size_t i = 0; i < trace.solutions.size(); ++i) {
    const EpmcSolution& s = trace.solutions[i];
    BackbonePoint p;
    p.level_index = static_cast<int>(i);
    p.omega = s.omega;
    p.zeta = s.zeta;
    p.a = s.a;
    const auto H = s.harmonics.cols() - 1;
    p.harmonics.resize(ns, H + 1);
    for (Eigen::Index k = 0; k < ns; ++k) p.harmonics.row(k) = s.harmonics.row(model.sensor_dofs[static_cast<std::size_t>(k)]);
    p.phi1 = p.harmonics.col(1) / s.a;
    p.f1 = std::numeric_limits<double>::quiet_NaN();
    p.p1 = s.zeta * s.omega * s.omega * s.omega * s.a * s.a;
    std::vector<Complex> acc(static_cast<std::size_t>(std::max<Eigen::Index>(H, 2)) + 1, Complex(0.0, 0.0));
    for (Eigen::Index n = 0; n <= H; ++n) {
      const double nw = static_cast<double>(n) * s.omega;
      acc[static_cast<std::size_t>(n)] = -nw * nw * s.harmonics(model.drive_dof, n);
    }
    p.thd_response = thd(acc);
    p.gamma_stuck = mode_projection(p.phi1, stuck.shapes).normalized;
    p.gamma_free = mode_projection(p.phi1, free.shapes).normalized;
    p.valid = s.converged;
    bb.points.push_back(std::move(p));
  }
  return bb;
}

}  // namespace nmtlab
