#pragma once

#include "nmtlab/pll.hpp"
#include "nmtlab/structure.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace nmtlab {

struct EpmcOptions {
  int harmonics = 7;
  int n_time = 1024;  // AFT samples per period
  double tolerance = 1e-10;
  int max_iterations = 25;
  double fd_step = 1e-7;
  int max_halvings = 10;    // amplitude-step halvings before a stall
  int max_aft_cycles = 20;  // hysteresis cycles allowed to reach a repeating loop
};

struct EpmcSolution {
  double a = 0.0;
  double omega = 0.0;
  double xi = 0.0;
  double zeta = 0.0;  // xi / (2 omega)
  // Peak harmonics per DOF, x(t) = Re sum_n X_n exp(i n omega t), n = 0..H.
  Eigen::MatrixXcd harmonics;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct EpmcTrace {
  std::vector<EpmcSolution> solutions;
  bool stalled = false;
  std::string diagnostic;
};

// Harmonics of all friction forces for the displacement harmonics `X`
// (n_dof x (H+1)), cycling each element until its loop repeats.
Eigen::MatrixXcd aft_nonlinear_force(const StructuralModel& model, const Eigen::MatrixXcd& X, int n_time,
                                     int max_cycles = 20);

// Harmonic-balance system of the extended periodic motion concept with an
// amplitude constraint on the sensor-based modal amplitude and a phase anchor
// on the drive sensor.
class EpmcSystem {
 public:
  EpmcSystem(const StructuralModel& model, const EpmcOptions& options = {});

  Eigen::Index n_unknowns() const { return n_unknowns_; }
  int harmonics() const { return H_; }

  Eigen::VectorXd pack(const Eigen::MatrixXcd& X, double omega, double xi) const;
  Eigen::MatrixXcd unpack(const Eigen::VectorXd& y) const;
  double omega_of(const Eigen::VectorXd& y) const { return y(n_unknowns_ - 2); }
  double xi_of(const Eigen::VectorXd& y) const { return y(n_unknowns_ - 1); }

  // Unscaled residual: harmonic-balance forces per DOF and harmonic, then
  // modal_amplitude - a, then Im X_1 at the drive sensor.
  Eigen::VectorXd residual(const Eigen::VectorXd& y, double a) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& y, double a) const;

  // Initial guess from the stuck-linear first mode at amplitude a.
  Eigen::VectorXd linear_guess(double a) const;

  // Newton corrector from `guess`; the solution is marked unconverged on failure.
  EpmcSolution solve(double a, const Eigen::VectorXd& guess) const;

  double modal_amplitude_of(const Eigen::MatrixXcd& X) const;

  const StructuralModel& model() const { return model_; }
  const LinearModeSet& stuck_modes() const { return stuck_; }

 private:
  Eigen::VectorXd residual_with(const Eigen::VectorXd& y, double a, const Eigen::MatrixXcd& g) const;
  Eigen::VectorXd scales(double a) const;
  Eigen::VectorXd residual_weights(double a) const;

  StructuralModel model_;
  EpmcOptions opt_;
  int H_ = 0;
  Eigen::Index N_ = 0;
  Eigen::Index n_unknowns_ = 0;
  LinearModeSet stuck_;
  Eigen::MatrixXd sensor_pinv_;
  std::vector<int> friction_dofs_;
};

// Free function form of the residual for a single evaluation.
Eigen::VectorXd epmc_residual(const StructuralModel& model, const Eigen::VectorXd& unknowns, double a,
                              const EpmcOptions& options = {});

// Continuation over increasing amplitudes with a secant predictor in log(a)
// and step halving. A stall returns the partial trace with a diagnostic.
EpmcTrace trace_epmc_backbone(const StructuralModel& model, const std::vector<double>& amplitudes,
                              const EpmcOptions& options = {});

// Log-spaced amplitude list.
std::vector<double> log_amplitudes(double a_min, double a_max, int n);

// Relative mismatch between the power injected by -xi M xdot and the power
// dissipated by viscous damping and friction over one cycle.
double energy_balance_error(const StructuralModel& model, const EpmcSolution& s, int n_time = 1024);

// Backbone view of a trace in the identification conventions (source "epmc").
Backbone epmc_backbone(const StructuralModel& model, const EpmcTrace& trace);

}  // namespace nmtlab
