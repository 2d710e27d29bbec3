#pragma once

#include "nmtlab/identify.hpp"
#include "nmtlab/pll.hpp"

#include <Eigen/Dense>

#include <memory>
#include <vector>

namespace nmtlab {

class MonotoneCubic;

// Amplitude-dependent modal properties of one nonlinear mode, interpolated
// with monotone piecewise cubic Hermite polynomials over the measured knots.
class ModalFunctions {
 public:
  ModalFunctions(std::vector<double> a, std::vector<double> omega, std::vector<double> zeta,
                 const Eigen::MatrixXcd& phi1, int drive_sensor);

  const std::vector<double>& knots() const { return a_; }
  double a_min() const { return a_.front(); }
  double a_max() const { return a_.back(); }
  int drive_sensor() const { return drive_sensor_; }
  Eigen::Index n_sensors() const { return n_sensors_; }

  // All evaluations throw ConfigError outside [a_min, a_max].
  double omega(double a) const;
  double zeta(double a) const;
  Eigen::VectorXcd phi1(double a) const;

 private:
  void check(double a) const;

  std::vector<double> a_;
  int drive_sensor_ = 0;
  Eigen::Index n_sensors_ = 0;
  std::shared_ptr<const MonotoneCubic> omega_, zeta_;
  std::vector<std::shared_ptr<const MonotoneCubic>> phi_re_, phi_im_;
};

// Valid points only, sorted by amplitude, duplicates averaged. Mode shapes are
// rotated so the drive-sensor component is real and positive.
ModalFunctions fit_backbone_functions(const Backbone& backbone);

enum class FrfBranch { low, high };

struct FrfPoint {
  double omega = 0.0;    // excitation frequency Omega, rad/s
  double a = 0.0;
  double theta_m = 0.0;  // lag of the modal response behind the projected force, rad
  Eigen::VectorXd amplitude;  // |x_1| per sensor
  FrfBranch branch = FrfBranch::low;
};

struct FrfCurve {
  Eigen::VectorXcd force;  // fundamental force per sensor location
  std::vector<FrfPoint> points;

  // Point with the largest response at `sensor`.
  const FrfPoint& peak(int sensor) const;
};

// Single nonlinear-modal oscillator response to `f1_exc`, which may be
// nonzero only at the drive sensor. Amplitudes are sampled on a log grid with
// `grid_factor` points per knot, plus refined fold points.
FrfCurve synthesize_frf(const ModalFunctions& mf, const Eigen::VectorXcd& f1_exc, int grid_factor = 10);

// Convenience: real force amplitude at the drive sensor.
FrfCurve synthesize_frf(const ModalFunctions& mf, double force_amplitude, int grid_factor = 10);

}  // namespace nmtlab
