#pragma once

#include "nmtlab/structure.hpp"
#include "nmtlab/timesim.hpp"

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace nmtlab {

using Complex = std::complex<double>;

// Peak complex Fourier coefficients, x(t) = Re sum_n c_n exp(i n omega t),
// n = 0..H, per channel. c_0 is the (real) mean.
struct HarmonicSet {
  double omega = 0.0;
  int n_periods_used = 0;
  std::vector<std::string> channels;
  std::vector<std::vector<Complex>> coeffs;

  int harmonics() const { return coeffs.empty() ? 0 : static_cast<int>(coeffs.front().size()) - 1; }
  const std::vector<Complex>& channel(const std::string& name) const;
};

// Projects the listed channels (all when empty) onto exp(-i n omega t) over the
// record window, which must span an integer number of periods.
HarmonicSet fourier_coefficients(const TimeSeriesRecord& record, double omega, int H,
                                 const std::vector<std::string>& channels = {});

// Cycle-averaged power of two peak-amplitude phasors.
double active_power(Complex force1, Complex velocity1);

// Moore-Penrose pseudoinverse with a relative singular-value cutoff. Throws
// IdentificationError if `phi` has fewer independent rows than columns.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& phi, double rel_cutoff = 1e-10);

// a^2 = x1^H (Phi^T)^+ Phi^+ x1.
double modal_amplitude(const Eigen::VectorXcd& x1, const Eigen::MatrixXd& phi);

double modal_damping(double p1, double omega, double a);

struct ModeProjection {
  Eigen::VectorXcd gamma;
  Eigen::VectorXd normalized;  // |gamma_k| / sum |gamma|
};

ModeProjection mode_projection(const Eigen::VectorXcd& phi1, const Eigen::MatrixXd& phi);

double thd(const HarmonicSet& h, const std::string& channel);
double thd(const std::vector<Complex>& coeffs);

// Zero-mean trapezoid double integration of an acceleration record spanning
// whole periods.
std::vector<double> integrate_acceleration(const std::vector<double>& acc, double dt);

struct BackbonePoint {
  int level_index = 0;
  double omega = 0.0;
  double zeta = 0.0;
  double a = 0.0;
  Eigen::VectorXcd phi1;
  // Sensor harmonics x_n, rows = sensors, cols = n = 0..H.
  Eigen::MatrixXcd harmonics;
  double f1 = 0.0;   // |F_1|, N
  double p1 = 0.0;   // W
  double thd_response = 0.0;
  Eigen::VectorXd gamma_stuck;  // normalized |Gamma|
  Eigen::VectorXd gamma_free;
  bool valid = true;
  std::string note;
};

struct ExtractOptions {
  int harmonics = 7;
  // Use acceleration channels and double integration instead of the
  // simulated displacements.
  bool measurement_emulation = false;
  std::string thd_channel = "drive_acc";
};

BackbonePoint extract_backbone_point(const TimeSeriesRecord& record, const LinearModeSet& stuck,
                                     const LinearModeSet& free, const ExtractOptions& options = {});

// Adds zero-mean Gaussian noise to measured channels, with standard deviation
// equal to `rms_fraction` times each channel's RMS. Integrator-internal
// channels (omega, alpha_r, theta_hat) are left untouched.
void inject_measurement_noise(TimeSeriesRecord& record, double rms_fraction, std::uint64_t seed);

}  // namespace nmtlab
