#include "nmtlab/identify.hpp"

#include "nmtlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace nmtlab {

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<Complex> project(const std::vector<double>& x, double omega, double dt, int H) {
  const std::size_t n = x.size();
  std::vector<Complex> base(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ph = omega * dt * static_cast<double>(k);
    base[k] = Complex(std::cos(ph), -std::sin(ph));
  }
  std::vector<Complex> c(static_cast<std::size_t>(H) + 1, Complex(0.0, 0.0));
  std::vector<Complex> rot(n, Complex(1.0, 0.0));
  for (int h = 0; h <= H; ++h) {
    Complex sum(0.0, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      sum += x[k] * rot[k];
      rot[k] *= base[k];
    }
    c[static_cast<std::size_t>(h)] = (h == 0 ? 1.0 : 2.0) * sum / static_cast<double>(n);
  }
  c[0] = Complex(c[0].real(), 0.0);
  return c;
}

int check_window(std::size_t n_samples, double dt, double omega, int H) {
  if (n_samples == 0) throw IdentificationError("empty record");
  if (!(omega > 0.0)) throw IdentificationError("fundamental frequency must be positive");
  if (H < 0) throw IdentificationError("harmonic count must be non-negative");
  const double period = 2.0 * kPi / omega;
  const double span = static_cast<double>(n_samples) * dt;
  const double m = span / period;
  const double mr = std::round(m);
  if (mr < 1.0 || std::abs(span - mr * period) > dt * (1.0 + 1e-9)) {
    std::ostringstream os;
    os << "record spans " << m << " periods; an integer number of periods is required";
    throw IdentificationError(os.str());
  }
  if (H * omega * dt >= kPi) throw IdentificationError("highest harmonic above Nyquist");
  return static_cast<int>(mr);
}

double mean(const std::vector<double>& x) {
  return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

std::vector<double> zero_mean_cumtrapz(const std::vector<double>& y, double dt) {
  std::vector<double> out(y.size(), 0.0);
  for (std::size_t k = 1; k < y.size(); ++k) out[k] = out[k - 1] + 0.5 * dt * (y[k - 1] + y[k]);
  const double m = mean(out);
  for (double& v : out) v -= m;
  return out;
}

std::vector<double> remove_mean(std::vector<double> y) {
  const double m = mean(y);
  for (double& v : y) v -= m;
  return y;
}

}  // namespace

const std::vector<Complex>& HarmonicSet::channel(const std::string& name) const {
  auto it = std::find(channels.begin(), channels.end(), name);
  if (it == channels.end()) throw IdentificationError("harmonic set has no channel '" + name + "'");
  return coeffs[static_cast<std::size_t>(it - channels.begin())];
}

HarmonicSet fourier_coefficients(const TimeSeriesRecord& record, double omega, int H,
                                 const std::vector<std::string>& channels) {
  record.validate();
  HarmonicSet hs;
  hs.omega = omega;
  hs.n_periods_used = check_window(record.size(), record.dt, omega, H);
  hs.channels = channels.empty() ? record.names : channels;
  for (const auto& name : hs.channels) hs.coeffs.push_back(project(record.channel(name), omega, record.dt, H));
  return hs;
}

double active_power(Complex force1, Complex velocity1) {
  return 0.5 * (force1 * std::conj(velocity1)).real();
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& phi, double rel_cutoff) {
  if (phi.rows() < phi.cols())
    throw IdentificationError("fewer sensors than modes; mode matrix is rank deficient");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(phi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || !(s(0) > 0.0)) throw IdentificationError("mode matrix is zero");
  Eigen::VectorXd inv(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) <= rel_cutoff * s(0)) throw IdentificationError("mode matrix is rank deficient");
    inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

double modal_amplitude(const Eigen::VectorXcd& x1, const Eigen::MatrixXd& phi) {
  if (x1.size() != phi.rows()) throw IdentificationError("sensor count mismatch");
  const Eigen::VectorXcd q = pseudo_inverse(phi).cast<Complex>() * x1;
  return std::sqrt(std::max(0.0, q.squaredNorm()));
}

double modal_damping(double p1, double omega, double a) {
  if (!(a > 0.0)) throw IdentificationError("modal damping undefined for zero modal amplitude");
  if (!(omega > 0.0)) throw IdentificationError("modal damping needs omega > 0");
  return p1 / (omega * omega * omega * a * a);
}

ModeProjection mode_projection(const Eigen::VectorXcd& phi1, const Eigen::MatrixXd& phi) {
  if (phi1.size() != phi.rows()) throw IdentificationError("sensor count mismatch");
  ModeProjection p;
  p.gamma = pseudo_inverse(phi).cast<Complex>() * phi1;
  p.normalized = p.gamma.cwiseAbs();
  const double sum = p.normalized.sum();
  if (sum > 0.0) p.normalized /= sum;
  return p;
}

double thd(const std::vector<Complex>& c) {
  if (c.size() < 3) throw IdentificationError("THD needs at least two harmonics");
  double hi = 0.0, all = 0.0;
  for (std::size_t n = 1; n < c.size(); ++n) {
    all += std::norm(c[n]);
    if (n >= 2) hi += std::norm(c[n]);
  }
  if (all == 0.0) throw IdentificationError("THD undefined for a signal without harmonics");
  return std::sqrt(hi / all);
}

double thd(const HarmonicSet& h, const std::string& channel) { return thd(h.channel(channel)); }

std::vector<double> integrate_acceleration(const std::vector<double>& acc, double dt) {
  return zero_mean_cumtrapz(zero_mean_cumtrapz(remove_mean(acc), dt), dt);
}

BackbonePoint extract_backbone_point(const TimeSeriesRecord& record, const LinearModeSet& stuck,
                                     const LinearModeSet& free, const ExtractOptions& options) {
  record.validate();
  const int H = options.harmonics;
  const double omega = mean(record.channel("omega"));
  const auto ns = static_cast<Eigen::Index>(stuck.shapes.rows());
  if (free.shapes.rows() != ns) throw IdentificationError("stuck and free mode sets differ in sensors");
  check_window(record.size(), record.dt, omega, H);

  BackbonePoint pt;
  pt.omega = omega;
  pt.harmonics.resize(ns, H + 1);
  for (Eigen::Index s = 0; s < ns; ++s) {
    const std::string idx = std::to_string(s + 1);
    const std::vector<double> disp =
        options.measurement_emulation ? integrate_acceleration(record.channel("acc_s" + idx), record.dt)
                                      : record.channel("disp_s" + idx);
    const auto c = project(disp, omega, record.dt, H);
    for (int n = 0; n <= H; ++n) pt.harmonics(s, n) = c[static_cast<std::size_t>(n)];
  }
  const Eigen::VectorXcd x1 = pt.harmonics.col(1);
  pt.a = modal_amplitude(x1, stuck.shapes);
  if (!(pt.a > 0.0)) throw IdentificationError("zero response; modal amplitude is zero");
  pt.phi1 = x1 / pt.a;

  const Complex f1 = project(record.channel("force"), omega, record.dt, 1)[1];
  const std::vector<double> vel = options.measurement_emulation
                                      ? zero_mean_cumtrapz(remove_mean(record.channel("drive_acc")), record.dt)
                                      : record.channel("drive_vel");
  const Complex v1 = project(vel, omega, record.dt, 1)[1];
  pt.f1 = std::abs(f1);
  pt.p1 = active_power(f1, v1);
  pt.zeta = modal_damping(pt.p1, omega, pt.a);
  if (pt.zeta < 0.0) pt.note = "negative damping: power flows out at the drive point";
  pt.gamma_stuck = mode_projection(pt.phi1, stuck.shapes).normalized;
  pt.gamma_free = mode_projection(pt.phi1, free.shapes).normalized;
  pt.thd_response = thd(project(record.channel(options.thd_channel), omega, record.dt, std::max(H, 2)));
  return pt;
}

void inject_measurement_noise(TimeSeriesRecord& record, double rms_fraction, std::uint64_t seed) {
  if (!(rms_fraction >= 0.0)) throw ConfigError("noise level must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < record.names.size(); ++c) {
    const auto& name = record.names[c];
    const bool measured = name == "force" || name.rfind("drive_", 0) == 0 || name.rfind("disp_s", 0) == 0 ||
                          name.rfind("acc_s", 0) == 0;
    if (!measured) continue;
    auto& x = record.data[c];
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double sigma = rms_fraction * std::sqrt(ss / std::max<std::size_t>(1, x.size()));
    for (double& v : x) v += sigma * normal(rng);
  }
}

}  // namespace nmtlab
