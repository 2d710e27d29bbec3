#include "nmtlab/predict.hpp"

#include "nmtlab/errors.hpp"

#include <cmath>
// Boost 1.74's pchip calls isnan unqualified.
using std::isnan;
#include <boost/math/interpolators/pchip.hpp>

#include <algorithm>
#include <map>
#include <sstream>

namespace nmtlab {

class MonotoneCubic {
 public:
  MonotoneCubic(std::vector<double> x, std::vector<double> y) {
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); })) {
      constant_ = y.front();
      return;
    }
    impl_ = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(std::move(x), std::move(y));
  }
  double operator()(double x) const { return impl_ ? (*impl_)(x) : constant_; }

 private:
  double constant_ = 0.0;
  std::shared_ptr<boost::math::interpolators::pchip<std::vector<double>>> impl_;
};

ModalFunctions::ModalFunctions(std::vector<double> a, std::vector<double> omega, std::vector<double> zeta,
                               const Eigen::MatrixXcd& phi1, int drive_sensor)
    : a_(std::move(a)), drive_sensor_(drive_sensor), n_sensors_(phi1.rows()) {
  const std::size_t n = a_.size();
  if (n < 4) throw ConfigError("modal functions need at least 4 backbone points");
  if (omega.size() != n || zeta.size() != n || static_cast<std::size_t>(phi1.cols()) != n)
    throw ConfigError("modal function knot arrays differ in length");
  if (drive_sensor < 0 || drive_sensor >= phi1.rows()) throw ConfigError("drive sensor index out of range");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(a_[i]) || !std::isfinite(omega[i]) || !std::isfinite(zeta[i]) || !phi1.col(i).allFinite())
      throw ConfigError("non-finite backbone value");
    if (i > 0 && !(a_[i] > a_[i - 1])) throw ConfigError("knot amplitudes must be strictly increasing");
  }
  omega_ = std::make_shared<MonotoneCubic>(a_, std::move(omega));
  zeta_ = std::make_shared<MonotoneCubic>(a_, std::move(zeta));
  for (Eigen::Index s = 0; s < phi1.rows(); ++s) {
    std::vector<double> re(n), im(n);
    for (std::size_t i = 0; i < n; ++i) {
      re[i] = phi1(s, static_cast<Eigen::Index>(i)).real();
      im[i] = phi1(s, static_cast<Eigen::Index>(i)).imag();
    }
    phi_re_.push_back(std::make_shared<MonotoneCubic>(a_, std::move(re)));
    phi_im_.push_back(std::make_shared<MonotoneCubic>(a_, std::move(im)));
  }
}

void ModalFunctions::check(double a) const {
  if (!(a >= a_.front() && a <= a_.back())) {
    std::ostringstream os;
    os << "amplitude " << a << " outside the backbone range [" << a_.front() << ", " << a_.back() << "]";
    throw ConfigError(os.str());
  }
}

double ModalFunctions::omega(double a) const {
  check(a);
  return (*omega_)(a);
}

double ModalFunctions::zeta(double a) const {
  check(a);
  return (*zeta_)(a);
}

Eigen::VectorXcd ModalFunctions::phi1(double a) const {
  check(a);
  Eigen::VectorXcd p(n_sensors_);
  for (Eigen::Index s = 0; s < n_sensors_; ++s)
    p(s) = Complex((*phi_re_[static_cast<std::size_t>(s)])(a), (*phi_im_[static_cast<std::size_t>(s)])(a));
  return p;
}

ModalFunctions fit_backbone_functions(const Backbone& backbone) {
  if (backbone.drive_sensor < 0) throw ConfigError("backbone has no drive sensor index");
  // Group by amplitude so exact duplicates are averaged.
  struct Acc {
    double omega = 0.0, zeta = 0.0;
    Eigen::VectorXcd phi;
    int n = 0;
  };
  std::map<double, Acc> groups;
  Eigen::Index ns = -1;
  for (const auto& p : backbone.points) {
    if (!p.valid) continue;
    if (ns < 0) ns = p.phi1.size();
    if (p.phi1.size() != ns) throw ConfigError("backbone points differ in sensor count");
    const Complex d = p.phi1(backbone.drive_sensor);
    if (std::abs(d) == 0.0) throw ConfigError("mode shape vanishes at the drive sensor");
    const Eigen::VectorXcd rotated = p.phi1 * (std::conj(d) / std::abs(d));
    Acc& g = groups[p.a];
    if (g.n == 0) g.phi = Eigen::VectorXcd::Zero(ns);
    g.omega += p.omega;
    g.zeta += p.zeta;
    g.phi += rotated;
    ++g.n;
  }
  if (groups.size() < 4) throw ConfigError("modal functions need at least 4 valid backbone points");
  std::vector<double> a, w, z;
  Eigen::MatrixXcd phi(ns, static_cast<Eigen::Index>(groups.size()));
  for (const auto& [amp, g] : groups) {
    phi.col(static_cast<Eigen::Index>(a.size())) = g.phi / g.n;
    a.push_back(amp);
    w.push_back(g.omega / g.n);
    z.push_back(g.zeta / g.n);
  }
  return ModalFunctions(std::move(a), std::move(w), std::move(z), phi, backbone.drive_sensor);
}

const FrfPoint& FrfCurve::peak(int sensor) const {
  if (points.empty()) throw ConfigError("empty frequency response");
  return *std::max_element(points.begin(), points.end(),
                           [&](const FrfPoint& x, const FrfPoint& y) { return x.amplitude(sensor) < y.amplitude(sensor); });
}

namespace {

struct Balance {
  double w2 = 0.0, zeta = 0.0, omega = 0.0, r = 0.0;
  double disc = 0.0;  // of the quadratic in u = Omega^2
};

Balance balance_at(const ModalFunctions& mf, Complex projected, double a) {
  Balance b;
  b.omega = mf.omega(a);
  b.zeta = mf.zeta(a);
  const Eigen::VectorXcd phi = mf.phi1(a);
  b.r = std::abs(std::conj(phi(mf.drive_sensor())) * projected) / a;
  b.w2 = b.omega * b.omega;
  const double c = 1.0 - 2.0 * b.zeta * b.zeta;
  b.disc = b.w2 * b.w2 * c * c - b.w2 * b.w2 + b.r * b.r;
  return b;
}

FrfPoint make_point(const ModalFunctions& mf, double a, double u, const Balance& b, FrfBranch branch) {
  FrfPoint p;
  p.a = a;
  p.omega = std::sqrt(u);
  p.theta_m = std::atan2(2.0 * p.omega * b.omega * b.zeta, b.w2 - u);
  p.amplitude = a * mf.phi1(a).cwiseAbs();
  p.branch = branch;
  return p;
}

}  // namespace

FrfCurve synthesize_frf(const ModalFunctions& mf, const Eigen::VectorXcd& f1_exc, int grid_factor) {
  if (f1_exc.size() != mf.n_sensors()) throw ConfigError("force vector must have one entry per sensor");
  for (Eigen::Index s = 0; s < f1_exc.size(); ++s)
    if (s != mf.drive_sensor() && f1_exc(s) != Complex(0.0, 0.0))
      throw ConfigError("force may only act at the drive sensor");
  const Complex fd = f1_exc(mf.drive_sensor());
  if (std::abs(fd) == 0.0) throw ConfigError("force is zero");
  if (grid_factor < 1) throw ConfigError("grid factor must be positive");

  const int n = grid_factor * static_cast<int>(mf.knots().size());
  std::vector<double> grid(static_cast<std::size_t>(n));
  const double la = std::log(mf.a_min()), lb = std::log(mf.a_max());
  for (int k = 0; k < n; ++k) grid[static_cast<std::size_t>(k)] = std::exp(la + (lb - la) * k / (n - 1));
  grid.front() = mf.a_min();
  grid.back() = mf.a_max();

  // Insert fold amplitudes where the discriminant changes sign.
  std::vector<double> amps;
  for (int k = 0; k < n; ++k) {
    const double ak = grid[static_cast<std::size_t>(k)];
    if (k > 0) {
      double lo = grid[static_cast<std::size_t>(k) - 1], hi = ak;
      const bool s_lo = balance_at(mf, fd, lo).disc >= 0.0;
      const bool s_hi = balance_at(mf, fd, hi).disc >= 0.0;
      if (s_lo != s_hi) {
        for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
          const double mid = 0.5 * (lo + hi);
          ((balance_at(mf, fd, mid).disc >= 0.0) == s_lo ? lo : hi) = mid;
        }
        amps.push_back(s_lo ? lo : hi);
      }
    }
    amps.push_back(ak);
  }

  FrfCurve curve;
  curve.force = f1_exc;
  std::vector<FrfPoint> low, high;
  for (double a : amps) {
    const Balance b = balance_at(mf, fd, a);
    if (b.disc < 0.0) continue;
    const double centre = b.w2 * (1.0 - 2.0 * b.zeta * b.zeta);
    const double root = std::sqrt(b.disc);
    const double u_lo = centre - root, u_hi = centre + root;
    if (u_lo > 0.0) low.push_back(make_point(mf, a, u_lo, b, FrfBranch::low));
    // At a fold both roots coincide and the point is kept once.
    if (u_hi > 0.0 && root > 0.0) high.push_back(make_point(mf, a, u_hi, b, FrfBranch::high));
  }
  // Low branch rising in amplitude, then the high branch falling back.
  curve.points = std::move(low);
  std::reverse(high.begin(), high.end());
  curve.points.insert(curve.points.end(), high.begin(), high.end());
  if (curve.points.empty()) throw ConfigError("force level reaches no amplitude in the backbone range");
  return curve;
}

FrfCurve synthesize_frf(const ModalFunctions& mf, double force_amplitude, int grid_factor) {
  Eigen::VectorXcd f = Eigen::VectorXcd::Zero(mf.n_sensors());
  f(mf.drive_sensor()) = force_amplitude;
  return synthesize_frf(mf, f, grid_factor);
}

}  // namespace nmtlab
