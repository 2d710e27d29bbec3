#include "nmtlab/pll.hpp"

#include "nmtlab/errors.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <cmath>
#include <numbers>
#include <sstream>

namespace nmtlab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kReferenceHz = 111.3;

double response_of(const SimState& s, int dof, ResponseSignal sig) {
  switch (sig) {
    case ResponseSignal::displacement: return s.x(dof);
    case ResponseSignal::velocity: return s.v(dof);
    case ResponseSignal::acceleration: break;
  }
  return s.a(dof);
}

// Setpoints are given for acceleration; each integration lags by pi/2.
double internal_setpoint(const PllConfig& c) {
  switch (c.signal) {
    case ResponseSignal::displacement: return wrap_phase(c.theta_setpoint - kPi);
    case ResponseSignal::velocity: return wrap_phase(c.theta_setpoint - 0.5 * kPi);
    case ResponseSignal::acceleration: break;
  }
  return wrap_phase(c.theta_setpoint);
}

}  // namespace

double wrap_phase(double angle) {
  double w = std::remainder(angle, kTwoPi);  // [-pi, pi]
  if (w <= -kPi) w += kTwoPi;
  return w;
}

PllConfig default_pll_config(const LinearModeSet& stuck) {
  if (stuck.frequencies.size() < 1) throw ConfigError("need at least one stuck mode");
  const double r = stuck.frequencies(0) / (kTwoPi * kReferenceHz);
  PllConfig c;
  c.omega_m = 230.0 * kPi * r;
  c.kp = 15.0 * r;
  c.ki = 3.0 * kPi * r * r;
  c.lp_time_constant = (2.0 / kPi) / r;
  return c;
}

SynchronousDetector::SynchronousDetector(double time_constant, double noise_floor)
    : tau_(time_constant), floor_(noise_floor) {
  if (!(time_constant > 0.0)) throw ConfigError("low-pass time constant must be positive");
}

void SynchronousDetector::set_state(std::complex<double> f, std::complex<double> r, double theta, bool defined) {
  force_iq_ = f;
  response_iq_ = r;
  theta_hat_ = theta;
  defined_ = defined;
}

double SynchronousDetector::step(double force, double response, double alpha_r, double dt) {
  if (!(dt > 0.0)) throw ConfigError("detector step must be positive");
  if (dt != cached_dt_) {
    cached_dt_ = dt;
    gain_ = -std::expm1(-dt / tau_);
  }
  // Demodulation by exp(-i alpha): the low-passed product is half the
  // fundamental phasor relative to the reference.
  const std::complex<double> ref(std::cos(alpha_r), -std::sin(alpha_r));
  force_iq_ += gain_ * (force * ref - force_iq_);
  response_iq_ += gain_ * (response * ref - response_iq_);
  if (std::abs(force_iq_) < floor_ || std::abs(response_iq_) < floor_) {
    defined_ = false;
    return theta_hat_;
  }
  defined_ = true;
  theta_hat_ = wrap_phase(std::arg(response_iq_) - std::arg(force_iq_));
  return theta_hat_;
}

double PiController::step(double error, double dt) {
  const double trial = integrator + ki * error * dt;
  const double y = kp * error + trial;
  if (limit > 0.0 && std::abs(y) > limit) {
    const double clamped = std::copysign(limit, y);
    // Integrate only when the error drives the output back from the limit.
    if (error * y < 0.0) integrator = trial;
    return clamped;
  }
  integrator = trial;
  return y;
}

namespace {

struct PeriodStats {
  std::vector<double> omega;
  std::vector<double> error;
};

}  // namespace

LockResult lock_phase_point(const StructuralModel& model, const PllConfig& cfg, double force_amplitude,
                            const WarmStart* warm, const AmplitudeLoop* amp) {
  if (!(cfg.omega_m > 0.0) || cfg.kp < 0.0 || cfg.ki < 0.0 || !(cfg.lp_time_constant > 0.0))
    throw ConfigError("invalid PLL configuration");
  if (amp && !(amp->target > 0.0)) throw ConfigError("amplitude loop target must be positive");
  const LinearModeSet stuck = linear_modes(model, ContactCondition::stuck, 1);
  const double dt0 = cfg.dt > 0.0 ? cfg.dt : kTwoPi / stuck.frequencies(0) / 500.0;
  const double tau = cfg.lp_time_constant;
  const double min_lock = cfg.min_lock_time > 0.0 ? cfg.min_lock_time : 5.0 * tau;
  const double theta_set = internal_setpoint(cfg);
  const int drive = model.drive_dof;

  Simulator sim(model, dt0);
  SynchronousDetector det(tau, cfg.noise_floor);
  PiController pi{cfg.kp, cfg.ki, cfg.output_limit, 0.0};
  PiController amp_pi{amp ? amp->kp : 0.0, amp ? amp->ki : 0.0, 0.0, 0.0};

  double alpha = 0.0;
  double omega = cfg.omega_m;
  double f_cmd = amp ? amp->target : force_amplitude;
  if (warm) {
    sim.set_state(warm->sim);
    sim.set_last_force(warm->last_force);
    alpha = std::fmod(warm->pll.alpha_r, kTwoPi);
    if (alpha < 0.0) alpha += kTwoPi;
    omega = warm->pll.omega > 0.0 ? warm->pll.omega : cfg.omega_m;
    det.set_state(warm->pll.force_iq, warm->pll.response_iq, warm->pll.theta_hat, warm->pll.theta_defined);
    if (amp && warm->pll.force_command > 0.0) {
      f_cmd = warm->pll.force_command;
      amp_pi.integrator = f_cmd - amp->target;
    }
  } else {
    sim.set_state(rest_state(model));
  }
  // Bumpless start: the controller output reproduces the current Omega.
  const double e0 = det.defined() ? wrap_phase(det.theta_hat() - theta_set) : 0.0;
  pi.integrator = (omega - cfg.omega_m) - cfg.kp * e0;

  auto applied_force = [&](double commanded_phase) {
    return f_cmd * std::cos(commanded_phase) - cfg.armature_mass * sim.state().a(drive);
  };

  const double t_begin = sim.state().t;
  double t_attempt = t_begin;
  double undefined_time = 0.0;
  bool saturated = false;
  PeriodStats stats;
  double sum_e = 0.0, sum_w = 0.0;
  long n_in_period = 0;

  for (int attempt = 0; attempt <= cfg.max_relocks; ++attempt) {
    sim.set_dt(dt0);
    const double dt = dt0;
    bool locked = false;
    while (!locked) {
      if (sim.state().t - t_begin > cfg.max_lock_time) {
        std::ostringstream os;
        os << "phase lock not achieved within " << cfg.max_lock_time << " s (setpoint "
           << cfg.theta_setpoint << " rad, force " << f_cmd << " N)";
        throw LockError(os.str(), stats.omega, stats.error);
      }
      alpha += omega * dt;
      const double f = applied_force(alpha);
      sim.advance(f);
      det.step(f, response_of(sim.state(), drive, cfg.signal), alpha, dt);
      double e = 0.0;
      if (det.defined()) {
        undefined_time = 0.0;
        e = wrap_phase(det.theta_hat() - theta_set);
        omega = cfg.omega_m + pi.step(e, dt);
      } else {
        undefined_time += dt;
        if (undefined_time > 5.0 * tau)
          throw LockError("phase undefined: force or response fundamental below noise floor", stats.omega,
                          stats.error);
      }
      omega = std::max(omega, 0.05 * cfg.omega_m);
      if (amp) {
        f_cmd = amp->target + amp_pi.step(amp->target - det.force_amplitude(), dt);
        saturated = false;
        if (amp->max_force > 0.0 && f_cmd > amp->max_force) {
          f_cmd = amp->max_force;
          saturated = true;
        }
        f_cmd = std::max(f_cmd, 0.0);
      }
      sum_e += e;
      sum_w += omega;
      ++n_in_period;
      if (alpha >= kTwoPi) {
        alpha -= kTwoPi;
        stats.error.push_back(sum_e / n_in_period);
        stats.omega.push_back(sum_w / n_in_period);
        sum_e = sum_w = 0.0;
        n_in_period = 0;
        const int np = static_cast<int>(stats.omega.size());
        if (sim.state().t - t_attempt >= min_lock && np >= cfg.lock_periods) {
          double emax = 0.0, wmin = stats.omega.back(), wmax = wmin;
          for (int k = np - cfg.lock_periods; k < np; ++k) {
            emax = std::max(emax, std::abs(stats.error[k]));
            wmin = std::min(wmin, stats.omega[k]);
            wmax = std::max(wmax, stats.omega[k]);
          }
          bool ok = emax < 0.5 * cfg.lock_tolerance && (wmax - wmin) < cfg.freq_settle_tol * wmax;
          if (amp) ok = ok && std::abs(det.force_amplitude() - amp->target) < amp->tolerance * amp->target;
          locked = ok;
        }
      }
    }

    // Hold the frequency, align the reference phase to a period boundary and
    // let the structure settle under strictly periodic forcing.
    const double omega_hold = stats.omega.back();
    const int spp = samples_per_period(dt0, omega_hold);
    const double dt_snap = kTwoPi / (omega_hold * spp);
    const double remaining = kTwoPi - alpha;
    const int n_align = std::max(1, static_cast<int>(std::ceil(remaining / (omega_hold * dt_snap))));
    const double dt_align = remaining / (omega_hold * n_align);
    sim.set_dt(dt_align);
    for (int k = 0; k < n_align; ++k) {
      alpha = (k + 1 == n_align) ? kTwoPi : alpha + omega_hold * dt_align;
      const double f = applied_force(alpha);
      sim.advance(f);
      det.step(f, response_of(sim.state(), drive, cfg.signal), alpha, dt_align);
    }
    alpha = 0.0;
    sim.set_dt(dt_snap);
    const double t_align = sim.state().t;

    ChannelProbe probe;
    probe.names = {"theta_hat"};
    probe.sample = [&](const SimState& s, double force, double* out) {
      const double ph = omega_hold * (s.t - t_align);
      det.step(force, response_of(s, drive, cfg.signal), ph, dt_snap);
      out[0] = det.theta_hat();
    };
    auto forcing = [&](double t) { return applied_force(omega_hold * (t - t_align)); };
    TimeSeriesRecord rec = run_to_steady_state(sim, forcing, omega_hold, cfg.steady, &probe);
    alpha = std::fmod(omega_hold * (sim.state().t - t_align), kTwoPi);
    if (alpha > kTwoPi - 1e-6) alpha = 0.0;

    // Verify the lock over the recorded window.
    double emax = 0.0;
    for (double th : rec.channel("theta_hat")) emax = std::max(emax, std::abs(wrap_phase(th - theta_set)));
    bool ok = emax < cfg.lock_tolerance;
    if (amp) {
      const auto hs = fourier_coefficients(rec, omega_hold, 1, {"force"});
      ok = ok && std::abs(std::abs(hs.coeffs[0][1]) - amp->target) < amp->tolerance * amp->target;
    }
    if (ok) {
      LockResult res;
      res.lock_time = rec.t0 - t_begin;
      res.omega = omega_hold;
      res.force_command = f_cmd;
      res.saturated = saturated;
      res.record = std::move(rec);
      res.warm.sim = sim.state();
      res.warm.last_force = sim.last_force();
      res.warm.pll.alpha_r = alpha;
      res.warm.pll.omega = omega_hold;
      res.warm.pll.integrator = pi.integrator;
      res.warm.pll.force_iq = det.force_iq();
      res.warm.pll.response_iq = det.response_iq();
      res.warm.pll.theta_hat = det.theta_hat();
      res.warm.pll.theta_defined = det.defined();
      res.warm.pll.force_command = f_cmd;
      res.warm.pll.amp_integrator = amp_pi.integrator;
      return res;
    }
    // Resume closed-loop tracking from the held frequency.
    omega = omega_hold;
    const double e_now = det.defined() ? wrap_phase(det.theta_hat() - theta_set) : 0.0;
    pi.integrator = (omega_hold - cfg.omega_m) - cfg.kp * e_now;
    t_attempt = sim.state().t;
  }
  throw LockError("lock lost during recording after repeated relocks", stats.omega, stats.error);
}

std::size_t Backbone::valid_count() const {
  return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [](const auto& p) { return p.valid; }));
}

namespace {

BackbonePoint identify_level(const TimeSeriesRecord& raw, const LinearModeSet& stuck, const LinearModeSet& free,
                             const TrackOptions& options, int level) {
  if (options.noise_rms > 0.0) {
    TimeSeriesRecord noisy = raw;
    inject_measurement_noise(noisy, options.noise_rms, options.noise_seed * 1000003ULL + static_cast<std::uint64_t>(level));
    return extract_backbone_point(noisy, stuck, free, options.extract);
  }
  return extract_backbone_point(raw, stuck, free, options.extract);
}

void check_monotone(Backbone& bb) {
  double last = bb.direction == ScheduleDirection::increasing ? -1.0 : std::numeric_limits<double>::infinity();
  for (auto& p : bb.points) {
    if (!p.valid) continue;
    const bool ok = bb.direction == ScheduleDirection::increasing ? p.a > last : p.a < last;
    if (!ok) {
      p.valid = false;
      p.note = "modal amplitude not monotone along the schedule";
      continue;
    }
    last = p.a;
  }
}

ScheduleDirection schedule_direction(const std::vector<double>& schedule) {
  if (schedule.empty()) throw ConfigError("amplitude schedule is empty");
  for (double f : schedule)
    if (!(f > 0.0)) throw ConfigError("schedule levels must be positive");
  bool inc = true, dec = true;
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    inc = inc && schedule[i] > schedule[i - 1];
    dec = dec && schedule[i] < schedule[i - 1];
  }
  if (!inc && !dec) throw ConfigError("schedule must be strictly monotone");
  return dec && schedule.size() > 1 ? ScheduleDirection::decreasing : ScheduleDirection::increasing;
}

}  // namespace

Backbone track_backbone(const StructuralModel& model, const PllConfig& config, const std::vector<double>& schedule,
                        const TrackOptions& options) {
  Backbone bb;
  bb.direction = schedule_direction(schedule);
  bb.force_levels = schedule;
  bb.drive_sensor = model.drive_sensor();
  const LinearModeSet stuck = linear_modes(model, ContactCondition::stuck, std::min(3, model.n_dof));
  const LinearModeSet free = linear_modes(model, ContactCondition::free, std::min(3, model.n_dof));

  std::optional<WarmStart> warm;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    BackbonePoint pt;
    TimeSeriesRecord rec;
    try {
      LockResult lr = lock_phase_point(model, config, schedule[i], warm ? &*warm : nullptr);
      warm = lr.warm;
      rec = std::move(lr.record);
      pt = identify_level(rec, stuck, free, options, static_cast<int>(i));
    } catch (const ConvergenceError& e) {
      pt.valid = false;
      pt.note = e.what();
    } catch (const IdentificationError& e) {
      pt.valid = false;
      pt.note = e.what();
    }
    pt.level_index = static_cast<int>(i);
    bb.points.push_back(std::move(pt));
    bb.records.push_back(options.keep_records ? std::move(rec) : TimeSeriesRecord{});
  }
  check_monotone(bb);
  if (2 * bb.valid_count() <= bb.points.size() && bb.points.size() > 1) {
    std::ostringstream os;
    os << "backbone tracking failed: only " << bb.valid_count() << " of " << bb.points.size() << " levels valid";
    throw ConvergenceError(os.str());
  }
  if (bb.valid_count() == 0) throw ConvergenceError("backbone tracking failed: no valid level");
  return bb;
}

Backbone reidentify(const Backbone& raw, const LinearModeSet& stuck, const LinearModeSet& free,
                    const TrackOptions& options) {
  Backbone bb;
  bb.direction = raw.direction;
  bb.force_levels = raw.force_levels;
  bb.source = raw.source;
  bb.drive_sensor = raw.drive_sensor;
  for (std::size_t i = 0; i < raw.points.size(); ++i) {
    BackbonePoint pt;
    if (!raw.points[i].valid || raw.records.at(i).size() == 0) {
      pt = raw.points[i];
    } else {
      try {
        pt = identify_level(raw.records[i], stuck, free, options, static_cast<int>(i));
      } catch (const IdentificationError& e) {
        pt.valid = false;
        pt.note = e.what();
      }
    }
    pt.level_index = static_cast<int>(i);
    bb.points.push_back(std::move(pt));
  }
  check_monotone(bb);
  return bb;
}

std::vector<double> default_force_schedule() {
  return {0.01, 0.02, 0.05, 0.12, 0.3, 0.7, 1.5, 3.0, 6.0, 11.0, 18.0, 25.0, 30.0, 35.0, 40.0};
}

std::vector<double> default_phase_setpoints() {
  const double deg[] = {20, 35, 50, 62, 72, 80, 86, 90, 94, 100, 108, 118, 130, 145};
  std::vector<double> out;
  for (double d : deg) out.push_back(d * kPi / 180.0);
  return out;
}

SteppedSineCurve run_stepped_sine_frf(const StructuralModel& model, const PllConfig& config, double force_target,
                                      const std::vector<double>& phase_setpoints, const AmplitudeLoop& loop) {
  if (!(force_target > 0.0)) throw ConfigError("force target must be positive");
  if (phase_setpoints.empty()) throw ConfigError("no phase setpoints");
  for (double sp : phase_setpoints)
    if (!(sp > 0.0 && sp < kPi)) throw ConfigError("phase setpoints must lie in (0, pi)");
  AmplitudeLoop amp = loop;
  amp.target = force_target;

  SteppedSineCurve curve;
  curve.force_target = force_target;
  std::optional<WarmStart> warm;
  const auto ns = static_cast<Eigen::Index>(model.sensor_dofs.size());
  for (double sp : phase_setpoints) {
    PllConfig cfg = config;
    cfg.theta_setpoint = sp;
    SteppedSinePoint pt;
    pt.theta_setpoint = sp;
    try {
      LockResult lr = lock_phase_point(model, cfg, force_target, warm ? &*warm : nullptr, &amp);
      warm = lr.warm;
      pt.omega = lr.omega;
      std::vector<std::string> ch = {"force"};
      for (Eigen::Index s = 0; s < ns; ++s) ch.push_back("disp_s" + std::to_string(s + 1));
      const HarmonicSet hs = fourier_coefficients(lr.record, lr.omega, 1, ch);
      const Complex f1 = hs.coeffs[0][1];
      pt.f1 = std::abs(f1);
      pt.amplitude.resize(ns);
      pt.phase.resize(ns);
      for (Eigen::Index s = 0; s < ns; ++s) {
        const Complex x1 = hs.coeffs[static_cast<std::size_t>(s) + 1][1];
        pt.amplitude(s) = std::abs(x1);
        pt.phase(s) = wrap_phase(std::arg(x1) - std::arg(f1));
      }
      double mean_theta = 0.0;
      const auto& th = lr.record.channel("theta_hat");
      for (double v : th) mean_theta += wrap_phase(v - sp);
      pt.theta_hat = sp + mean_theta / static_cast<double>(th.size());
      if (lr.saturated) {
        pt.valid = false;
        pt.note = "amplitude loop saturated";
      }
    } catch (const ConvergenceError& e) {
      pt.valid = false;
      pt.note = e.what();
    }
    curve.points.push_back(std::move(pt));
  }
  return curve;
}

}  // namespace nmtlab
