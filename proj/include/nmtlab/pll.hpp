#pragma once

#include "nmtlab/identify.hpp"
#include "nmtlab/structure.hpp"
#include "nmtlab/timesim.hpp"

#include <complex>
#include <optional>
#include <string>
#include <vector>

namespace nmtlab {

// Which measured drive-point signal is phase-compared against the force.
enum class ResponseSignal { displacement, velocity, acceleration };

struct PllConfig {
  double omega_m = 230.0 * 3.141592653589793;  // rad/s
  double kp = 15.0;                             // 1/s
  double ki = 3.0 * 3.141592653589793;          // 1/s^2
  double lp_time_constant = 2.0 / 3.141592653589793;  // s
  // Desired response-minus-force phase in the acceleration convention;
  // pi/2 is phase resonance.
  double theta_setpoint = 3.141592653589793 / 2.0;
  double lock_tolerance = 0.01;  // rad
  ResponseSignal signal = ResponseSignal::acceleration;
  double output_limit = 0.0;     // |y| clamp, rad/s; 0 disables
  double noise_floor = 1e-12;    // I/Q magnitude below which the phase is undefined

  // Lock detection.
  int lock_periods = 20;
  double freq_settle_tol = 1e-5;  // relative spread of period-mean Omega
  double min_lock_time = 0.0;     // s; 0 means 5 low-pass time constants
  double max_lock_time = 200.0;   // simulated s per point
  int max_relocks = 8;

  double dt = 0.0;  // 0: a period of the stuck first mode / 500
  SteadyConfig steady{5, 1e-3, 5, 20000, 10};
  // Optional shaker-structure interaction: an armature mass whose inertial
  // reaction m * a_drive is subtracted from the commanded force.
  double armature_mass = 0.0;
};

// Gains and centre frequency scaled from the reference 111.3 Hz set to the
// stuck first mode of `stuck`.
PllConfig default_pll_config(const LinearModeSet& stuck);

// First-order low-pass I/Q demodulation of force and response.
class SynchronousDetector {
 public:
  explicit SynchronousDetector(double time_constant, double noise_floor = 1e-12);

  // Returns the updated phase-lag estimate (response minus force), wrapped
  // to (-pi, pi]. While either I/Q magnitude is below the noise floor the
  // previous estimate is held and `defined()` is false.
  double step(double force, double response, double alpha_r, double dt);

  double theta_hat() const { return theta_hat_; }
  bool defined() const { return defined_; }
  // Peak amplitude estimates of the fundamentals.
  double force_amplitude() const { return 2.0 * std::abs(force_iq_); }
  double response_amplitude() const { return 2.0 * std::abs(response_iq_); }

  std::complex<double> force_iq() const { return force_iq_; }
  std::complex<double> response_iq() const { return response_iq_; }
  void set_state(std::complex<double> f, std::complex<double> r, double theta, bool defined);

 private:
  double tau_;
  double floor_;
  std::complex<double> force_iq_{0.0, 0.0};
  std::complex<double> response_iq_{0.0, 0.0};
  double theta_hat_ = 0.0;
  bool defined_ = false;
  double cached_dt_ = -1.0;
  double gain_ = 0.0;
};

// PI law with optional symmetric output clamp and conditional integration.
struct PiController {
  double kp = 0.0;
  double ki = 0.0;
  double limit = 0.0;  // 0 disables clamping
  double integrator = 0.0;

  double step(double error, double dt);
};

double wrap_phase(double angle);

struct PllState {
  double alpha_r = 0.0;
  double omega = 0.0;
  double integrator = 0.0;
  std::complex<double> force_iq{0.0, 0.0};
  std::complex<double> response_iq{0.0, 0.0};
  double theta_hat = 0.0;
  bool theta_defined = false;
  // Outer amplitude loop (stepped sine).
  double force_command = 0.0;
  double amp_integrator = 0.0;
};

struct WarmStart {
  SimState sim;
  double last_force = 0.0;
  PllState pll;
};

class LockError : public ConvergenceError {
 public:
  LockError(const std::string& what, std::vector<double> omega_trace, std::vector<double> error_trace)
      : ConvergenceError(what), omega_(std::move(omega_trace)), error_(std::move(error_trace)) {}
  // Period-mean Omega and phase error during the failed attempt.
  const std::vector<double>& omega_trace() const { return omega_; }
  const std::vector<double>& error_trace() const { return error_; }

 private:
  std::vector<double> omega_;
  std::vector<double> error_;
};

struct AmplitudeLoop {
  double target = 0.0;     // fundamental force amplitude, N
  double kp = 0.5;         // N/N
  double ki = 0.5;         // 1/s
  double max_force = 0.0;  // actuator limit, N; 0 disables
  double tolerance = 0.005;
};

struct LockResult {
  TimeSeriesRecord record;
  WarmStart warm;
  double omega = 0.0;
  double force_command = 0.0;
  double lock_time = 0.0;  // simulated seconds until the recorded window
  bool saturated = false;
};

// Closed-loop phase lock at a fixed commanded force amplitude (or, with an
// amplitude loop, at a controlled fundamental force). Returns the recorded
// periodic motion with an Omega channel and the state for warm-starting.
LockResult lock_phase_point(const StructuralModel& model, const PllConfig& config, double force_amplitude,
                            const WarmStart* warm = nullptr, const AmplitudeLoop* amplitude_loop = nullptr);

enum class ScheduleDirection { increasing, decreasing };

struct Backbone {
  std::vector<BackbonePoint> points;
  std::vector<TimeSeriesRecord> records;
  std::vector<double> force_levels;
  ScheduleDirection direction = ScheduleDirection::increasing;
  std::string source = "pll";
  int drive_sensor = -1;  // index of the drive point among the sensors

  std::size_t valid_count() const;
};

struct TrackOptions {
  ExtractOptions extract;
  double noise_rms = 0.0;  // relative sensor noise applied before identification
  std::uint64_t noise_seed = 0;
  bool keep_records = true;
};

Backbone track_backbone(const StructuralModel& model, const PllConfig& config,
                        const std::vector<double>& schedule, const TrackOptions& options = {});

// Fifteen force amplitudes (N) spanning stick to macro-slip on the default
// rig, denser where the amplitude grows fastest.
std::vector<double> default_force_schedule();

// Re-identifies stored records, e.g. with different noise realizations.
Backbone reidentify(const Backbone& raw, const LinearModeSet& stuck, const LinearModeSet& free,
                    const TrackOptions& options);

struct SteppedSinePoint {
  double theta_setpoint = 0.0;  // rad, acceleration convention
  double omega = 0.0;
  double f1 = 0.0;              // measured fundamental force amplitude
  double theta_hat = 0.0;       // mean phase estimate over the record
  Eigen::VectorXd amplitude;    // sensor fundamental displacement amplitudes
  Eigen::VectorXd phase;        // sensor phase relative to the force, rad
  bool valid = true;
  std::string note;
};

struct SteppedSineCurve {
  double force_target = 0.0;
  std::vector<SteppedSinePoint> points;
};

SteppedSineCurve run_stepped_sine_frf(const StructuralModel& model, const PllConfig& config,
                                      double force_target, const std::vector<double>& phase_setpoints,
                                      const AmplitudeLoop& amplitude_loop);

// Default phase sweep: 20..145 degrees with extra resolution around 90.
std::vector<double> default_phase_setpoints();

}  // namespace nmtlab
