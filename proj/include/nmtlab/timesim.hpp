#pragma once

#include "nmtlab/errors.hpp"
#include "nmtlab/structure.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nmtlab {

struct SimState {
  double t = 0.0;
  Eigen::VectorXd x, v, a;
  std::vector<double> sliders;  // one per friction element
};

SimState rest_state(const StructuralModel& model, double t = 0.0);

// Uniformly sampled multi-channel record. Sample k sits at t0 + k*dt.
struct TimeSeriesRecord {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> data;
  std::vector<std::size_t> period_markers;

  std::size_t size() const { return data.empty() ? 0 : data.front().size(); }
  bool has(std::string_view name) const;
  const std::vector<double>& channel(std::string_view name) const;
  std::vector<double>& channel(std::string_view name);
  std::vector<double>& add_channel(std::string name);
  void validate() const;
};

struct NewmarkOptions {
  double rtol = 1e-9;
  double atol = 1e-12;  // N
  int max_iterations = 25;
  int max_halvings = 6;
};

class StepFailure : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

// Average-acceleration Newmark (gamma = 1/2, beta = 1/4) with Newton iteration
// on the friction forces. Factorizations of the effective stiffness are cached
// per step size and stick pattern.
class NewmarkIntegrator {
 public:
  explicit NewmarkIntegrator(const StructuralModel& model, NewmarkOptions options = {});

  // One step to t + dt with the external force evaluated at t + dt.
  // Throws StepFailure when Newton does not converge.
  SimState step(const SimState& state, const Eigen::VectorXd& f_ext, double dt);

  const StructuralModel& model() const { return model_; }
  int last_iterations() const { return last_iterations_; }

 private:
  const Eigen::LLT<Eigen::MatrixXd>& factor(std::uint64_t stick_mask);
  void set_dt(double dt);

  StructuralModel model_;
  NewmarkOptions options_;
  double dt_ = -1.0;
  Eigen::MatrixXd linear_eff_;
  std::unordered_map<std::uint64_t, std::unique_ptr<Eigen::LLT<Eigen::MatrixXd>>> cache_;
  Eigen::VectorXd rhs_, x_, r_, dx_;
  int last_iterations_ = 0;
};

SimState newmark_step(const StructuralModel& model, const SimState& state,
                      const Eigen::VectorXd& f_ext, double dt);

// Stateful stepping driver with a single-point drive force. On StepFailure
// the step is retried as two half steps (recursively, bounded).
class Simulator {
 public:
  Simulator(const StructuralModel& model, double dt, NewmarkOptions options = {});

  const SimState& state() const { return state_; }
  void set_state(SimState s);
  double dt() const { return dt_; }
  void set_dt(double dt);
  const StructuralModel& model() const { return integrator_.model(); }

  // Advance by dt with drive force `f_next` at the end of the step.
  void advance(double f_next);
  double last_force() const { return f_last_; }
  void set_last_force(double f) { f_last_ = f; }

 private:
  void advance_recursive(double f_prev, double f_next, double dt, int depth);

  NewmarkIntegrator integrator_;
  SimState state_;
  double dt_;
  double f_last_ = 0.0;
  int max_halvings_;
  Eigen::VectorXd f_vec_;
};

struct SteadyConfig {
  int window = 5;             // consecutive periods that must agree
  double rel_tol = 1e-3;
  int min_periods = 5;
  int max_periods = 20000;
  int n_record = 10;
};

// Per-period convergence trace kept by the steady-state detector.
struct SteadyTrace {
  std::vector<double> rms_velocity;
  std::vector<double> fundamental;
};

class SteadyStateTimeout : public ConvergenceError {
 public:
  SteadyStateTimeout(const std::string& what, TimeSeriesRecord partial, SteadyTrace trace)
      : ConvergenceError(what), partial_(std::move(partial)), trace_(std::move(trace)) {}
  const TimeSeriesRecord& partial_record() const { return partial_; }
  const SteadyTrace& trace() const { return trace_; }

 private:
  TimeSeriesRecord partial_;
  SteadyTrace trace_;
};

// Extra per-sample channels supplied by a caller (e.g. the phase detector).
// `sample` is called once per integration step, before stepping, with the
// state and drive force of that sample.
struct ChannelProbe {
  std::vector<std::string> names;
  std::function<void(const SimState&, double force, double* out)> sample;
};

// Standard channel names written by the recorder.
std::vector<std::string> standard_channels(const StructuralModel& model);

// Periodic single-point forcing of fundamental frequency omega. The step size
// is snapped so one period holds an integer number of samples. Integrates
// until the drive-point velocity RMS and the drive-point fundamental amplitude
// are stationary, then records n_record periods. The simulator is left at the
// end of the recorded window.
TimeSeriesRecord run_to_steady_state(Simulator& sim, const std::function<double(double)>& drive_force,
                                     double omega, const SteadyConfig& config,
                                     const ChannelProbe* probe = nullptr,
                                     SteadyTrace* trace_out = nullptr);

// Number of samples per period after snapping dt to omega.
int samples_per_period(double dt, double omega);

// True when the per-period sequence has settled: over the last `window`
// values every relative change is below rel_tol and the geometric
// extrapolation of the remaining drift is below rel_tol as well.
bool sequence_settled(const std::vector<double>& values, int window, double rel_tol);

}  // namespace nmtlab
