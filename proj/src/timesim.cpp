#include "nmtlab/timesim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <deque>
#include <numbers>
#include <sstream>

namespace nmtlab {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Per-element tangent state: 0 slipping, 1 sticking, 2 relaxed (kt/2).
std::uint64_t encode(const std::vector<int>& tangent) {
  std::uint64_t key = 0;
  for (std::size_t i = 0; i < tangent.size(); ++i)
    key |= static_cast<std::uint64_t>(tangent[i]) << (2 * i);
  return key;
}

}  // namespace

SimState rest_state(const StructuralModel& model, double t) {
  SimState s;
  s.t = t;
  s.x = Eigen::VectorXd::Zero(model.n_dof);
  s.v = Eigen::VectorXd::Zero(model.n_dof);
  s.a = Eigen::VectorXd::Zero(model.n_dof);
  for (const auto& e : model.friction) s.sliders.push_back(e.slider);
  return s;
}

bool TimeSeriesRecord::has(std::string_view name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

const std::vector<double>& TimeSeriesRecord::channel(std::string_view name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw IdentificationError("record has no channel '" + std::string(name) + "'");
  return data[static_cast<std::size_t>(it - names.begin())];
}

std::vector<double>& TimeSeriesRecord::channel(std::string_view name) {
  return const_cast<std::vector<double>&>(std::as_const(*this).channel(name));
}

std::vector<double>& TimeSeriesRecord::add_channel(std::string name) {
  if (has(name)) throw ConfigError("duplicate channel '" + name + "'");
  names.push_back(std::move(name));
  data.emplace_back(size(), 0.0);
  return data.back();
}

void TimeSeriesRecord::validate() const {
  if (!(dt > 0.0)) throw IdentificationError("record dt must be positive");
  if (names.size() != data.size()) throw IdentificationError("record channel/name mismatch");
  for (const auto& d : data)
    if (d.size() != size()) throw IdentificationError("record channels differ in length");
  for (std::size_t i = 1; i < period_markers.size(); ++i)
    if (period_markers[i] <= period_markers[i - 1])
      throw IdentificationError("period markers not strictly increasing");
}

NewmarkIntegrator::NewmarkIntegrator(const StructuralModel& model, NewmarkOptions options)
    : model_(model), options_(options) {
  if (model_.friction.size() > 32) throw ConfigError("at most 32 friction elements supported");
}

void NewmarkIntegrator::set_dt(double dt) {
  if (dt == dt_) return;
  if (!(dt > 0.0)) throw ConfigError("time step must be positive");
  dt_ = dt;
  const double c0 = 4.0 / (dt * dt);
  const double c3 = 2.0 / dt;
  linear_eff_ = c0 * model_.mass + c3 * model_.damping + model_.stiffness;
  cache_.clear();
}

const Eigen::LLT<Eigen::MatrixXd>& NewmarkIntegrator::factor(std::uint64_t key) {
  auto it = cache_.find(key);
  if (it != cache_.end()) return *it->second;
  Eigen::MatrixXd k = linear_eff_;
  for (std::size_t i = 0; i < model_.friction.size(); ++i) {
    const auto code = (key >> (2 * i)) & 3u;
    const auto& e = model_.friction[i];
    if (code == 1) k(e.dof, e.dof) += e.kt;
    if (code == 2) k(e.dof, e.dof) += 0.5 * e.kt;
  }
  auto llt = std::make_unique<Eigen::LLT<Eigen::MatrixXd>>(k);
  if (llt->info() != Eigen::Success) throw ModelError("effective stiffness not positive definite");
  return *cache_.emplace(key, std::move(llt)).first->second;
}

SimState NewmarkIntegrator::step(const SimState& s, const Eigen::VectorXd& f_ext, double dt) {
  set_dt(dt);
  const auto& M = model_.mass;
  const auto& C = model_.damping;
  const double c0 = 4.0 / (dt * dt);
  const double c1 = 4.0 / dt;
  const double c3 = 2.0 / dt;

  rhs_.noalias() = f_ext;
  rhs_.noalias() += M * (c0 * s.x + c1 * s.v + s.a);
  rhs_.noalias() += C * (c3 * s.x + s.v);
  x_ = s.x + dt * s.v + (0.5 * dt * dt) * s.a;

  const std::size_t nf = model_.friction.size();
  std::vector<int> tangent(nf, 1), pattern(nf, 0), solved_pattern(nf, 2);
  std::vector<double> forces(nf, 0.0);
  const double ref = std::max(f_ext.norm(), rhs_.norm());

  bool have_solution = false;
  for (int it = 0; it < options_.max_iterations; ++it) {
    for (std::size_t i = 0; i < nf; ++i) {
      JenkinsElement e = model_.friction[i];
      e.slider = s.sliders[i];
      const auto resp = jenkins_update(e, x_(e.dof));
      forces[i] = resp.force;
      pattern[i] = resp.sticking ? 0 : (resp.force > 0.0 ? 1 : -1);
    }
    // Within a fixed stick/slip pattern the friction law is linear, so the
    // solve that produced x_ was already exact.
    if (have_solution && pattern == solved_pattern) {
      last_iterations_ = it;
      break;
    }
    r_ = rhs_;
    r_.noalias() -= linear_eff_ * x_;
    for (std::size_t i = 0; i < nf; ++i) r_(model_.friction[i].dof) -= forces[i];
    if (r_.norm() <= options_.rtol * ref + options_.atol) {
      last_iterations_ = it;
      break;
    }
    if (it + 1 == options_.max_iterations) {
      std::ostringstream os;
      os << "Newton did not converge at t = " << s.t + dt << " (|r| = " << r_.norm() << ")";
      throw StepFailure(os.str());
    }
    for (std::size_t i = 0; i < nf; ++i) {
      int code = pattern[i] == 0 ? 1 : 0;
      // Damp stick/slip cycling after a few iterations.
      if (it >= 6 && have_solution && pattern[i] != solved_pattern[i]) code = 2;
      tangent[i] = code;
    }
    dx_ = factor(encode(tangent)).solve(r_);
    x_ += dx_;
    solved_pattern = pattern;
    for (std::size_t i = 0; i < nf; ++i)
      if (tangent[i] == 2) solved_pattern[i] = 2;  // never shortcut a relaxed solve
    have_solution = true;
  }

  SimState out;
  out.t = s.t + dt;
  out.x = x_;
  out.a = c0 * (x_ - s.x) - c1 * s.v - s.a;
  out.v = s.v + (0.5 * dt) * (s.a + out.a);
  out.sliders.resize(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    JenkinsElement e = model_.friction[i];
    e.slider = s.sliders[i];
    out.sliders[i] = jenkins_update(e, x_(e.dof)).slider;
  }
  return out;
}

SimState newmark_step(const StructuralModel& model, const SimState& state,
                      const Eigen::VectorXd& f_ext, double dt) {
  NewmarkIntegrator integrator(model);
  return integrator.step(state, f_ext, dt);
}

Simulator::Simulator(const StructuralModel& model, double dt, NewmarkOptions options)
    : integrator_(model, options), state_(rest_state(model)), dt_(dt),
      max_halvings_(options.max_halvings), f_vec_(Eigen::VectorXd::Zero(model.n_dof)) {
  if (!(dt > 0.0)) throw ConfigError("time step must be positive");
}

void Simulator::set_state(SimState s) {
  if (s.x.size() != model().n_dof || s.v.size() != model().n_dof || s.a.size() != model().n_dof ||
      s.sliders.size() != model().friction.size())
    throw ConfigError("state does not match model");
  state_ = std::move(s);
}

void Simulator::set_dt(double dt) {
  if (!(dt > 0.0)) throw ConfigError("time step must be positive");
  dt_ = dt;
}

void Simulator::advance(double f_next) {
  advance_recursive(f_last_, f_next, dt_, 0);
  f_last_ = f_next;
}

void Simulator::advance_recursive(double f_prev, double f_next, double dt, int depth) {
  f_vec_(model().drive_dof) = f_next;
  try {
    state_ = integrator_.step(state_, f_vec_, dt);
    return;
  } catch (const StepFailure&) {
    if (depth >= max_halvings_) throw;
  }
  const double f_mid = 0.5 * (f_prev + f_next);
  advance_recursive(f_prev, f_mid, 0.5 * dt, depth + 1);
  advance_recursive(f_mid, f_next, 0.5 * dt, depth + 1);
}

std::vector<std::string> standard_channels(const StructuralModel& model) {
  std::vector<std::string> n = {"force", "omega", "alpha_r", "drive_disp", "drive_vel", "drive_acc"};
  for (std::size_t s = 0; s < model.sensor_dofs.size(); ++s) n.push_back("disp_s" + std::to_string(s + 1));
  for (std::size_t s = 0; s < model.sensor_dofs.size(); ++s) n.push_back("acc_s" + std::to_string(s + 1));
  return n;
}

int samples_per_period(double dt, double omega) {
  if (!(dt > 0.0) || !(omega > 0.0)) throw ConfigError("dt and omega must be positive");
  return std::max(4, static_cast<int>(std::lround(kTwoPi / (omega * dt))));
}

bool sequence_settled(const std::vector<double>& values, int window, double rel_tol) {
  const int n = static_cast<int>(values.size());
  if (window < 1 || n < window + 1) return false;
  double vmax = 0.0;
  for (int k = n - window - 1; k < n; ++k) vmax = std::max(vmax, std::abs(values[k]));
  if (vmax == 0.0) return true;
  std::vector<double> d;
  for (int k = n - window; k < n; ++k) {
    const double rel = (values[k] - values[k - 1]) / vmax;
    if (std::abs(rel) >= rel_tol) return false;
    d.push_back(rel);
  }
  // Same-signed changes are a drift; extrapolate its geometric decay.
  // Mixed signs are fluctuation and already bounded above.
  const bool drifting = std::all_of(d.begin(), d.end(), [&](double x) { return x * d.front() > 0.0; });
  if (!drifting || d.size() < 2) return true;
  double ratio = std::pow(std::abs(d.back() / d.front()), 1.0 / static_cast<double>(d.size() - 1));
  ratio = std::min(ratio, 0.999);
  return std::abs(d.back()) * ratio / (1.0 - ratio) < rel_tol;
}

namespace {

// Collects one channel block per period.
struct PeriodBlock {
  std::vector<std::vector<double>> data;
};

}  // namespace

TimeSeriesRecord run_to_steady_state(Simulator& sim, const std::function<double(double)>& drive_force,
                                     double omega, const SteadyConfig& config,
                                     const ChannelProbe* probe, SteadyTrace* trace_out) {
  if (config.n_record < 1 || config.window < 1) throw ConfigError("invalid steady-state config");
  const int spp = samples_per_period(sim.dt(), omega);
  sim.set_dt(kTwoPi / (omega * spp));
  const auto& model = sim.model();

  std::vector<std::string> names = standard_channels(model);
  const std::size_t n_std = names.size();
  if (probe) names.insert(names.end(), probe->names.begin(), probe->names.end());
  const std::size_t nch = names.size();
  const std::size_t ns = model.sensor_dofs.size();

  std::vector<double> extra(probe ? probe->names.size() : 0, 0.0);
  long long global_k = 0;

  auto run_period = [&](PeriodBlock* block, double& rms_vel, double& fund) {
    if (block) {
      block->data.assign(nch, {});
      for (auto& c : block->data) c.reserve(static_cast<std::size_t>(spp));
    }
    double sum_v2 = 0.0;
    std::complex<double> acc(0.0, 0.0);
    for (int k = 0; k < spp; ++k, ++global_k) {
      const SimState& st = sim.state();
      const double f = sim.last_force();
      if (probe) probe->sample(st, f, extra.data());
      const double xd = st.x(model.drive_dof);
      const double vd = st.v(model.drive_dof);
      sum_v2 += vd * vd;
      const double ph = kTwoPi * k / spp;
      acc += xd * std::complex<double>(std::cos(ph), -std::sin(ph));
      if (block) {
        auto& d = block->data;
        d[0].push_back(f);
        d[1].push_back(omega);
        d[2].push_back(kTwoPi * static_cast<double>(global_k) / spp);
        d[3].push_back(xd);
        d[4].push_back(vd);
        d[5].push_back(st.a(model.drive_dof));
        for (std::size_t s = 0; s < ns; ++s) {
          d[6 + s].push_back(st.x(model.sensor_dofs[s]));
          d[6 + ns + s].push_back(st.a(model.sensor_dofs[s]));
        }
        for (std::size_t e = 0; e < extra.size(); ++e) d[n_std + e].push_back(extra[e]);
      }
      sim.advance(drive_force(sim.state().t + sim.dt()));
    }
    rms_vel = std::sqrt(sum_v2 / spp);
    fund = 2.0 * std::abs(acc) / spp;
  };

  auto assemble = [&](const std::deque<PeriodBlock>& blocks, double t0) {
    TimeSeriesRecord rec;
    rec.t0 = t0;
    rec.dt = sim.dt();
    rec.names = names;
    rec.data.assign(nch, {});
    for (std::size_t p = 0; p < blocks.size(); ++p) {
      rec.period_markers.push_back(p * static_cast<std::size_t>(spp));
      for (std::size_t c = 0; c < nch; ++c)
        rec.data[c].insert(rec.data[c].end(), blocks[p].data[c].begin(), blocks[p].data[c].end());
    }
    return rec;
  };

  SteadyTrace trace;
  std::deque<PeriodBlock> recent;
  std::deque<double> recent_t0;
  bool settled = false;
  for (int p = 0; p < config.max_periods; ++p) {
    double rms = 0.0, fund = 0.0;
    recent_t0.push_back(sim.state().t);
    recent.emplace_back();
    run_period(&recent.back(), rms, fund);
    if (static_cast<int>(recent.size()) > config.n_record) {
      recent.pop_front();
      recent_t0.pop_front();
    }
    trace.rms_velocity.push_back(rms);
    trace.fundamental.push_back(fund);
    if (p + 1 >= config.min_periods && sequence_settled(trace.rms_velocity, config.window, config.rel_tol) &&
        sequence_settled(trace.fundamental, config.window, config.rel_tol)) {
      settled = true;
      break;
    }
  }
  if (!settled) {
    if (trace_out) *trace_out = trace;
    std::ostringstream os;
    os << "steady state not reached within " << config.max_periods << " periods";
    throw SteadyStateTimeout(os.str(), assemble(recent, recent_t0.empty() ? 0.0 : recent_t0.front()),
                             std::move(trace));
  }

  std::deque<PeriodBlock> blocks;
  const double t0 = sim.state().t;
  for (int p = 0; p < config.n_record; ++p) {
    double rms = 0.0, fund = 0.0;
    blocks.emplace_back();
    run_period(&blocks.back(), rms, fund);
    trace.rms_velocity.push_back(rms);
    trace.fundamental.push_back(fund);
  }
  if (trace_out) *trace_out = std::move(trace);
  return assemble(blocks, t0);
}

}  // namespace nmtlab
