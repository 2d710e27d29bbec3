#include "nmtlab/cli.hpp"

#include "nmtlab/errors.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace nmtlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr const char* kVersion = "1.0.0";

std::string str_int(long long v) { return std::to_string(v); }

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  if (*b == '+') ++b;
  auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

}  // namespace

// ---- CSV ----------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

int CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw ConfigError("CSV has no column '" + name + "'");
  double v = 0.0;
  if (!parse_number(rows.at(row).at(static_cast<std::size_t>(c)), v))
    throw ConfigError("CSV cell '" + rows[row][static_cast<std::size_t>(c)] + "' in column '" + name +
                      "' is not a number");
  return v;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw ConfigError("CSV row width differs from header");
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw ConfigError("CSV is empty");
  return t;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

std::string to_csv_text(const CsvTable& table) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  return out;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path);
  f << to_csv_text(table);
  if (!f) throw ConfigError("write failed for " + path);
}

CsvTable backbone_table(const Backbone& bb, double omega_ref) {
  Eigen::Index ns = 0, nh = 0, ng = 0;
  for (const auto& p : bb.points) {
    ns = std::max(ns, p.phi1.size());
    nh = std::max(nh, p.harmonics.cols());
    ng = std::max(ng, p.gamma_stuck.size());
  }
  CsvTable t;
  t.header = {"level_index", "F1_N", "omega_rad_s", "omega_norm", "zeta", "modal_amplitude", "thd_response",
              "valid_flag"};
  for (Eigen::Index s = 0; s < ns; ++s)
    for (Eigen::Index h = 0; h < nh; ++h)
      t.header.push_back("xabs_s" + str_int(s + 1) + "_h" + str_int(h));
  t.header.push_back("P1_W");
  for (Eigen::Index s = 0; s < ns; ++s) t.header.push_back("phi1_re_s" + str_int(s + 1));
  for (Eigen::Index s = 0; s < ns; ++s) t.header.push_back("phi1_im_s" + str_int(s + 1));
  for (Eigen::Index m = 0; m < ng; ++m) t.header.push_back("gamma_stuck_" + str_int(m + 1));
  for (Eigen::Index m = 0; m < ng; ++m) t.header.push_back("gamma_free_" + str_int(m + 1));
  t.header.push_back("source");

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : bb.points) {
    std::vector<std::string> r = {str_int(p.level_index), format_double(p.f1),         format_double(p.omega),
                                  format_double(omega_ref > 0.0 ? p.omega / omega_ref : nan),
                                  format_double(p.zeta),      format_double(p.a),          format_double(p.thd_response),
                                  p.valid ? "1" : "0"};
    for (Eigen::Index s = 0; s < ns; ++s)
      for (Eigen::Index h = 0; h < nh; ++h)
        r.push_back(format_double(s < p.harmonics.rows() && h < p.harmonics.cols() ? std::abs(p.harmonics(s, h)) : nan));
    r.push_back(format_double(p.p1));
    for (Eigen::Index s = 0; s < ns; ++s) r.push_back(format_double(s < p.phi1.size() ? p.phi1(s).real() : nan));
    for (Eigen::Index s = 0; s < ns; ++s) r.push_back(format_double(s < p.phi1.size() ? p.phi1(s).imag() : nan));
    for (Eigen::Index m = 0; m < ng; ++m) r.push_back(format_double(m < p.gamma_stuck.size() ? p.gamma_stuck(m) : nan));
    for (Eigen::Index m = 0; m < ng; ++m) r.push_back(format_double(m < p.gamma_free.size() ? p.gamma_free(m) : nan));
    r.push_back(bb.source);
    t.rows.push_back(std::move(r));
  }
  return t;
}

Backbone backbone_from_table(const CsvTable& t) {
  for (const char* c : {"level_index", "omega_rad_s", "zeta", "modal_amplitude", "valid_flag"})
    if (t.column(c) < 0) throw ConfigError(std::string("not a backbone table: missing column ") + c);
  int ns = 0, nh = 0, ng = 0;
  while (t.column("phi1_re_s" + str_int(ns + 1)) >= 0) ++ns;
  while (t.column("xabs_s1_h" + str_int(nh)) >= 0) ++nh;
  while (t.column("gamma_stuck_" + str_int(ng + 1)) >= 0) ++ng;
  Backbone bb;
  const int src = t.column("source");
  if (src >= 0 && !t.rows.empty()) bb.source = t.rows.front()[static_cast<std::size_t>(src)];
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    BackbonePoint p;
    p.level_index = static_cast<int>(t.number(i, "level_index"));
    p.omega = t.number(i, "omega_rad_s");
    p.zeta = t.number(i, "zeta");
    p.a = t.number(i, "modal_amplitude");
    p.valid = t.number(i, "valid_flag") != 0.0;
    if (t.column("F1_N") >= 0) p.f1 = t.number(i, "F1_N");
    if (t.column("P1_W") >= 0) p.p1 = t.number(i, "P1_W");
    if (t.column("thd_response") >= 0) p.thd_response = t.number(i, "thd_response");
    p.phi1.resize(ns);
    for (int s = 0; s < ns; ++s)
      p.phi1(s) = Complex(t.number(i, "phi1_re_s" + str_int(s + 1)), t.number(i, "phi1_im_s" + str_int(s + 1)));
    p.harmonics.resize(ns, nh);
    for (int s = 0; s < ns; ++s)
      for (int h = 0; h < nh; ++h) {
        const std::string c = "xabs_s" + str_int(s + 1) + "_h" + str_int(h);
        p.harmonics(s, h) = t.column(c) >= 0 ? t.number(i, c) : std::numeric_limits<double>::quiet_NaN();
      }
    p.gamma_stuck.resize(ng);
    p.gamma_free.resize(ng);
    for (int m = 0; m < ng; ++m) {
      p.gamma_stuck(m) = t.number(i, "gamma_stuck_" + str_int(m + 1));
      p.gamma_free(m) = t.number(i, "gamma_free_" + str_int(m + 1));
    }
    bb.points.push_back(std::move(p));
  }
  return bb;
}

CsvTable stepped_sine_table(const SteppedSineCurve& curve) {
  Eigen::Index ns = 0;
  for (const auto& p : curve.points) ns = std::max(ns, p.amplitude.size());
  CsvTable t;
  t.header = {"theta_setpoint_deg", "omega_rad_s", "F1_N"};
  for (Eigen::Index s = 0; s < ns; ++s) t.header.push_back("amp_s" + str_int(s + 1));
  for (Eigen::Index s = 0; s < ns; ++s) t.header.push_back("phase_s" + str_int(s + 1));
  t.header.push_back("theta_hat_deg");
  t.header.push_back("valid_flag");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : curve.points) {
    std::vector<std::string> r = {format_double(p.theta_setpoint * 180.0 / kPi), format_double(p.omega),
                                  format_double(p.f1)};
    for (Eigen::Index s = 0; s < ns; ++s) r.push_back(format_double(s < p.amplitude.size() ? p.amplitude(s) : nan));
    for (Eigen::Index s = 0; s < ns; ++s) r.push_back(format_double(s < p.phase.size() ? p.phase(s) : nan));
    r.push_back(format_double(p.theta_hat * 180.0 / kPi));
    r.push_back(p.valid ? "1" : "0");
    t.rows.push_back(std::move(r));
  }
  return t;
}

CsvTable frf_table(const FrfCurve& curve, double omega_ref) {
  Eigen::Index ns = 0;
  for (const auto& p : curve.points) ns = std::max(ns, p.amplitude.size());
  CsvTable t;
  t.header = {"a", "Omega_rad_s", "Omega_norm", "theta_m_rad", "branch"};
  for (Eigen::Index s = 0; s < ns; ++s) t.header.push_back("amp_s" + str_int(s + 1));
  for (const auto& p : curve.points) {
    std::vector<std::string> r = {format_double(p.a), format_double(p.omega), format_double(p.omega / omega_ref),
                                  format_double(p.theta_m), p.branch == FrfBranch::low ? "low" : "high"};
    for (Eigen::Index s = 0; s < ns; ++s) r.push_back(format_double(p.amplitude(s)));
    t.rows.push_back(std::move(r));
  }
  return t;
}

CsvTable time_series_table(const TimeSeriesRecord& record) {
  CsvTable t;
  t.header.push_back("t");
  t.header.insert(t.header.end(), record.names.begin(), record.names.end());
  for (std::size_t k = 0; k < record.size(); ++k) {
    std::vector<std::string> r = {format_double(record.t0 + record.dt * static_cast<double>(k))};
    for (const auto& ch : record.data) r.push_back(format_double(ch[k]));
    t.rows.push_back(std::move(r));
  }
  return t;
}

CsvTable lma_summary_table(const LinearModeSet& stuck, const LinearModeSet& free) {
  CsvTable t;
  t.header = {"condition", "mode", "frequency_hz", "omega_rad_s", "damping_ratio"};
  for (const LinearModeSet* m : {&stuck, &free})
    for (Eigen::Index k = 0; k < m->frequencies.size(); ++k)
      t.rows.push_back({to_string(m->condition), str_int(k + 1), format_double(m->frequencies(k) / (2.0 * kPi)),
                        format_double(m->frequencies(k)), format_double(m->damping_ratios(k))});
  return t;
}

CsvTable mode_shape_table(const LinearModeSet& modes) {
  CsvTable t;
  t.header = {"dof"};
  for (Eigen::Index k = 0; k < modes.frequencies.size(); ++k)
    t.header.push_back(format_double(modes.frequencies(k) / (2.0 * kPi)));
  for (Eigen::Index d = 0; d < modes.full_shapes.rows(); ++d) {
    std::vector<std::string> r = {str_int(d)};
    for (Eigen::Index k = 0; k < modes.full_shapes.cols(); ++k) r.push_back(format_double(modes.full_shapes(d, k)));
    t.rows.push_back(std::move(r));
  }
  return t;
}

// ---- Comparison ---------------------------------------------------------

json ComparisonReport::to_json() const {
  json q = json::array();
  for (const auto& d : quantities)
    q.push_back({{"name", d.name}, {"max_abs", d.max_abs}, {"max_rel", d.max_rel}, {"mean_abs", d.mean_abs},
                 {"pass", d.pass}});
  return {{"mode", mode},           {"overlap", {overlap_lo, overlap_hi}}, {"n_compared", n_compared},
          {"quantities", q},        {"pass", pass}};
}

namespace {

bool is_backbone(const CsvTable& t) {
  return t.column("modal_amplitude") >= 0 && t.column("omega_rad_s") >= 0 && t.column("zeta") >= 0 &&
         t.column("valid_flag") >= 0;
}

ModalFunctions scalar_interpolants(const CsvTable& t) {
  std::map<double, std::array<double, 3>> g;  // a -> (sum omega, sum zeta, count)
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.number(i, "valid_flag") == 0.0) continue;
    auto& e = g[t.number(i, "modal_amplitude")];
    e[0] += t.number(i, "omega_rad_s");
    e[1] += t.number(i, "zeta");
    e[2] += 1.0;
  }
  std::vector<double> a, w, z;
  for (const auto& [amp, e] : g) {
    a.push_back(amp);
    w.push_back(e[0] / e[2]);
    z.push_back(e[1] / e[2]);
  }
  const auto n = static_cast<Eigen::Index>(a.size());
  return ModalFunctions(std::move(a), std::move(w), std::move(z), Eigen::MatrixXcd::Ones(1, n), 0);
}

}  // namespace

ComparisonReport compare_results(const CsvTable& a, const CsvTable& b, const CompareTolerances& tol) {
  ComparisonReport rep;
  if (is_backbone(a) && is_backbone(b)) {
    rep.mode = "backbone";
    const ModalFunctions fa = scalar_interpolants(a), fb = scalar_interpolants(b);
    rep.overlap_lo = std::max(fa.a_min(), fb.a_min());
    rep.overlap_hi = std::min(fa.a_max(), fb.a_max());
    if (!(rep.overlap_lo < rep.overlap_hi)) throw ConfigError("backbones have no overlapping amplitude range");
    QuantityDeviation dw{"omega"}, dz{"zeta"};
    double sum_w = 0.0, sum_z = 0.0;
    std::vector<double> at;
    if (tol.samples > 1) {
      for (int k = 0; k < tol.samples; ++k)
        at.push_back(rep.overlap_lo *
                     std::pow(rep.overlap_hi / rep.overlap_lo, static_cast<double>(k) / (tol.samples - 1)));
      at.back() = rep.overlap_hi;
    } else {
      const ModalFunctions& sparse = fb.knots().size() < fa.knots().size() ? fb : fa;
      at = sparse.knots();
    }
    for (double x : at) {
      if (x < rep.overlap_lo || x > rep.overlap_hi) continue;
      if (tol.exclude_hi > tol.exclude_lo && x >= tol.exclude_lo && x <= tol.exclude_hi) continue;
      const double wa = fa.omega(x), wb = fb.omega(x), za = fa.zeta(x), zb = fb.zeta(x);
      const double ew = std::abs(wb - wa), ez = std::abs(zb - za);
      dw.max_abs = std::max(dw.max_abs, ew);
      dw.max_rel = std::max(dw.max_rel, ew / std::abs(wa));
      dz.max_abs = std::max(dz.max_abs, ez);
      if (za != 0.0) dz.max_rel = std::max(dz.max_rel, ez / std::abs(za));
      if (ez > std::max(tol.zeta_rel * std::abs(za), tol.zeta_abs)) dz.pass = false;
      sum_w += ew;
      sum_z += ez;
      ++rep.n_compared;
    }
    if (rep.n_compared == 0) throw ConfigError("no comparison points outside the excluded band");
    dw.mean_abs = sum_w / static_cast<double>(rep.n_compared);
    dz.mean_abs = sum_z / static_cast<double>(rep.n_compared);
    dw.pass = dw.max_rel <= tol.omega_rel;
    rep.quantities = {dw, dz};
  } else {
    rep.mode = "rowwise";
    if (a.header != b.header) throw ConfigError("tables have different columns");
    if (a.rows.size() != b.rows.size()) throw ConfigError("tables have different row counts");
    if (a.rows.empty()) throw ConfigError("tables are empty");
    for (std::size_t c = 0; c < a.header.size(); ++c) {
      QuantityDeviation d{a.header[c]};
      double sum = 0.0;
      for (std::size_t r = 0; r < a.rows.size(); ++r) {
        const std::string &sa = a.rows[r][c], &sb = b.rows[r][c];
        double va = 0.0, vb = 0.0;
        double e = 0.0;
        if (parse_number(sa, va) && parse_number(sb, vb)) {
          if (std::isnan(va) && std::isnan(vb)) continue;
          e = va == vb ? 0.0 : std::abs(vb - va);
          if (std::isnan(e)) e = std::numeric_limits<double>::infinity();
          if (e > 0.0) d.max_rel = std::max(d.max_rel, va != 0.0 ? e / std::abs(va) : std::numeric_limits<double>::infinity());
        } else if (sa != sb) {
          e = std::numeric_limits<double>::infinity();
          d.max_rel = e;
        }
        d.max_abs = std::max(d.max_abs, e);
        sum += e;
      }
      d.mean_abs = sum / static_cast<double>(a.rows.size());
      d.pass = d.max_rel <= tol.omega_rel;
      rep.quantities.push_back(d);
    }
    rep.overlap_lo = 0.0;
    rep.overlap_hi = static_cast<double>(a.rows.size());
    rep.n_compared = a.rows.size();
  }
  rep.pass = std::all_of(rep.quantities.begin(), rep.quantities.end(), [](const auto& q) { return q.pass; });
  return rep;
}

// ---- Configuration ------------------------------------------------------

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

double positive(double v, const std::string& what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(what + " must be positive");
  return v;
}

RigConfig parse_rig(const json& j) {
  RigConfig r = default_rig_config();
  const std::string w = "rig";
  check_keys(j, {"length", "n_elements", "youngs_modulus", "density", "thickness", "height", "element_thickness",
                 "contacts", "sensor_nodes", "drive_node", "modal_damping", "n_modes"},
             w);
  read(j, "length", r.length, w);
  read(j, "n_elements", r.n_elements, w);
  read(j, "youngs_modulus", r.youngs_modulus, w);
  read(j, "density", r.density, w);
  read(j, "thickness", r.thickness, w);
  read(j, "height", r.height, w);
  read(j, "element_thickness", r.element_thickness, w);
  read(j, "sensor_nodes", r.sensor_nodes, w);
  read(j, "drive_node", r.drive_node, w);
  read(j, "modal_damping", r.modal_damping, w);
  read(j, "n_modes", r.n_modes, w);
  if (j.contains("contacts")) {
    if (!j["contacts"].is_array()) throw ConfigError("rig.contacts: expected an array");
    r.contacts.clear();
    for (const auto& c : j["contacts"]) {
      check_keys(c, {"node", "kt", "preload", "mu"}, "rig.contacts[]");
      ContactConfig cc;
      read(c, "node", cc.node, "rig.contacts[]");
      read(c, "kt", cc.kt, "rig.contacts[]");
      read(c, "preload", cc.preload, "rig.contacts[]");
      read(c, "mu", cc.mu, "rig.contacts[]");
      r.contacts.push_back(cc);
    }
  }
  return r;
}

void apply_pll(const json& j, PllConfig& c) {
  const std::string w = "pll";
  check_keys(j, {"omega_m", "kp", "ki", "lp_time_constant", "theta_setpoint", "lock_tolerance", "signal",
                 "output_limit", "noise_floor", "lock_periods", "freq_settle_tol", "min_lock_time", "max_lock_time",
                 "max_relocks", "dt", "armature_mass", "steady"},
             w);
  read(j, "omega_m", c.omega_m, w);
  read(j, "kp", c.kp, w);
  read(j, "ki", c.ki, w);
  read(j, "lp_time_constant", c.lp_time_constant, w);
  read(j, "theta_setpoint", c.theta_setpoint, w);
  read(j, "lock_tolerance", c.lock_tolerance, w);
  read(j, "output_limit", c.output_limit, w);
  read(j, "noise_floor", c.noise_floor, w);
  read(j, "lock_periods", c.lock_periods, w);
  read(j, "freq_settle_tol", c.freq_settle_tol, w);
  read(j, "min_lock_time", c.min_lock_time, w);
  read(j, "max_lock_time", c.max_lock_time, w);
  read(j, "max_relocks", c.max_relocks, w);
  read(j, "dt", c.dt, w);
  read(j, "armature_mass", c.armature_mass, w);
  if (j.contains("signal")) {
    std::string s;
    read(j, "signal", s, w);
    if (s == "displacement") c.signal = ResponseSignal::displacement;
    else if (s == "velocity") c.signal = ResponseSignal::velocity;
    else if (s == "acceleration") c.signal = ResponseSignal::acceleration;
    else throw ConfigError("pll.signal must be displacement, velocity or acceleration");
  }
  if (j.contains("steady")) {
    const json& s = j["steady"];
    check_keys(s, {"window", "rel_tol", "min_periods", "max_periods", "n_record"}, "pll.steady");
    read(s, "window", c.steady.window, "pll.steady");
    read(s, "rel_tol", c.steady.rel_tol, "pll.steady");
    read(s, "min_periods", c.steady.min_periods, "pll.steady");
    read(s, "max_periods", c.steady.max_periods, "pll.steady");
    read(s, "n_record", c.steady.n_record, "pll.steady");
  }
  if (!(c.omega_m > 0.0) || c.kp < 0.0 || c.ki < 0.0 || !(c.lp_time_constant > 0.0) || !(c.lock_tolerance > 0.0))
    throw ConfigError("pll: omega_m, lp_time_constant and lock_tolerance must be positive, gains non-negative");
}

std::vector<double> parse_schedule(const json& j) {
  if (j.is_array()) {
    std::vector<double> v;
    for (const auto& x : j) {
      if (!x.is_number()) throw ConfigError("schedule: levels must be numbers");
      v.push_back(x.get<double>());
    }
    return v;
  }
  check_keys(j, {"levels", "min", "max", "count", "direction"}, "schedule");
  std::vector<double> levels;
  if (j.contains("levels")) {
    levels = parse_schedule(j["levels"]);
  } else {
    double lo = 0.0, hi = 0.0;
    int n = 0;
    read(j, "min", lo, "schedule");
    read(j, "max", hi, "schedule");
    read(j, "count", n, "schedule");
    if (!(lo > 0.0) || !(hi > lo) || n < 1) throw ConfigError("schedule: need 0 < min < max and count >= 1");
    for (int k = 0; k < n; ++k) levels.push_back(n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(k) / (n - 1)));
  }
  std::string dir = "increasing";
  read(j, "direction", dir, "schedule");
  if (dir != "increasing" && dir != "decreasing") throw ConfigError("schedule.direction must be increasing or decreasing");
  std::sort(levels.begin(), levels.end());
  if (dir == "decreasing") std::reverse(levels.begin(), levels.end());
  return levels;
}

std::vector<double> number_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  std::vector<double> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw ConfigError(where + ": expected numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  check_keys(j, {"protocol", "output_dir", "seed", "noise", "rig", "pll", "schedule", "identify", "stepped_sine",
                 "epmc", "predict", "compare"},
             "config");
  ExperimentConfig c;
  c.source = j;
  if (!j.contains("protocol")) throw ConfigError("config: missing 'protocol'");
  read(j, "protocol", c.protocol, "config");
  static const std::set<std::string> protocols = {"lma", "backbone", "stepped_sine", "epmc", "predict", "compare"};
  if (!protocols.count(c.protocol)) throw ConfigError("config.protocol: unknown protocol '" + c.protocol + "'");
  read(j, "output_dir", c.output_dir, "config");
  read(j, "seed", c.seed, "config");
  if (j.contains("noise")) {
    const json& n = j["noise"];
    check_keys(n, {"rms"}, "noise");
    read(n, "rms", c.noise_rms, "noise");
    if (!(c.noise_rms >= 0.0)) throw ConfigError("noise.rms must be non-negative");
  }
  if (j.contains("rig")) c.rig = parse_rig(j["rig"]);
  if (j.contains("pll")) {
    c.pll_overrides = j["pll"];
    PllConfig probe;
    apply_pll(c.pll_overrides, probe);
  }
  if (j.contains("schedule")) {
    c.schedule = parse_schedule(j["schedule"]);
    if (c.schedule.empty()) throw ConfigError("schedule is empty");
    for (double f : c.schedule) positive(f, "schedule level");
  }
  if (j.contains("identify")) {
    const json& id = j["identify"];
    check_keys(id, {"harmonics", "measurement_emulation", "thd_channel"}, "identify");
    read(id, "harmonics", c.extract.harmonics, "identify");
    read(id, "measurement_emulation", c.extract.measurement_emulation, "identify");
    read(id, "thd_channel", c.extract.thd_channel, "identify");
    if (c.extract.harmonics < 2) throw ConfigError("identify.harmonics must be at least 2");
  }
  if (j.contains("stepped_sine")) {
    const json& s = j["stepped_sine"];
    check_keys(s, {"force_levels", "setpoints_deg", "kp_a", "ki_a", "max_force", "tolerance"}, "stepped_sine");
    if (s.contains("force_levels")) c.stepped_sine.force_levels = number_list(s["force_levels"], "stepped_sine.force_levels");
    if (s.contains("setpoints_deg"))
      for (double d : number_list(s["setpoints_deg"], "stepped_sine.setpoints_deg")) c.stepped_sine.setpoints.push_back(d * kPi / 180.0);
    read(s, "kp_a", c.stepped_sine.loop.kp, "stepped_sine");
    read(s, "ki_a", c.stepped_sine.loop.ki, "stepped_sine");
    read(s, "max_force", c.stepped_sine.loop.max_force, "stepped_sine");
    read(s, "tolerance", c.stepped_sine.loop.tolerance, "stepped_sine");
    for (double f : c.stepped_sine.force_levels) positive(f, "stepped_sine force level");
  }
  if (j.contains("epmc")) {
    const json& e = j["epmc"];
    check_keys(e, {"a_min", "a_max", "count", "harmonics", "n_time", "tolerance", "max_iterations"}, "epmc");
    read(e, "a_min", c.epmc.a_min, "epmc");
    read(e, "a_max", c.epmc.a_max, "epmc");
    read(e, "count", c.epmc.count, "epmc");
    read(e, "harmonics", c.epmc.options.harmonics, "epmc");
    read(e, "n_time", c.epmc.options.n_time, "epmc");
    read(e, "tolerance", c.epmc.options.tolerance, "epmc");
    read(e, "max_iterations", c.epmc.options.max_iterations, "epmc");
    if (!(c.epmc.a_min > 0.0) || !(c.epmc.a_max > c.epmc.a_min) || c.epmc.count < 2)
      throw ConfigError("epmc: need 0 < a_min < a_max and count >= 2");
  }
  if (j.contains("predict")) {
    const json& p = j["predict"];
    check_keys(p, {"backbone", "force_levels", "grid_factor"}, "predict");
    read(p, "backbone", c.predict.backbone_csv, "predict");
    if (p.contains("force_levels")) c.predict.force_levels = number_list(p["force_levels"], "predict.force_levels");
    read(p, "grid_factor", c.predict.grid_factor, "predict");
    for (double f : c.predict.force_levels) positive(f, "predict force level");
  }
  if (j.contains("compare")) {
    const json& p = j["compare"];
    check_keys(p, {"a", "b", "omega_rel", "zeta_rel", "zeta_abs", "exclude_band", "samples"}, "compare");
    read(p, "a", c.compare.a, "compare");
    read(p, "b", c.compare.b, "compare");
    read(p, "omega_rel", c.compare.tolerances.omega_rel, "compare");
    read(p, "zeta_rel", c.compare.tolerances.zeta_rel, "compare");
    read(p, "zeta_abs", c.compare.tolerances.zeta_abs, "compare");
    read(p, "samples", c.compare.tolerances.samples, "compare");
    if (p.contains("exclude_band")) {
      const auto band = number_list(p["exclude_band"], "compare.exclude_band");
      if (band.size() != 2 || !(band[1] > band[0])) throw ConfigError("compare.exclude_band must be [lo, hi]");
      c.compare.tolerances.exclude_lo = band[0];
      c.compare.tolerances.exclude_hi = band[1];
    }
  }
  if (c.protocol == "predict" && c.predict.backbone_csv.empty()) throw ConfigError("predict.backbone is required");
  if (c.protocol == "compare" && (c.compare.a.empty() || c.compare.b.empty()))
    throw ConfigError("compare.a and compare.b are required");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  ExperimentConfig c = parse_config(j);
  resolve_input_paths(c, fs::path(path).parent_path().string());
  return c;
}

void resolve_input_paths(ExperimentConfig& c, const std::string& base) {
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (fs::path(base) / p).lexically_normal().string();
  };
  resolve(c.predict.backbone_csv);
  resolve(c.compare.a);
  resolve(c.compare.b);
}

PllConfig resolve_pll(const ExperimentConfig& config, const StructuralModel& model) {
  PllConfig c = default_pll_config(linear_modes(model, ContactCondition::stuck, 1));
  apply_pll(config.pll_overrides, c);
  return c;
}

// ---- Runs ---------------------------------------------------------------

std::string sha256_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 initialisation failed");
  }
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    if (f.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(f.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char h[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(h, sizeof h, "%02x", md[i]);
    hex += h;
  }
  return hex;
}

json RunManifest::to_json() const {
  json arts = json::array();
  for (const auto& a : artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
  return {{"protocol", protocol},
          {"status", status},
          {"error", error},
          {"artifacts", arts},
          {"wall_time_s", wall_time_s},
          {"versions",
           {{"nmtlab", kVersion},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"compiler", __VERSION__}}},
          {"config", config},
          {"summary", summary}};
}

namespace {

struct Run {
  const ExperimentConfig& cfg;
  fs::path dir;
  RunManifest& man;
  bool quiet;

  void emit(const std::string& rel, const CsvTable& t) {
    const fs::path p = dir / rel;
    fs::create_directories(p.parent_path());
    write_csv(p.string(), t);
    man.artifacts.push_back({rel, sha256_file(p.string()), fs::file_size(p)});
  }
  void emit_json(const std::string& rel, const json& j) {
    const fs::path p = dir / rel;
    std::ofstream f(p, std::ios::binary);
    f << j.dump(2) << '\n';
    f.close();
    man.artifacts.push_back({rel, sha256_file(p.string()), fs::file_size(p)});
  }
  void log(const std::string& msg) const {
    if (!quiet) std::cerr << msg << '\n';
  }
};

std::string level_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02zu.csv", prefix, i);
  return buf;
}

void run_lma(Run& r) {
  const StructuralModel model = build_beam_model(r.cfg.rig);
  const LinearModeSet stuck = linear_modes(model, ContactCondition::stuck, r.cfg.rig.n_modes);
  const LinearModeSet free = linear_modes(model, ContactCondition::free, r.cfg.rig.n_modes);
  r.emit("lma.csv", lma_summary_table(stuck, free));
  r.emit("modes_stuck.csv", mode_shape_table(stuck));
  r.emit("modes_free.csv", mode_shape_table(free));
  std::vector<double> fs_, ff;
  for (Eigen::Index k = 0; k < stuck.frequencies.size(); ++k) fs_.push_back(stuck.frequencies(k) / (2.0 * kPi));
  for (Eigen::Index k = 0; k < free.frequencies.size(); ++k) ff.push_back(free.frequencies(k) / (2.0 * kPi));
  r.man.summary = {{"stuck_hz", fs_}, {"free_hz", ff}};
}

void run_backbone(Run& r) {
  const StructuralModel model = build_beam_model(r.cfg.rig);
  const PllConfig pll = resolve_pll(r.cfg, model);
  const std::vector<double> schedule = r.cfg.schedule.empty() ? default_force_schedule() : r.cfg.schedule;
  TrackOptions opt;
  opt.extract = r.cfg.extract;
  opt.noise_rms = r.cfg.noise_rms;
  opt.noise_seed = r.cfg.seed;
  r.log("tracking backbone over " + std::to_string(schedule.size()) + " levels");
  const Backbone bb = track_backbone(model, pll, schedule, opt);
  const double w_ref = linear_modes(model, ContactCondition::stuck, 1).frequencies(0);
  r.emit("backbone.csv", backbone_table(bb, w_ref));
  for (std::size_t i = 0; i < bb.records.size(); ++i)
    if (bb.records[i].size() > 0) r.emit("records/" + level_name("level_", i), time_series_table(bb.records[i]));
  r.man.summary = {{"levels", bb.points.size()}, {"valid", bb.valid_count()}};
}

void run_stepped_sine(Run& r) {
  const StructuralModel model = build_beam_model(r.cfg.rig);
  const PllConfig pll = resolve_pll(r.cfg, model);
  const auto setpoints = r.cfg.stepped_sine.setpoints.empty() ? default_phase_setpoints() : r.cfg.stepped_sine.setpoints;
  json levels = json::array();
  for (std::size_t i = 0; i < r.cfg.stepped_sine.force_levels.size(); ++i) {
    const double F = r.cfg.stepped_sine.force_levels[i];
    r.log("stepped sine at " + format_double(F) + " N");
    const SteppedSineCurve c = run_stepped_sine_frf(model, pll, F, setpoints, r.cfg.stepped_sine.loop);
    r.emit(level_name("frf_stepped_F", i), stepped_sine_table(c));
    std::size_t valid = 0;
    for (const auto& p : c.points) valid += p.valid;
    levels.push_back({{"force_N", F}, {"points", c.points.size()}, {"valid", valid}});
  }
  r.man.summary = {{"levels", levels}};
}

void run_epmc(Run& r) {
  const StructuralModel model = build_beam_model(r.cfg.rig);
  const EpmcTrace tr =
      trace_epmc_backbone(model, log_amplitudes(r.cfg.epmc.a_min, r.cfg.epmc.a_max, r.cfg.epmc.count), r.cfg.epmc.options);
  const double w_ref = linear_modes(model, ContactCondition::stuck, 1).frequencies(0);
  r.emit("backbone_epmc.csv", backbone_table(epmc_backbone(model, tr), w_ref));
  r.man.summary = {{"solutions", tr.solutions.size()}, {"stalled", tr.stalled}, {"diagnostic", tr.diagnostic}};
  if (tr.stalled) throw ProtocolError(tr.diagnostic);
}

void run_predict(Run& r) {
  const StructuralModel model = build_beam_model(r.cfg.rig);
  Backbone bb = backbone_from_table(read_csv(r.cfg.predict.backbone_csv));
  bb.drive_sensor = model.drive_sensor();
  const ModalFunctions mf = fit_backbone_functions(bb);
  const double w_ref = mf.omega(mf.a_min());
  json levels = json::array();
  for (std::size_t i = 0; i < r.cfg.predict.force_levels.size(); ++i) {
    const double F = r.cfg.predict.force_levels[i];
    const FrfCurve c = synthesize_frf(mf, F, r.cfg.predict.grid_factor);
    r.emit(level_name("frf_predicted_F", i), frf_table(c, w_ref));
    const FrfPoint& pk = c.peak(mf.drive_sensor());
    levels.push_back({{"force_N", F}, {"peak_omega_rad_s", pk.omega}, {"peak_drive_amplitude", pk.amplitude(mf.drive_sensor())}});
  }
  r.man.summary = {{"levels", levels}};
}

void run_compare(Run& r) {
  const ComparisonReport rep = compare_results(read_csv(r.cfg.compare.a), read_csv(r.cfg.compare.b), r.cfg.compare.tolerances);
  r.emit_json("comparison.json", rep.to_json());
  r.man.summary = rep.to_json();
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& config, bool quiet) {
  RunManifest man;
  man.protocol = config.protocol;
  man.config = config.source;
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  Run r{config, dir, man, quiet};
  const auto t0 = std::chrono::steady_clock::now();
  auto finish = [&] {
    man.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::sort(man.artifacts.begin(), man.artifacts.end(), [](const Artifact& a, const Artifact& b) { return a.path < b.path; });
    std::ofstream f(dir / "manifest.json", std::ios::binary);
    f << man.to_json().dump(2) << '\n';
  };
  try {
    if (config.protocol == "lma") run_lma(r);
    else if (config.protocol == "backbone") run_backbone(r);
    else if (config.protocol == "stepped_sine") run_stepped_sine(r);
    else if (config.protocol == "epmc") run_epmc(r);
    else if (config.protocol == "predict") run_predict(r);
    else if (config.protocol == "compare") run_compare(r);
    else throw ConfigError("unknown protocol '" + config.protocol + "'");
  } catch (const ConfigError& e) {
    man.status = "failed";
    man.error = e.what();
    finish();
    throw;
  } catch (const ModelError& e) {
    man.status = "failed";
    man.error = e.what();
    finish();
    throw ConfigError(e.what());
  } catch (const std::exception& e) {
    man.status = "failed";
    man.error = e.what();
    finish();
    throw ProtocolError(e.what());
  }
  finish();
  return man;
}

}  // namespace nmtlab
