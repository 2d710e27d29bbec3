#pragma once

#include "nmtlab/epmc.hpp"
#include "nmtlab/identify.hpp"
#include "nmtlab/pll.hpp"
#include "nmtlab/predict.hpp"
#include "nmtlab/structure.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace nmtlab {

// ---- CSV ----------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
  double number(std::size_t row, const std::string& name) const;
};

// Shortest-exact rendering used for every floating-point CSV cell.
std::string format_double(double v);
CsvTable read_csv(const std::string& path);
CsvTable parse_csv(const std::string& text);
std::string to_csv_text(const CsvTable& table);
void write_csv(const std::string& path, const CsvTable& table);

// Backbone CSV: the standard identification columns followed by P1_W, the
// complex phi1 per sensor, normalized Gamma magnitudes and the source tag.
CsvTable backbone_table(const Backbone& bb, double omega_ref);
Backbone backbone_from_table(const CsvTable& table);

CsvTable stepped_sine_table(const SteppedSineCurve& curve);
CsvTable frf_table(const FrfCurve& curve, double omega_ref);
CsvTable time_series_table(const TimeSeriesRecord& record);
CsvTable lma_summary_table(const LinearModeSet& stuck, const LinearModeSet& free);
CsvTable mode_shape_table(const LinearModeSet& modes);

// ---- Comparison ---------------------------------------------------------

struct CompareTolerances {
  double omega_rel = 0.01;
  double zeta_rel = 0.10;
  double zeta_abs = 0.002;
  // Optional amplitude band [lo, hi] excluded from backbone comparisons.
  double exclude_lo = 0.0;
  double exclude_hi = 0.0;
  // 0 compares at the valid knots of the sparser curve; otherwise the overlap
  // is resampled at this many log-spaced amplitudes.
  int samples = 0;
};

struct QuantityDeviation {
  std::string name;
  double max_abs = 0.0;
  double max_rel = 0.0;
  double mean_abs = 0.0;
  bool pass = true;
};

struct ComparisonReport {
  std::string mode;  // "backbone" (interpolated) or "rowwise"
  double overlap_lo = 0.0, overlap_hi = 0.0;
  std::size_t n_compared = 0;
  std::vector<QuantityDeviation> quantities;
  bool pass = true;

  nlohmann::json to_json() const;
};

// Backbone tables are compared over their common amplitude range: the denser
// curve is interpolated at the sparser curve's points. Other tables must share header and row count and are
// compared cell by cell.
ComparisonReport compare_results(const CsvTable& a, const CsvTable& b, const CompareTolerances& tol = {});

// ---- Experiments --------------------------------------------------------

struct SteppedSineConfig {
  std::vector<double> force_levels{0.1, 1.0, 6.0, 18.0};
  std::vector<double> setpoints;  // rad; empty means default_phase_setpoints()
  AmplitudeLoop loop;
};

struct EpmcRunConfig {
  double a_min = 5e-6;
  double a_max = 2.5e-2;
  int count = 30;
  EpmcOptions options;
};

struct PredictConfig {
  std::string backbone_csv;
  std::vector<double> force_levels{0.1, 1.0, 6.0, 18.0};
  int grid_factor = 10;
};

struct CompareConfig {
  std::string a, b;
  CompareTolerances tolerances;
};

struct ExperimentConfig {
  std::string protocol;  // lma, backbone, stepped_sine, epmc, predict, compare
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  double noise_rms = 0.0;
  RigConfig rig = default_rig_config();
  nlohmann::json pll_overrides = nlohmann::json::object();
  std::vector<double> schedule;
  ExtractOptions extract;
  SteppedSineConfig stepped_sine;
  EpmcRunConfig epmc;
  PredictConfig predict;
  CompareConfig compare;
  nlohmann::json source = nlohmann::json::object();  // echoed in the manifest
};

// Throws ConfigError naming the offending key; unknown keys are rejected.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
// Makes relative input CSV paths relative to `base`.
void resolve_input_paths(ExperimentConfig& config, const std::string& base);

// PLL settings: defaults scaled to the rig, then the config overrides.
PllConfig resolve_pll(const ExperimentConfig& config, const StructuralModel& model);

struct Artifact {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string protocol;
  std::string status = "ok";  // ok or failed
  std::string error;
  std::vector<Artifact> artifacts;
  double wall_time_s = 0.0;
  nlohmann::json config;
  nlohmann::json summary = nlohmann::json::object();

  nlohmann::json to_json() const;
};

std::string sha256_file(const std::string& path);

// Runs the protocol, writing CSVs and manifest.json into config.output_dir.
// Protocol failures are reported in the manifest (status "failed") with the
// artifacts written so far, and rethrown as ProtocolError.
RunManifest run_experiment(const ExperimentConfig& config, bool quiet = true);

class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace nmtlab
