#include "nmtlab/cli.hpp"
#include "nmtlab/errors.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using nlohmann::json;

constexpr int kExitConfig = 2;
constexpr int kExitProtocol = 3;

struct Common {
  std::string config;
  std::string out;
  long long seed = -1;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "experiment configuration (JSON)");
  sub->add_option("-o,--out", c.out, "output directory");
  sub->add_option("-s,--seed", c.seed, "noise seed");
  sub->add_flag("-q,--quiet", c.quiet, "suppress progress messages");
}

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw nmtlab::ConfigError("cannot read config " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw nmtlab::ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
}

nmtlab::ExperimentConfig make_config(const std::string& protocol, const Common& c) {
  json j = c.config.empty() ? json::object() : read_json(c.config);
  if (!j.is_object()) throw nmtlab::ConfigError("config: expected an object");
  if (j.contains("protocol") && j["protocol"] != protocol)
    throw nmtlab::ConfigError("config.protocol is '" + j["protocol"].get<std::string>() + "' but the command is '" +
                              protocol + "'");
  j["protocol"] = protocol;
  nmtlab::ExperimentConfig cfg = nmtlab::parse_config(j);
  if (!c.config.empty()) nmtlab::resolve_input_paths(cfg, std::filesystem::path(c.config).parent_path().string());
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  return cfg;
}

int run(const nmtlab::ExperimentConfig& cfg, bool quiet) {
  try {
    const nmtlab::RunManifest m = nmtlab::run_experiment(cfg, quiet);
    if (!quiet) {
      std::cerr << cfg.protocol << ": ok (" << m.artifacts.size() << " files in " << cfg.output_dir << ", "
                << m.wall_time_s << " s)\n";
      if (cfg.protocol == "compare") std::cout << m.summary.dump(2) << '\n';
    }
    return 0;
  } catch (const nmtlab::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << cfg.protocol << " failed: " << e.what() << '\n';
    return kExitProtocol;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual nonlinear modal testing of a friction-damped cantilever"};
  app.require_subcommand(1);

  struct Cmd {
    const char* name;
    const char* protocol;
    const char* help;
  };
  const Cmd cmds[] = {
      {"lma", "lma", "linear modal analysis, stuck and free contact"},
      {"backbone", "backbone", "phase-resonant backbone tracking with the PLL"},
      {"stepped-sine", "stepped_sine", "force-controlled stepped-sine frequency responses"},
      {"epmc", "epmc", "numerical backbone by the extended periodic motion concept"},
      {"predict", "predict", "frequency responses synthesized from a backbone"},
      {"compare", "compare", "compare two result tables"},
  };
  std::vector<Common> opts(std::size(cmds));
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(cmds); ++i) {
    auto* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    add_common(sub, opts[i]);
    subs.push_back(sub);
  }

  std::string cmp_a, cmp_b;
  double cmp_omega_rel = -1.0;
  CLI::App* cmp = subs.back();
  cmp->add_option("a", cmp_a, "reference table")->check(CLI::ExistingFile);
  cmp->add_option("b", cmp_b, "table under test")->check(CLI::ExistingFile);
  cmp->add_option("--omega-rel", cmp_omega_rel, "relative frequency tolerance");

  std::vector<std::string> batch_configs;
  bool batch_quiet = false;
  std::string batch_out;
  auto* batch = app.add_subcommand("batch", "run several configurations in order");
  batch->add_option("configs", batch_configs, "configuration files")->required()->check(CLI::ExistingFile);
  batch->add_option("-o,--out", batch_out, "parent directory for the runs");
  batch->add_flag("-q,--quiet", batch_quiet, "suppress progress messages");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (batch->parsed()) {
      int worst = 0;
      for (std::size_t k = 0; k < batch_configs.size(); ++k) {
        nmtlab::ExperimentConfig cfg = nmtlab::load_config(batch_configs[k]);
        if (!batch_out.empty())
          cfg.output_dir = (std::filesystem::path(batch_out) /
                            (std::to_string(k) + "_" + std::filesystem::path(batch_configs[k]).stem().string()))
                               .string();
        worst = std::max(worst, run(cfg, batch_quiet));
      }
      return worst;
    }
    for (std::size_t i = 0; i < std::size(cmds); ++i) {
      if (!subs[i]->parsed()) continue;
      nmtlab::ExperimentConfig cfg;
      if (subs[i] == cmp && !cmp_a.empty()) {
        Common c = opts[i];
        json j = c.config.empty() ? json::object() : read_json(c.config);
        j["protocol"] = "compare";
        j["compare"]["a"] = cmp_a;
        if (cmp_b.empty()) throw nmtlab::ConfigError("compare needs two tables");
        j["compare"]["b"] = cmp_b;
        if (cmp_omega_rel > 0.0) j["compare"]["omega_rel"] = cmp_omega_rel;
        cfg = nmtlab::parse_config(j);
        if (!c.out.empty()) cfg.output_dir = c.out;
      } else {
        cfg = make_config(cmds[i].protocol, opts[i]);
      }
      return run(cfg, opts[i].quiet);
    }
  } catch (const nmtlab::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  return 0;
}
