#include <CLI11.hpp>

#include <iostream>
#include <thread>

#include "ccmcf/cli_config.hpp"

using namespace ccmcf;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

int cmd_validate(const std::string& scenario) {
  const Scenario s = load_scenario(scenario);
  std::cout << "valid: " << s.name << " (" << to_string(s.kind) << ", " << s.num_realizations << " realizations";
  if (s.sweep.variable != SweepVariable::None) std::cout << ", " << s.sweep.values.size() << " sweep points";
  std::cout << ")\n";
  return 0;
}

int cmd_run(const std::string& scenario, std::optional<std::uint64_t> seed, unsigned workers, const std::string& out) {
  Scenario s = load_scenario(scenario);
  if (seed) s.master_seed = *seed;
  const std::filesystem::path dir = out.empty() ? std::filesystem::path("runs") / s.name : std::filesystem::path(out);
  std::size_t last_pct = 101;
  const RunManifest m = run(s, dir, workers, [&](std::size_t done, std::size_t total) {
    const std::size_t pct = 100 * done / total;
    if (pct != last_pct && (pct % 10 == 0 || done == total)) {
      std::cerr << "progress " << done << "/" << total << "\n";
      last_pct = pct;
    }
  });
  std::cout << "run complete: " << (dir / kManifestFile).string() << " (" << m.wall_seconds << " s, "
            << m.failures.size() << " failed realizations)\n";
  return 0;
}

int cmd_report(const std::string& manifest) {
  report(manifest, std::cout);
  return 0;
}

int cmd_calibrate(const std::string& scenario, double start, int seeds, double tol, unsigned workers) {
  const Scenario s = load_scenario(scenario);
  const CalibrationResult r = calibrate_step(s, start, seeds, tol, 12, workers, &std::cout);
  if (!r.converged) {
    std::cout << "not converged; smallest target tried " << r.rows.back().local_error_target << "\n";
    return kExitRuntime;
  }
  std::cout << "chosen local_error_target " << r.chosen_target << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte-Carlo SNR statistics of coupled-core multicore fiber links with mode-dependent loss"};
  app.require_subcommand(1);

  std::string scenario;
  std::optional<std::uint64_t> seed;
  unsigned workers = default_workers();
  std::string out;
  double start = 1e-3;
  int seeds = 10;
  double tol = 0.05;

  auto* run_cmd = app.add_subcommand("run", "Run a scenario file, manifest or preset");
  run_cmd->add_option("scenario", scenario, "Scenario file, manifest.json or preset name")->required();
  run_cmd->add_option("--seed", seed, "Override the master seed");
  run_cmd->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  run_cmd->add_option("--out", out, "Output directory (default runs/<name>)");

  std::string manifest;
  auto* report_cmd = app.add_subcommand("report", "Summarize a run");
  report_cmd->add_option("manifest", manifest, "manifest.json or run directory")->required();

  auto* validate_cmd = app.add_subcommand("validate", "Check a scenario against the schema");
  validate_cmd->add_option("scenario", scenario, "Scenario file or preset name")->required();

  auto* cal_cmd = app.add_subcommand("calibrate-step", "Halve the local error target until the NLI SNR saturates");
  cal_cmd->add_option("scenario", scenario, "Scenario file or preset name")->required();
  cal_cmd->add_option("--start", start, "Initial local error target");
  cal_cmd->add_option("--seeds", seeds, "Realizations per target");
  cal_cmd->add_option("--tolerance-db", tol, "Saturation tolerance, dB");
  cal_cmd->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  auto* presets_cmd = app.add_subcommand("presets", "List preset names");
  std::string dump;
  presets_cmd->add_option("--dump", dump, "Print one preset as a scenario file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*run_cmd) return cmd_run(scenario, seed, workers, out);
    if (*report_cmd) return cmd_report(manifest);
    if (*validate_cmd) return cmd_validate(scenario);
    if (*cal_cmd) return cmd_calibrate(scenario, start, seeds, tol, workers);
    if (*presets_cmd) {
      if (!dump.empty()) {
        std::cout << serialize_scenario(preset(dump));
      } else {
        for (const auto& n : preset_names()) std::cout << n << "\n";
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DimensionError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
