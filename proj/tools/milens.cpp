#include <CLI11.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "milens/config.hpp"
#include "milens/error.hpp"
#include "milens/experiments.hpp"
#include "milens/figures.hpp"
#include "milens/metrics.hpp"
#include "milens/registry.hpp"
#include "milens/verify.hpp"
#include "milens/version.hpp"

namespace fs = std::filesystem;
using namespace milens;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::string env_data_dir() {
  const char* env = std::getenv("MI_LENS_DATA_DIR");
  return env ? env : "";
}

// Bare override names accepted as --name value next to fully dotted keys.
const std::map<std::string, std::string>& override_aliases() {
  static const std::map<std::string, std::string> aliases = {
      {"iterations", "optim.iterations"},
      {"batch_size", "optim.batch_size"},
      {"learning_rate", "optim.learning_rate"},
      {"lr", "optim.learning_rate"},
      {"seed", "run.seed"},
      {"seeds", "run.seeds"},
      {"threads", "run.threads"},
      {"estimator", "estimator.kind"},
      {"critic", "critic.kind"},
      {"objective", "objective.kind"},
      {"target", "objective.target"},
      {"dataset", "dataset.kind"},
      {"out_dir", "run.out_dir"},
  };
  return aliases;
}

void apply_overrides(FlatConfig& flat, const std::vector<std::string>& sets,
                     std::vector<std::string> extras) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    flat.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  // CLI11 returns unparsed tokens in reverse order.
  std::reverse(extras.begin(), extras.end());
  for (size_t i = 0; i < extras.size(); ++i) {
    std::string key = extras[i];
    if (key.rfind("--", 0) != 0)
      throw ConfigError("unexpected argument '" + key + "' (overrides are --key value)");
    key = key.substr(2);
    if (i + 1 >= extras.size()) throw ConfigError("override --" + key + " is missing a value");
    const std::string value = extras[++i];
    const auto alias = override_aliases().find(key);
    if (alias != override_aliases().end())
      flat.set(alias->second, value);
    else if (key.find('.') != std::string::npos)
      flat.set(key, value);
    else
      throw ConfigError("unknown override --" + key);
  }
}

struct RunPaths {
  fs::path dir, config, metrics, checkpoint, record;
};

RunPaths run_paths(const ExperimentConfig& config) {
  RunPaths paths;
  paths.dir = fs::path(config.out_dir) / make_run_id(config.snapshot);
  paths.config = paths.dir / "config.cfg";
  paths.metrics = paths.dir / "metrics.csv";
  paths.checkpoint = paths.dir / "checkpoint.bin";
  paths.record = paths.dir / "record.json";
  return paths;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets,
            const std::vector<std::string>& extras, const std::string& data_dir_flag) {
  FlatConfig flat = config_path.empty() ? FlatConfig{} : FlatConfig::parse_file(config_path);
  apply_overrides(flat, sets, extras);
  if (!data_dir_flag.empty() && !flat.has("dataset.dir")) flat.set("dataset.dir", data_dir_flag);
  const ExperimentConfig config = ExperimentConfig::from_flat(flat, env_data_dir());

  const RunPaths paths = run_paths(config);
  fs::create_directories(paths.dir);
  std::ofstream(paths.config) << config.snapshot.canonical();

  RunRecord record;
  record.run_id = paths.dir.filename().string();
  record.config = config.snapshot.values();
  record.seed = config.seed;
  record.code_revision = kCodeRevision;
  record.started_at = iso8601_utc_now();
  record.artifacts = {{"config", paths.config.string()},
                      {"metrics", paths.metrics.string()},
                      {"record", paths.record.string()}};
  if (config.experiment == ExperimentKind::kViews)
    record.artifacts["checkpoint"] = paths.checkpoint.string();

  MetricsWriter metrics(paths.metrics.string());
  try {
    const RunOutcome outcome = run_experiment(
        config, metrics,
        config.experiment == ExperimentKind::kViews ? paths.checkpoint.string() : "");
    metrics.flush();
    record.status = "ok";
    record.finished_at = iso8601_utc_now();
    write_run_record(record, paths.record.string());
    std::cout << "run " << record.run_id << " ok"
              << " (final iteration " << outcome.final_iteration << ")\n"
              << "  metrics: " << paths.metrics.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    metrics.flush();  // keep partial metrics
    record.status = "failed";
    record.error = e.what();
    record.finished_at = iso8601_utc_now();
    write_run_record(record, paths.record.string());
    std::cerr << "run " << record.run_id << " failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_figure(const std::string& id, const std::string& runs_glob, const std::string& out_path) {
  const std::string svg = render_figure(id, runs_glob);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw DataError(out_path + ": cannot write figure");
  out << svg;
  std::cout << "figure " << id << " -> " << out_path << "\n";
  return kExitOk;
}

int cmd_verify() {
  const auto checks = run_verify_suite();
  size_t passed = 0;
  for (const auto& check : checks) {
    std::cout << (check.passed ? "PASS" : "FAIL") << "  " << check.name;
    if (!check.detail.empty()) std::cout << "  [" << check.detail << "]";
    std::cout << "\n";
    if (check.passed) ++passed;
  }
  std::cout << passed << "/" << checks.size() << " checks passed\n";
  return passed == checks.size() ? kExitOk : kExitRuntime;
}

int cmd_sweep(const std::string& config_path, const std::string& seeds_csv, int jobs,
              const std::vector<std::string>& sets, const std::vector<std::string>& extras,
              const std::string& data_dir_flag, const char* self) {
  FlatConfig flat = config_path.empty() ? FlatConfig{} : FlatConfig::parse_file(config_path);
  apply_overrides(flat, sets, extras);
  if (!seeds_csv.empty()) flat.set("run.seeds", seeds_csv);
  if (!data_dir_flag.empty() && !flat.has("dataset.dir")) flat.set("dataset.dir", data_dir_flag);
  const ExperimentConfig probe = ExperimentConfig::from_flat(flat, env_data_dir());
  if (probe.seeds.size() < 1) throw ConfigError("run.seeds: sweep needs at least one seed");

  // One child process per seed, at most `jobs` in flight.
  std::vector<pid_t> running;
  int failures = 0;
  auto reap_one = [&]() {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid > 0 && (!WIFEXITED(status) || WEXITSTATUS(status) != 0)) ++failures;
    for (auto it = running.begin(); it != running.end(); ++it)
      if (*it == pid) {
        running.erase(it);
        break;
      }
  };
  for (const uint64_t seed : probe.seeds) {
    while (static_cast<int>(running.size()) >= jobs) reap_one();
    const pid_t pid = fork();
    if (pid < 0) throw Error("sweep: fork failed");
    if (pid == 0) {
      FlatConfig child = flat;
      child.set("run.seed", std::to_string(seed));
      child.set("run.seeds", std::to_string(seed));
      const fs::path tmp =
          fs::temp_directory_path() / ("milens_sweep_" + std::to_string(getpid()) + ".cfg");
      std::ofstream(tmp) << child.canonical();
      execl(self, self, "run", "--config", tmp.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    running.push_back(pid);
  }
  while (!running.empty()) reap_one();
  if (failures > 0) {
    std::cerr << "sweep: " << failures << " run(s) failed\n";
    return kExitRuntime;
  }
  std::cout << "sweep: all " << probe.seeds.size() << " runs finished\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mi-lens: variational MI lower bounds and representation-quality experiments"};
  app.require_subcommand(1);

  std::string config_path, data_dir, figure_id, runs_glob = "runs", out_path;
  std::string seeds_csv;
  int jobs = 1;
  std::vector<std::string> sets;

  auto* run = app.add_subcommand("run", "execute one configured experiment");
  run->add_option("--config", config_path, "flat key = value config file");
  run->add_option("--set", sets, "override, key=value (repeatable)");
  run->add_option("--data-dir", data_dir, "dataset root (else MI_LENS_DATA_DIR)");
  run->allow_extras();

  auto* figure = app.add_subcommand("figure", "render an SVG figure from completed runs");
  figure->add_option("--id", figure_id, "figure id (1a 1b 1c 2 3 4a 4b 4c ...)")->required();
  figure->add_option("--runs", runs_glob, "runs directory or glob");
  figure->add_option("--out", out_path, "output .svg path")->required();

  auto* verify = app.add_subcommand("verify", "run the fast invariant suite");
  (void)verify;

  auto* sweep = app.add_subcommand("sweep", "fan one config out across seeds");
  sweep->add_option("--config", config_path, "flat key = value config file");
  sweep->add_option("--seeds", seeds_csv, "comma-separated seed list");
  sweep->add_option("--jobs", jobs, "max parallel runs")->default_val(1);
  sweep->add_option("--set", sets, "override, key=value (repeatable)");
  sweep->add_option("--data-dir", data_dir, "dataset root (else MI_LENS_DATA_DIR)");
  sweep->allow_extras();

  try {
    app.parse(argc, argv);
    if (app.got_subcommand("run"))
      return cmd_run(config_path, sets, run->remaining(), data_dir);
    if (app.got_subcommand("figure")) return cmd_figure(figure_id, runs_glob, out_path);
    if (app.got_subcommand("verify")) return cmd_verify();
    if (app.got_subcommand("sweep"))
      return cmd_sweep(config_path, seeds_csv, jobs, sets, sweep->remaining(), data_dir, argv[0]);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? kExitValidation : kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
