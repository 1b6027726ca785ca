#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rangelab/error.hpp"
#include "rangelab/rng.hpp"
#include "rangelab/tail.hpp"
#include "rangelab/walk.hpp"

namespace rangelab {

inline const std::vector<std::string> kSubcommands = {"mean", "clt", "mgf", "rate", "tail", "blocks", "report"};

/// Sample budgets. Zero switches the optional parts off.
struct Budgets {
  std::uint64_t mean = 10000;       // walks per mean-range entry
  std::uint64_t clt = 10000;        // scaled samples per n (clt, mgf, rate)
  std::uint64_t tail_naive = 0;     // naive walks per n next to splitting
  std::uint64_t events = 10000;     // walks per event-probability estimate
  std::uint64_t strategy = 0;       // paths per strategy-check phase
  std::uint64_t chebyshev = 0;      // block ranges for the Chebyshev probe
  std::uint64_t bootstrap = 0;      // rate-constant resamples
};

/// One JSON document describes an experiment; command-line flags override
/// master_seed, workers and out.
struct ExperimentConfig {
  std::string subcommand;
  nlohmann::json dist = "simple";  // "simple" | "diagonal" | {"atoms": ...} | {"file": path}
  std::vector<std::size_t> n_grid;
  double theta = 2.0;
  std::vector<double> beta_grid;
  Budgets N;
  std::size_t particles = 1000;
  double kill_fraction = 0.25;
  std::size_t replications = 10;
  PivotRule pivot = PivotRule::crossing;
  std::optional<double> schedule_slope;
  double lambda_min = -1.0;
  double lambda_max = 2.0;
  double lambda_step = 0.02;
  double chebyshev_lambda = 1.0;
  std::size_t min_scaled_n = 1000;
  std::optional<std::uint64_t> master_seed;
  unsigned workers = 1;
  std::string out = "rangelab_out";
  std::vector<std::string> unknown_keys;

  /// InvalidConfig on malformed values or a missing master_seed.
  static ExperimentConfig from_json(const nlohmann::json& doc);
  static ExperimentConfig load(const std::string& path);
  /// Canonical document; workers and out are left out of `hash_document`.
  nlohmann::json to_json() const;
  nlohmann::json hash_document() const;
  std::string hash() const;
  StepDistribution distribution() const;
};

struct Diagnostic {
  enum class Severity { warning, error };
  Severity severity = Severity::warning;
  ErrorCode code = ErrorCode::InvalidConfig;
  std::string message;
};

std::string to_string(Diagnostic::Severity s);

/// Checks made before any compute: config shape, regime
/// (theta * expansion_r(n) > n), degenerate blocks and under-powered budgets.
std::vector<Diagnostic> validate(const ExperimentConfig& config);
bool has_errors(const std::vector<Diagnostic>& diagnostics);

struct Task {
  std::string id;  // e.g. "tail/n=1024", "blocks/n=100000/beta=2"
  std::size_t n = 0;
  std::optional<double> beta;
  SeedRecord seed;
};

/// Tasks in output order. The task index is a digest of the id, so a task's
/// stream does not depend on the rest of the grid or on the worker count.
std::vector<Task> seed_plan(const ExperimentConfig& config);

struct TaskRecord {
  std::string id;
  bool done = false;
  unsigned attempts = 0;
  std::map<std::string, std::string> outputs;  // file name -> checksum
  std::string error;
};

struct RunManifest {
  std::string config_hash;
  std::string subcommand;
  std::vector<TaskRecord> tasks;

  const TaskRecord* find(const std::string& id) const;
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& doc);
};

struct RunResult {
  int exit_code = 0;  // 0 ok, 1 invalid config, 2 partial failure
  std::size_t computed = 0;
  std::size_t reused = 0;
  std::size_t failed = 0;
  std::vector<Diagnostic> diagnostics;
  std::vector<std::string> artifacts;  // merged outputs, relative to out
  RunManifest manifest;
};

/// Runs the subcommand's tasks (each retried once), persisting per-task files
/// under out/tasks and the manifest after every task, then merges the task
/// files into the final artifacts. A task already recorded as done under the
/// same config hash, with matching output checksums, is not recomputed.
RunResult run(const ExperimentConfig& config, std::ostream* log = nullptr);

}  // namespace rangelab
