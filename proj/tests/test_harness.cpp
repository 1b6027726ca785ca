#include <filesystem>
#include <set>

#include "doctest.h"
#include "rangelab/csv.hpp"
#include "rangelab/harness.hpp"

using namespace rangelab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rangelab_harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig mean_config(const fs::path& out) {
  auto c = ExperimentConfig::from_json(json{{"subcommand", "mean"},
                                            {"n_grid", {1000, 10000}},
                                            {"N", {{"mean", 10000}}},
                                            {"master_seed", 7}});
  c.out = out.string();
  return c;
}

bool has_code(const std::vector<Diagnostic>& ds, ErrorCode code, Diagnostic::Severity sev) {
  for (const auto& d : ds) {
    if (d.code == code && d.severity == sev) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("config errors are reported before any compute") {
  CHECK_THROWS_AS(ExperimentConfig::from_json(json::array()), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"theta", "two"}}), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"N", {{"mean", -1}}}}), Error);

  auto c = ExperimentConfig::from_json(json{{"subcommand", "mean"}, {"n_grid", {100, 50}}, {"bogus", 1}});
  const auto ds = validate(c);
  CHECK(has_errors(ds));
  CHECK(has_code(ds, ErrorCode::InvalidConfig, Diagnostic::Severity::warning));  // unknown key
  bool seed_error = false, grid_error = false;
  for (const auto& d : ds) {
    seed_error |= d.message.find("master_seed") != std::string::npos;
    grid_error |= d.message.find("increasing") != std::string::npos;
  }
  CHECK(seed_error);
  CHECK(grid_error);

  c.master_seed = 1;
  c.out = scratch("invalid").string();
  const auto r = run(c);
  CHECK(r.exit_code == 1);
  CHECK_FALSE(fs::exists(c.out));

  auto tail = ExperimentConfig::from_json(json{{"subcommand", "tail"}, {"n_grid", {10}}, {"theta", 4.0}, {"master_seed", 1}});
  CHECK(has_code(validate(tail), ErrorCode::RegimeViolation, Diagnostic::Severity::warning));
  tail.theta = 0.5;
  CHECK(has_errors(validate(tail)));

  auto wide = ExperimentConfig::from_json(json{{"subcommand", "tail"}, {"n_grid", {1000}}, {"theta", 50}, {"master_seed", 1}});
  CHECK(has_code(validate(wide), ErrorCode::RegimeViolation, Diagnostic::Severity::warning));
  CHECK_FALSE(has_errors(validate(wide)));

  auto empty = ExperimentConfig::from_json(json{{"subcommand", "mean"}, {"master_seed", 1}});
  CHECK(has_code(validate(empty), ErrorCode::InvalidConfig, Diagnostic::Severity::error));

  auto huge_beta = ExperimentConfig::from_json(
      json{{"subcommand", "blocks"}, {"n_grid", {1000}}, {"theta", 2.0}, {"beta_grid", {10.0}}, {"master_seed", 1}});
  CHECK(has_code(validate(huge_beta), ErrorCode::DegenerateBlocks, Diagnostic::Severity::error));

  auto blocks = ExperimentConfig::from_json(
      json{{"subcommand", "blocks"}, {"n_grid", {1000}}, {"theta", 3.0}, {"beta_grid", {4.0}}, {"master_seed", 1}});
  CHECK(has_code(validate(blocks), ErrorCode::DegenerateBlocks, Diagnostic::Severity::error));
}

TEST_CASE("seed plan is fixed by task ids") {
  auto c = ExperimentConfig::from_json(json{{"subcommand", "blocks"},
                                            {"n_grid", {10000, 20000}},
                                            {"beta_grid", {1.0, 2.0}},
                                            {"master_seed", 99}});
  const auto plan = seed_plan(c);
  REQUIRE(plan.size() == 4);
  CHECK(plan[1].id == "blocks/n=10000/beta=2");
  std::set<std::uint64_t> idx;
  for (const auto& t : plan) idx.insert(t.seed.task_index);
  CHECK(idx.size() == 4);

  // dropping part of the grid leaves the remaining streams unchanged
  c.n_grid = {20000};
  const auto sub = seed_plan(c);
  CHECK(sub[0].id == plan[2].id);
  CHECK(sub[0].seed.task_index == plan[2].seed.task_index);
  c.workers = 8;
  c.out = "elsewhere";
  CHECK(seed_plan(c)[0].seed.task_index == plan[2].seed.task_index);
  const auto h = c.hash();
  c.workers = 1;
  CHECK(c.hash() == h);
  c.theta = 2.5;
  CHECK(c.hash() != h);
}

TEST_CASE("mean run writes artifacts and a manifest, and resumes without recompute") {
  const auto out = scratch("mean");
  auto c = mean_config(out);
  const auto first = run(c);
  REQUIRE(first.exit_code == 0);
  CHECK(first.computed == 2);
  CHECK(first.reused == 0);
  const auto rows = csv::parse(csv::read_file((out / "mean_range.csv").string()));
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][1] == "1000");
  CHECK(rows[2][1] == "10000");
  CHECK(std::stod(rows[2][3]) > std::stod(rows[1][3]));
  REQUIRE(fs::exists(out / "manifest_mean.json"));
  const auto manifest = RunManifest::from_json(json::parse(csv::read_file((out / "manifest_mean.json").string())));
  CHECK(manifest.config_hash == c.hash());
  REQUIRE(manifest.tasks.size() == 2);
  CHECK(manifest.tasks[0].done);

  const auto before = csv::read_file((out / "mean_range.csv").string());
  const auto second = run(c);
  CHECK(second.exit_code == 0);
  CHECK(second.computed == 0);
  CHECK(second.reused == 2);
  CHECK(csv::read_file((out / "mean_range.csv").string()) == before);

  // a damaged task file is detected and recomputed to the same bytes
  const auto damaged = out / "tasks" / manifest.tasks[1].outputs.begin()->first;
  csv::write_file(damaged.string(), "garbage\n");
  const auto third = run(c);
  CHECK(third.computed == 1);
  CHECK(third.reused == 1);
  CHECK(csv::read_file((out / "mean_range.csv").string()) == before);

  // another config hash recomputes everything
  c.N.mean = 2500;
  CHECK(run(c).computed == 2);
}

TEST_CASE("results do not depend on the worker count") {
  const auto a = scratch("w1");
  const auto b = scratch("w8");
  auto c = ExperimentConfig::from_json(json{{"subcommand", "tail"},
                                            {"n_grid", {40, 60}},
                                            {"theta", 1.3},
                                            {"particles", 100},
                                            {"replications", 2},
                                            {"schedule_slope", 0.5},
                                            {"N", {{"mean", 1000}, {"tail_naive", 2000}}},
                                            {"master_seed", 3}});
  c.out = a.string();
  c.workers = 1;
  REQUIRE(run(c).exit_code == 0);
  c.out = b.string();
  c.workers = 8;
  REQUIRE(run(c).exit_code == 0);
  for (const char* f : {"tail.csv", "tail_fit.json", "mean_table.csv"}) {
    CHECK(csv::read_file((a / f).string()) == csv::read_file((b / f).string()));
  }
  const auto rows = csv::parse(csv::read_file((a / "tail.csv").string()));
  CHECK(rows.size() == 5);  // header, splitting and naive for both n
}

TEST_CASE("report is gnuplot-ready and tracks its inputs") {
  const auto out = scratch("report");
  auto c = mean_config(out);
  REQUIRE(run(c).exit_code == 0);
  c.subcommand = "report";
  const auto r = run(c);
  REQUIRE(r.exit_code == 0);
  const auto text = csv::read_file((out / "report.dat").string());
  CHECK(text.rfind("# n r_hat expansion", 0) == 0);
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  CHECK(lines == 3);
  CHECK(text.find(',') == std::string::npos);
  CHECK(run(c).computed == 0);

  c.subcommand = "mean";
  c.n_grid = {1000, 10000, 20000};
  REQUIRE(run(c).exit_code == 0);
  c.subcommand = "report";
  CHECK(run(c).computed == 1);
}

TEST_CASE("a failing task yields a partial failure and keeps the others") {
  const auto out = scratch("partial");
  // a 20-walk table entry is too noisy to centre the scaled samples
  auto c = ExperimentConfig::from_json(json{{"subcommand", "clt"},
                                            {"n_grid", {1000}},
                                            {"N", {{"mean", 20}, {"clt", 1000}}},
                                            {"master_seed", 5}});
  c.out = out.string();
  const auto r = run(c);
  CHECK(r.exit_code == 2);
  CHECK(r.failed == 1);
  REQUIRE(r.manifest.tasks.size() == 1);
  CHECK(r.manifest.tasks[0].attempts == 2);
  CHECK_FALSE(r.manifest.tasks[0].error.empty());
  CHECK(has_code(r.diagnostics, ErrorCode::PartialFailure, Diagnostic::Severity::error));
}
