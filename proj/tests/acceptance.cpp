// Acceptance suite. `acceptance [criterion ...]` runs the listed criteria
// (all of 1..9 by default), prints one PASS/FAIL line each and exits
// non-zero when any of them fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rangelab/blocks.hpp"
#include "rangelab/csv.hpp"
#include "rangelab/harness.hpp"
#include "rangelab/moment.hpp"
#include "rangelab/range.hpp"
#include "rangelab/rate.hpp"
#include "rangelab/stats.hpp"
#include "rangelab/tail.hpp"

using namespace rangelab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// MC law of R_n against the exact law for n <= 10.
Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = simple_random_walk();
  constexpr std::uint64_t N = 100000;
  constexpr std::size_t max_n = 10;
  // one simultaneous 95% level over every tail P(R_n >= k), k = 2..n+1
  const std::size_t tails = max_n * (max_n + 1) / 2;
  const double z = normal_quantile_two_sided(1.0 - 0.05 / static_cast<double>(tails));
  double worst_tv = 0.0;
  std::size_t tail_misses = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto exact = exact_pmf(d, n);
    const auto ranges = sample_ranges(d, n, N, {101, n});
    std::map<std::size_t, std::uint64_t> counts;
    for (auto r : ranges) ++counts[r];
    double tv = 0.0;
    for (std::size_t k = 1; k <= n + 1; ++k) {
      const double p = exact.probability(k);
      const double q = static_cast<double>(counts[k]) / static_cast<double>(N);
      tv += std::abs(p - q);
    }
    worst_tv = std::max(worst_tv, 0.5 * tv);
    for (std::size_t k = 2; k <= n + 1; ++k) {
      std::uint64_t hits = 0;
      for (const auto& [r, c] : counts) hits += r >= k ? c : 0;
      const auto ci = wilson_interval(hits, N, z);
      const double p = exact.tail_at_least(k).convert_to<double>();
      if (p < ci.low || p > ci.high) ++tail_misses;
    }
  }
  const auto two = exact_pmf(d, 2);
  const bool closed = two.pmf.at(2) == Rational(1, 4) && two.mean() == Rational(11, 4);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_tv < 0.01 && tail_misses == 0 && closed && secs < 60.0;
  o.detail = "max TV " + fmt("%.4f", worst_tv) + " (< 0.01), tails outside Wilson CI " +
             std::to_string(tail_misses) + "/" + std::to_string(tails) + " (z " + fmt("%.2f", z) +
             "), P(R_2=2)=1/4 and E[R_2]=11/4 " + (closed ? "exact" : "WRONG") + ", " + fmt("%.1f", secs) + " s";
  return o;
}

// I^(k,k+1) = R^(k) + R^(k+1) - R over both blocks, with no integer slack.
Outcome intersection_identity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = simple_random_walk();
  std::uint64_t violations = 0, checked = 0;
  std::string means;
  for (std::size_t m : {10u, 100u, 1000u}) {
    const auto rep = intersection_mean_check(d, m, 10000, {102, m});
    violations += rep.identity_violations;
    checked += rep.N;
    means += " m=" + std::to_string(m) + ": E[I] " + fmt("%.2f", rep.mean_intersection) + " vs 2r_m-r_2m " +
             fmt("%.2f", rep.identity_mean) + ";";
    // later block pairs on longer paths
    for (std::uint64_t i = 0; i < 200; ++i) {
      const auto path = sample_path(d, 4 * m - 1, {103, m * 1000 + i});
      for (std::size_t k = 1; k <= 3; ++k) {
        const auto a = window_range(path, (k - 1) * m, k * m).range;
        const auto b = window_range(path, k * m, (k + 1) * m).range;
        const auto ab = window_range(path, (k - 1) * m, (k + 1) * m).range;
        ++checked;
        if (block_intersection(path, k, m).size + ab != a + b) ++violations;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 60.0, std::to_string(violations) + " violations over " +
                                              std::to_string(checked) + " block pairs;" + means + " " +
                                              fmt("%.1f", secs) + " s"};
}

// Two-term mean expansion against the leading term.
Outcome mean_expansion() {
  const auto d = simple_random_walk();
  const auto cov = covariance(d);
  bool pass = true;
  std::string detail;
  for (std::size_t n : {10000u, 100000u, 1000000u}) {
    const auto e = mc_mean_range(d, n, 100000, {104, n});
    const double two = expansion_r(cov, n);
    const double one = leading_term_r(cov, n);
    const double ln = std::log(static_cast<double>(n));
    const double rel = e.r_hat * ln / (cov.e1 * static_cast<double>(n)) - 1.0;
    const bool closer = std::abs(e.r_hat - two) < std::abs(e.r_hat - one);
    const bool band = rel > 0.3 / ln && rel < 3.0 / ln;
    pass = pass && closer && band;
    detail += " n=" + std::to_string(n) + ": r_hat " + fmt("%.1f", e.r_hat) + " +- " + fmt("%.1f", e.std_error) +
              ", |r-exp2| " + fmt("%.1f", std::abs(e.r_hat - two)) + (closer ? " < " : " >= ") + "|r-lead| " +
              fmt("%.1f", std::abs(e.r_hat - one)) + ", rel*log n " + fmt("%.3f", rel * ln) +
              (band ? " in" : " NOT in") + " (0.3, 3);";
  }
  return {pass, detail};
}

ScaledSampleSet scaled_at(const StepDistribution& d, std::size_t n, std::uint64_t N, std::uint64_t seed) {
  const auto table_entry = mc_mean_range(d, n, 100000, {seed, n});
  return scaled_samples(d, n, N, {seed + 1, n}, Centering::from_table(table_entry));
}

Outcome clt_stability() {
  const auto d = simple_random_walk();
  const auto a = scaled_at(d, 100000, 10000, 105);
  const auto b = scaled_at(d, 400000, 10000, 105);
  const double ks = ks_distance(a.values, b.values);
  const double sa = sample_skewness(a.values), sb = sample_skewness(b.values);
  return {ks < 0.1 && sa < 0 && sb < 0, "KS(1e5, 4e5) " + fmt("%.4f", ks) + " (< 0.1), skewness " +
                                            fmt("%.3f", sa) + " and " + fmt("%.3f", sb) + " (< 0)"};
}

Outcome rate_constants() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto fixture = solve_rate_constants(
      curve_from_function(uniform_grid(0.0, 5.0, 0.05), [](double l) { return 0.5 * l * l; }));
  const double fixture_secs = seconds_since(t0);
  const bool fx = std::abs(fixture.b0 - 2.0) < 1e-4 && std::abs(fixture.beta0 - 2.0) < 1e-4 &&
                  std::abs(fixture.tilde_lambda_direct - 2.0 * std::exp(-3.0)) < 1e-4 &&
                  std::abs(fixture.tilde_lambda_direct - std::exp(-(fixture.beta0 + 1.0)) * fixture.b0) < 1e-6 &&
                  fixture_secs < 1.0;
  std::string detail = "fixture b0 " + fmt("%.6f", fixture.b0) + ", beta0 " + fmt("%.6f", fixture.beta0) +
                       ", tilde " + fmt("%.7f", fixture.tilde_lambda_direct) + " vs 2e^-3 " +
                       fmt("%.7f", 2.0 * std::exp(-3.0)) + ", " + fmt("%.3f", fixture_secs) + " s;";
  const auto d = simple_random_walk();
  const auto set = scaled_at(d, 100000, 10000, 106);
  bool emp = false;
  try {
    const auto sol = solve_rate_constants(log_mgf(set.values, uniform_grid(-1.0, 2.0, 0.02), set.n));
    emp = sol.optimality_residual < 0.05;
    detail += " empirical n=1e5: b0 " + fmt("%.4f", sol.b0) + ", beta0 " + fmt("%.4f", sol.beta0) +
              ", optimality residual " + fmt("%.2e", sol.optimality_residual) + " (< 0.05)";
  } catch (const Error& e) {
    detail += std::string(" empirical curve: ") + e.what();
  }
  return {fx && emp, detail};
}

Outcome headline_exponent() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = simple_random_walk();
  std::vector<TailEstimate> estimates;
  std::string detail;
  for (std::size_t k = 10; k <= 16; ++k) {
    const std::size_t n = std::size_t{1} << k;
    const auto r = mc_mean_range(d, n, 20000, {107, n});
    SplittingOptions o;
    o.replications = 10;
    o.particles = 1000;
    const auto e = splitting_tail(d, n, 2.0, r.r_hat, o, {108, n});
    estimates.push_back(e);
    detail += " n=2^" + std::to_string(k) + ": log p " + fmt("%.2f", e.log_p_hat) + ";";
    std::fprintf(stderr, "  n=%zu log p %.3f [%.3f, %.3f] slope %.3f, %.0f s elapsed\n", n, e.log_p_hat,
                 e.log_ci_low, e.log_ci_high, e.schedule_slope, seconds_since(t0));
  }
  try {
    const auto fit = fit_exponent(estimates, 2.0);
    const bool pass = std::abs(fit.slope - 0.5) <= 0.15 && fit.c_low_emp >= fit.c_up_emp && fit.c_up_emp > 0 &&
                      fit.n_grid.size() == 7;
    return {pass, "slope " + fmt("%.4f", fit.slope) + " +- " + fmt("%.4f", fit.slope_stderr) +
                      " (0.5 +- 0.15), c_low_emp " + fmt("%.4f", fit.c_low_emp) + " >= c_up_emp " +
                      fmt("%.4f", fit.c_up_emp) + " > 0, " + std::to_string(fit.n_grid.size()) +
                      "/7 informative;" + detail + " " + fmt("%.0f", seconds_since(t0)) + " s"};
  } catch (const Error& e) {
    return {false, std::string("fit failed: ") + e.what() + ";" + detail};
  }
}

Outcome splitting_validity() {
  const auto d = simple_random_walk();
  constexpr std::size_t n = 10000;
  const auto r = mc_mean_range(d, n, 20000, {109, n});
  int overlaps = 0;
  std::string detail;
  for (std::uint64_t i = 0; i < 10; ++i) {
    SplittingOptions o;
    const auto s = splitting_tail(d, n, 1.05, r.r_hat, o, SeedRecord{110, i});
    const auto v = naive_tail(d, n, 1.05, r.r_hat, 20000, SeedRecord{111, i});
    const bool overlap = s.ci_low <= v.ci_high && v.ci_low <= s.ci_high;
    overlaps += overlap;
    detail += " " + fmt("%.4f", s.p_hat) + "/" + fmt("%.4f", v.p_hat) + (overlap ? "" : "!");
  }
  return {overlaps >= 9, std::to_string(overlaps) + "/10 paired 95% CIs overlap (>= 9); splitting/naive p:" + detail};
}

Outcome lower_bound_strategy() {
  const auto d = simple_random_walk();
  constexpr std::size_t n = 100000;
  constexpr double theta = 1.2;
  MeanTable table;
  constexpr std::uint64_t seed = 112;
  // smallest beta on the grid whose eta probability clears 3/4
  std::optional<double> beta;
  std::string detail;
  for (double b : {1.5, 2.0, 2.5, 3.0, 3.5}) {
    const auto p = make_block_params(BlockRegime::lower, n, theta, b);
    const auto& r_m = table.ensure(d, p.m - 1, 10000, seed);
    const auto rep = estimate_event_probs(d, p.m, b, 10000, {seed, 1000 + p.m}, r_m);
    detail += " beta " + fmt("%.1f", b) + " (m " + std::to_string(p.m) + "): P(eta=1|BB) " +
              fmt("%.3f", rep.p_eta_given_BB.estimate) + ";";
    if (rep.p_eta_given_BB.low > 0.75) {
      beta = b;
      break;
    }
  }
  if (!beta) return {false, "no beta with P(eta=1|BB) > 3/4;" + detail};
  StrategyOptions so;
  so.samples = 1000;
  so.mean_samples = 10000;
  const auto s = strategy_implication_check(d, n, theta, *beta, so, {seed, 1}, table);
  const bool pass = s.decomposition_failures == 0 && s.disjointness_violations == 0 && s.b_failures == 0 &&
                    s.event_failures == 0 && s.implication.estimate >= 0.99;
  return {pass, "beta " + fmt("%.1f", *beta) + ", m " + std::to_string(s.params.m) + ", M " +
                    std::to_string(s.params.M) + ": decomposition failures " +
                    std::to_string(s.decomposition_failures) + ", disjointness violations " +
                    std::to_string(s.disjointness_violations) + ", implication " +
                    fmt("%.4f", s.implication.estimate) + " (>= 0.99, min R_n " + fmt("%.0f", s.min_range) +
                    " vs target " + fmt("%.0f", s.target) + "), acceptance " + fmt("%.3f", s.acceptance) + ";" +
                    detail};
}

Outcome determinism() {
  using nlohmann::json;
  const auto root = fs::temp_directory_path() / "rangelab_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<json> experiments = {
      {{"subcommand", "mean"}, {"n_grid", {100, 1000}}, {"N", {{"mean", 5000}}}},
      {{"subcommand", "clt"}, {"n_grid", {1000, 2000}}, {"N", {{"mean", 60000}, {"clt", 2000}}}},
      {{"subcommand", "rate"}, {"n_grid", {1000}}, {"N", {{"mean", 60000}, {"clt", 2000}, {"bootstrap", 50}}}},
      {{"subcommand", "tail"},
       {"n_grid", {64, 128, 256, 512}},
       {"theta", 1.5},
       {"particles", 200},
       {"replications", 3},
       {"N", {{"mean", 2000}, {"tail_naive", 2000}}}},
      {{"subcommand", "blocks"},
       {"n_grid", {20000}},
       {"theta", 1.2},
       {"beta_grid", {2.0}},
       {"N", {{"mean", 2000}, {"events", 2000}, {"strategy", 30}, {"chebyshev", 0}}}},
  };
  std::size_t compared = 0, differing = 0;
  std::string detail;
  for (const auto& doc : experiments) {
    auto c = ExperimentConfig::from_json(doc);
    c.master_seed = 113;
    std::map<std::string, std::string> reference;
    for (auto [label, workers] : {std::pair{"a1", 1u}, {"b8", 8u}, {"c1", 1u}}) {
      c.workers = workers;
      c.out = (root / (c.subcommand + "_" + label)).string();
      const auto r = run(c);
      if (r.exit_code != 0) return {false, c.subcommand + " run failed at workers " + std::to_string(workers)};
      for (const auto& entry : fs::recursive_directory_iterator(c.out)) {
        const auto ext = entry.path().extension();
        if (!entry.is_regular_file() || (ext != ".csv" && ext != ".json" && ext != ".dat")) continue;
        const auto rel = fs::relative(entry.path(), c.out).string();
        const auto bytes = csv::read_file(entry.path().string());
        if (reference.count(rel) == 0) {
          reference[rel] = bytes;
          continue;
        }
        ++compared;
        if (reference[rel] != bytes) {
          ++differing;
          detail += " " + c.subcommand + "/" + rel;
        }
      }
    }
  }
  fs::remove_all(root);
  return {differing == 0 && compared > 0, std::to_string(compared) + " output files compared across workers 1, 8, 1; " +
                                              std::to_string(differing) + " differ" + detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "oracle equivalence", oracle_equivalence},     {2, "intersection identity", intersection_identity},
      {3, "mean expansion", mean_expansion},             {4, "CLT stability", clt_stability},
      {5, "rate constants", rate_constants},             {6, "headline exponent", headline_exponent},
      {7, "splitting validity", splitting_validity},     {8, "lower-bound strategy", lower_bound_strategy},
      {9, "determinism", determinism},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoi(argv[i]));
  if (selected.empty()) {
    for (const auto& c : all) selected.push_back(c.id);
  }
  int failures = 0;
  for (int id : selected) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const Criterion& c) { return c.id == id; });
    if (it == all.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", id);
      return 2;
    }
    Outcome o;
    try {
      o = it->run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d %s: %s | %s\n", id, o.pass ? "PASS" : "FAIL", it->name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
