#include "rangelab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>

#include "rangelab/blocks.hpp"
#include "rangelab/csv.hpp"
#include "rangelab/moment.hpp"
#include "rangelab/rate.hpp"
#include "rangelab/stats.hpp"

namespace fs = std::filesystem;

namespace rangelab {

namespace {

using json = nlohmann::json;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

template <class T>
T get_as(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    invalid(std::string("key '") + key + "': " + e.what());
  }
}

const std::set<std::string> kKnownKeys = {
    "subcommand", "dist",       "n_grid",     "theta",      "beta_grid",        "N",
    "particles",  "kill_fraction", "replications", "pivot", "schedule_slope",   "lambda_min",
    "lambda_max", "lambda_step", "chebyshev_lambda", "min_scaled_n", "master_seed", "workers", "out"};

std::string file_stem(const std::string& id) {
  std::string s;
  for (char c : id) {
    if (c == '/') s += '_';
    else if (c != '=') s += c;
  }
  return s;
}

std::string fmt_beta(double b) { return csv::num(b); }

struct Context {
  const ExperimentConfig& config;
  const StepDistribution& dist;
  const MeanTable& table;
  unsigned workers = 1;
  fs::path out;
};

using Outputs = std::map<std::string, std::string>;

std::string mean_header() { return "dist_id,n,N,r_hat,stderr,expansion,leading,master_seed"; }

Outputs run_mean(const Task& t, Context& cx) {
  MeanTable local = cx.table;
  const auto& e = local.ensure(cx.dist, t.n, cx.config.N.mean, *cx.config.master_seed, cx.workers);
  const auto cov = covariance(cx.dist);
  const std::string row = e.dist_id + ',' + std::to_string(e.n) + ',' + std::to_string(e.samples) + ',' +
                          csv::num(e.r_hat) + ',' + csv::num(e.std_error) + ',' +
                          (t.n >= 2 ? csv::num(expansion_r(cov, t.n)) : std::string("nan")) + ',' +
                          (t.n >= 2 ? csv::num(leading_term_r(cov, t.n)) : std::string("nan")) + ',' +
                          std::to_string(e.master_seed) + '\n';
  return {{file_stem(t.id) + ".csv", row}};
}

ScaledSampleSet scaled_for(const Task& t, Context& cx) {
  MeanTable local = cx.table;
  const auto& entry = local.ensure(cx.dist, t.n, cx.config.N.mean, *cx.config.master_seed, cx.workers);
  ScaledOptions opt;
  opt.min_n = cx.config.min_scaled_n;
  return scaled_samples(cx.dist, t.n, cx.config.N.clt, t.seed, Centering::from_table(entry), cx.workers, opt);
}

std::vector<double> lambda_grid(const ExperimentConfig& c) {
  return uniform_grid(c.lambda_min, c.lambda_max, c.lambda_step);
}

Outputs run_clt(const Task& t, Context& cx) {
  const auto set = scaled_for(t, cx);
  std::string values = "scaled\n";
  for (double v : set.values) values += csv::num(v) + '\n';
  RunningStats s;
  for (double v : set.values) s.add(v);
  const std::string row = std::to_string(t.n) + ',' + std::to_string(set.values.size()) + ',' +
                          csv::num(set.centering.r) + ',' + csv::num(set.centering.std_error) + ',' +
                          csv::num(s.mean) + ',' + csv::num(s.stddev()) + ',' +
                          csv::num(sample_skewness(set.values)) + '\n';
  const std::string stem = file_stem(t.id);
  return {{stem + "_samples.csv", values}, {stem + "_summary.csv", row}};
}

Outputs run_mgf(const Task& t, Context& cx, bool solve) {
  const auto set = scaled_for(t, cx);
  const auto curve = log_mgf(set.values, lambda_grid(cx.config), t.n);
  const std::string stem = file_stem(t.id);
  Outputs out{{stem + "_mgf.csv", curve.to_csv()}};
  if (!solve) {
    out[stem + "_summary.csv"] = std::to_string(t.n) + ',' + std::to_string(curve.N_used) + ',' +
                                 csv::num(curve.projection_shift) + ',' + (curve.convexity_flag ? "1" : "0") + '\n';
    return out;
  }
  json j;
  j["n"] = t.n;
  j["N"] = set.values.size();
  const auto sol = solve_rate_constants(curve);
  j["solution"] = json::parse(sol.to_json());
  if (cx.config.N.bootstrap > 0) {
    const auto bs = bootstrap_rate_constants(set.values, lambda_grid(cx.config), cx.config.N.bootstrap,
                                             t.seed.child(1));
    j["bootstrap"] = {{"resamples", bs.resamples},
                      {"failures", bs.failures},
                      {"b0", {bs.b0.low, bs.b0.high}},
                      {"beta0", {bs.beta0.low, bs.beta0.high}},
                      {"tilde_lambda", {bs.tilde_lambda.low, bs.tilde_lambda.high}}};
  }
  out[stem + ".json"] = j.dump(2) + '\n';
  out[stem + "_summary.csv"] = std::to_string(t.n) + ',' + csv::num(sol.b0) + ',' + csv::num(sol.beta0) + ',' +
                               csv::num(sol.tilde_lambda_direct) + ',' + csv::num(sol.tilde_lambda_closed) + ',' +
                               csv::num(sol.tilde_lambda_alt) + ',' + csv::num(sol.residual) + ',' +
                               csv::num(sol.optimality_residual) + '\n';
  return out;
}

SplittingOptions splitting_options(const ExperimentConfig& c) {
  SplittingOptions o;
  o.particles = c.particles;
  o.kill_fraction = c.kill_fraction;
  o.replications = c.replications;
  o.pivot = c.pivot;
  o.schedule_slope = c.schedule_slope;
  return o;
}

Outputs run_tail(const Task& t, Context& cx) {
  MeanTable local = cx.table;
  const double r = local.ensure(cx.dist, t.n, cx.config.N.mean, *cx.config.master_seed, cx.workers).r_hat;
  std::string rows;
  const auto split = splitting_tail(cx.dist, t.n, cx.config.theta, r, splitting_options(cx.config), t.seed.child(0),
                                    cx.workers);
  rows += split.csv_row() + '\n';
  if (cx.config.N.tail_naive > 0) {
    rows += naive_tail(cx.dist, t.n, cx.config.theta, r, cx.config.N.tail_naive, t.seed.child(1), cx.workers)
                .csv_row() +
            '\n';
  }
  return {{file_stem(t.id) + ".csv", rows}};
}

std::string events_header() {
  return "regime,n,theta,beta,m,M," + EventProbReport::csv_header() + ",log_certificate";
}

Outputs run_blocks(const Task& t, Context& cx) {
  const auto& c = cx.config;
  const double beta = *t.beta;
  MeanTable local = cx.table;
  const auto low = make_block_params(BlockRegime::lower, t.n, c.theta, beta);
  json j;
  j["n"] = t.n;
  j["theta"] = c.theta;
  j["beta"] = beta;
  j["m"] = low.m;
  j["M"] = low.M;
  Outputs out;
  const std::string stem = file_stem(t.id);
  if (c.N.events > 0) {
    const auto& r_m = local.ensure(cx.dist, low.m - 1, c.N.mean, *c.master_seed, cx.workers);
    const auto rep = estimate_event_probs(cx.dist, low.m, beta, c.N.events, t.seed.child(0), r_m, cx.workers);
    std::string cert = "nan";
    try {
      const double lc = lower_bound_certificate(low, rep);
      cert = csv::num(lc);
      j["log_certificate"] = lc;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BoundNotApplicable) throw;
      j["log_certificate"] = nullptr;
      j["certificate_note"] = e.what();
    }
    out[stem + "_events.csv"] = "lower," + std::to_string(t.n) + ',' + csv::num(c.theta) + ',' + fmt_beta(beta) +
                                ',' + std::to_string(low.m) + ',' + std::to_string(low.M) + ',' + rep.csv_row() +
                                ',' + cert + '\n';
    j["p_B"] = rep.p_B.estimate;
    j["p_B_exact"] = rep.p_B_exact;
    j["p_E"] = rep.p_E.estimate;
    j["p_I"] = rep.p_I.estimate;
    j["p_eta_given_BB"] = rep.p_eta_given_BB.estimate;
  }
  if (c.N.strategy > 0) {
    StrategyOptions so;
    so.samples = c.N.strategy;
    so.mean_samples = c.N.mean;
    j["strategy"] = json::parse(
        strategy_implication_check(cx.dist, t.n, c.theta, beta, so, t.seed.child(1), local, cx.workers).to_json());
  }
  if (c.N.chebyshev > 0) {
    ChebyshevOptions co;
    co.blocks = c.N.chebyshev;
    co.mean_samples = c.N.mean;
    j["chebyshev"] = json::parse(upper_chebyshev_probe(cx.dist, t.n, c.theta, beta, c.chebyshev_lambda,
                                                       t.seed.child(2), local, co, cx.workers)
                                     .to_json());
  }
  out[stem + ".json"] = j.dump(2) + '\n';
  return out;
}

std::string read_or_empty(const fs::path& p) { return fs::exists(p) ? csv::read_file(p.string()) : std::string(); }

std::string report_inputs_digest(const fs::path& out) {
  std::string all;
  for (const char* f : {"mean_range.csv", "tail.csv", "tail_fit.json"}) all += csv::checksum(read_or_empty(out / f));
  return csv::checksum(all);
}

Outputs run_report(const Task&, Context& cx) {
  struct Row {
    double r_hat = NAN, expansion = NAN, p_hat = NAN, log_p = NAN;
  };
  std::map<std::size_t, Row> rows;
  const auto mean_rows = csv::parse(read_or_empty(cx.out / "mean_range.csv"));
  for (std::size_t i = 1; i < mean_rows.size(); ++i) {
    const auto& r = mean_rows[i];
    if (r.size() < 6) continue;
    auto& row = rows[std::stoull(r[1])];
    row.r_hat = std::stod(r[3]);
    row.expansion = std::stod(r[5]);
  }
  const auto tail_rows = csv::parse(read_or_empty(cx.out / "tail.csv"));
  for (std::size_t i = 1; i < tail_rows.size(); ++i) {
    const auto& r = tail_rows[i];
    if (r.size() < 11 || r[3] != "splitting") continue;
    auto& row = rows[std::stoull(r[1])];
    row.p_hat = std::stod(r[4]);
    row.log_p = std::stod(r[10]);
  }
  double theta = cx.config.theta;
  std::optional<double> c_mid;
  if (const auto fit_text = read_or_empty(cx.out / "tail_fit.json"); !fit_text.empty()) {
    const auto fit = json::parse(fit_text);
    if (fit.contains("theta")) theta = fit["theta"].get<double>();
    if (fit.contains("c_low_emp") && fit.contains("c_up_emp")) {
      c_mid = std::sqrt(fit["c_low_emp"].get<double>() * fit["c_up_emp"].get<double>());
    }
  }
  std::string text = "# n r_hat expansion p_hat log_p_hat predicted_exponent predicted_log_p\n";
  for (const auto& [n, row] : rows) {
    const double pred = std::pow(static_cast<double>(n), 1.0 - 1.0 / theta);
    text += std::to_string(n) + ' ' + csv::num(row.r_hat) + ' ' + csv::num(row.expansion) + ' ' +
            csv::num(row.p_hat) + ' ' + csv::num(row.log_p) + ' ' + csv::num(pred) + ' ' +
            (c_mid ? csv::num(-*c_mid * pred) : std::string("nan")) + '\n';
  }
  return {{"report.dat", text}};
}

Outputs execute(const Task& t, Context& cx) {
  const std::string& sub = cx.config.subcommand;
  if (sub == "mean") return run_mean(t, cx);
  if (sub == "clt") return run_clt(t, cx);
  if (sub == "mgf") return run_mgf(t, cx, false);
  if (sub == "rate") return run_mgf(t, cx, true);
  if (sub == "tail") return run_tail(t, cx);
  if (sub == "blocks") return run_blocks(t, cx);
  return run_report(t, cx);
}

// Concatenates the task files whose name ends in `suffix`, in plan order.
std::string gather(const RunManifest& m, const fs::path& dir, const std::string& suffix) {
  std::string out;
  for (const auto& rec : m.tasks) {
    if (!rec.done) continue;
    for (const auto& [name, sum] : rec.outputs) {
      if (name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        out += csv::read_file((dir / name).string());
      }
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> merge(const ExperimentConfig& c, const RunManifest& m,
                                                       const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  const std::string& sub = c.subcommand;
  if (sub == "mean") {
    out.emplace_back("mean_range.csv", mean_header() + '\n' + gather(m, dir, ".csv"));
  } else if (sub == "clt") {
    out.emplace_back("clt_summary.csv",
                     "n,N,centering,centering_stderr,mean,sd,skewness\n" + gather(m, dir, "_summary.csv"));
    // KS distance between consecutive n of the grid
    std::string ks = "n_a,n_b,ks\n";
    std::optional<std::pair<std::size_t, std::vector<double>>> prev;
    for (const auto& rec : m.tasks) {
      if (!rec.done) continue;
      const auto name = file_stem(rec.id) + "_samples.csv";
      const auto rows = csv::parse(csv::read_file((dir / name).string()));
      std::vector<double> v;
      for (std::size_t i = 1; i < rows.size(); ++i) v.push_back(std::stod(rows[i][0]));
      const std::size_t n = std::stoull(rec.id.substr(rec.id.find("n=") + 2));
      if (prev) {
        ks += std::to_string(prev->first) + ',' + std::to_string(n) + ',' + csv::num(ks_distance(prev->second, v)) +
              '\n';
      }
      prev.emplace(n, std::move(v));
    }
    out.emplace_back("clt_ks.csv", ks);
  } else if (sub == "mgf") {
    out.emplace_back("mgf_summary.csv", "n,N,projection_shift,convexity_flag\n" + gather(m, dir, "_summary.csv"));
  } else if (sub == "rate") {
    out.emplace_back("rate.csv",
                     "n,b0,beta0,tilde_lambda_direct,tilde_lambda_closed,tilde_lambda_alt,residual,"
                     "optimality_residual\n" +
                         gather(m, dir, "_summary.csv"));
  } else if (sub == "tail") {
    const std::string body = gather(m, dir, ".csv");
    out.emplace_back("tail.csv", TailEstimate::csv_header() + '\n' + body);
    std::vector<TailEstimate> split;
    for (const auto& r : csv::parse(body)) {
      if (r.size() < 13 || r[3] != "splitting") continue;
      TailEstimate e;
      e.n = std::stoull(r[1]);
      e.theta = std::stod(r[2]);
      e.p_hat = std::stod(r[4]);
      e.ci_low = std::stod(r[5]);
      e.ci_high = std::stod(r[6]);
      e.log_p_hat = std::stod(r[10]);
      e.log_ci_low = std::stod(r[11]);
      e.log_ci_high = std::stod(r[12]);
      split.push_back(e);
    }
    json fit;
    try {
      fit = json::parse(fit_exponent(split, c.theta).to_json());
    } catch (const Error& e) {
      fit = {{"theta", c.theta}, {"error", e.what()}};
    }
    out.emplace_back("tail_fit.json", fit.dump(2) + '\n');
  } else if (sub == "blocks") {
    out.emplace_back("events.csv", events_header() + '\n' + gather(m, dir, "_events.csv"));
    json all = json::array();
    for (const auto& rec : m.tasks) {
      if (rec.done) all.push_back(json::parse(csv::read_file((dir / (file_stem(rec.id) + ".json")).string())));
    }
    out.emplace_back("blocks.json", all.dump(2) + '\n');
  } else {
    out.emplace_back("report.dat", gather(m, dir, ".dat"));
  }
  return out;
}

bool outputs_intact(const TaskRecord& rec, const fs::path& dir) {
  for (const auto& [name, sum] : rec.outputs) {
    const auto p = dir / name;
    if (!fs::exists(p) || csv::checksum(csv::read_file(p.string())) != sum) return false;
  }
  return true;
}

}  // namespace

std::string to_string(Diagnostic::Severity s) { return s == Diagnostic::Severity::error ? "error" : "warning"; }

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  if (!doc.is_object()) invalid("config must be a JSON object");
  ExperimentConfig c;
  c.subcommand = get_as<std::string>(doc, "subcommand", "");
  if (doc.contains("dist")) c.dist = doc["dist"];
  c.n_grid = get_as<std::vector<std::size_t>>(doc, "n_grid", {});
  c.theta = get_as<double>(doc, "theta", c.theta);
  c.beta_grid = get_as<std::vector<double>>(doc, "beta_grid", {});
  if (doc.contains("N")) {
    const auto& b = doc["N"];
    if (!b.is_object()) invalid("'N' must be an object of budgets");
    for (const auto& [key, value] : b.items()) {
      static const std::set<std::string> known = {"mean", "clt", "tail_naive", "events", "strategy", "chebyshev",
                                                  "bootstrap"};
      if (!known.count(key)) c.unknown_keys.push_back("N." + key);
      if (!value.is_number_integer() || value.get<std::int64_t>() < 0) invalid("budget N." + key + " must be a non-negative integer");
    }
    c.N.mean = get_as<std::uint64_t>(b, "mean", c.N.mean);
    c.N.clt = get_as<std::uint64_t>(b, "clt", c.N.clt);
    c.N.tail_naive = get_as<std::uint64_t>(b, "tail_naive", c.N.tail_naive);
    c.N.events = get_as<std::uint64_t>(b, "events", c.N.events);
    c.N.strategy = get_as<std::uint64_t>(b, "strategy", c.N.strategy);
    c.N.chebyshev = get_as<std::uint64_t>(b, "chebyshev", c.N.chebyshev);
    c.N.bootstrap = get_as<std::uint64_t>(b, "bootstrap", c.N.bootstrap);
  }
  c.particles = get_as<std::size_t>(doc, "particles", c.particles);
  c.kill_fraction = get_as<double>(doc, "kill_fraction", c.kill_fraction);
  c.replications = get_as<std::size_t>(doc, "replications", c.replications);
  if (doc.contains("pivot")) {
    try {
      c.pivot = pivot_rule_from_string(get_as<std::string>(doc, "pivot", ""));
    } catch (const Error& e) {
      invalid(e.what());
    }
  }
  if (doc.contains("schedule_slope") && !doc["schedule_slope"].is_null()) {
    c.schedule_slope = get_as<double>(doc, "schedule_slope", 0.0);
  }
  c.lambda_min = get_as<double>(doc, "lambda_min", c.lambda_min);
  c.lambda_max = get_as<double>(doc, "lambda_max", c.lambda_max);
  c.lambda_step = get_as<double>(doc, "lambda_step", c.lambda_step);
  c.chebyshev_lambda = get_as<double>(doc, "chebyshev_lambda", c.chebyshev_lambda);
  c.min_scaled_n = get_as<std::size_t>(doc, "min_scaled_n", c.min_scaled_n);
  if (doc.contains("master_seed")) {
    const auto& s = doc["master_seed"];
    if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<std::int64_t>() < 0)) invalid("master_seed must be a non-negative integer");
    c.master_seed = doc["master_seed"].get<std::uint64_t>();
  }
  c.workers = get_as<unsigned>(doc, "workers", c.workers);
  c.out = get_as<std::string>(doc, "out", c.out);
  for (const auto& [key, value] : doc.items()) {
    if (!kKnownKeys.count(key)) c.unknown_keys.push_back(key);
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::string text;
  try {
    text = csv::read_file(path);
  } catch (const Error& e) {
    invalid(e.what());
  }
  try {
    return from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    invalid("cannot parse " + path + ": " + e.what());
  }
}

json ExperimentConfig::hash_document() const {
  json j;
  j["subcommand"] = subcommand;
  j["dist"] = dist;
  j["n_grid"] = n_grid;
  j["theta"] = theta;
  j["beta_grid"] = beta_grid;
  j["N"] = {{"mean", N.mean},         {"clt", N.clt},           {"tail_naive", N.tail_naive},
            {"events", N.events},     {"strategy", N.strategy}, {"chebyshev", N.chebyshev},
            {"bootstrap", N.bootstrap}};
  j["particles"] = particles;
  j["kill_fraction"] = kill_fraction;
  j["replications"] = replications;
  j["pivot"] = to_string(pivot);
  j["schedule_slope"] = schedule_slope ? json(*schedule_slope) : json(nullptr);
  j["lambda_min"] = lambda_min;
  j["lambda_max"] = lambda_max;
  j["lambda_step"] = lambda_step;
  j["chebyshev_lambda"] = chebyshev_lambda;
  j["min_scaled_n"] = min_scaled_n;
  j["master_seed"] = master_seed ? json(*master_seed) : json(nullptr);
  return j;
}

json ExperimentConfig::to_json() const {
  json j = hash_document();
  j["workers"] = workers;
  j["out"] = out;
  return j;
}

std::string ExperimentConfig::hash() const { return csv::checksum(hash_document().dump()); }

StepDistribution ExperimentConfig::distribution() const {
  try {
    if (dist.is_string()) {
      const auto name = dist.get<std::string>();
      if (name == "simple") return simple_random_walk();
      if (name == "diagonal") return diagonal_walk();
      invalid("unknown distribution name '" + name + "'");
    }
    if (dist.is_object() && dist.contains("file")) return load_distribution(dist["file"].get<std::string>());
    if (dist.is_object()) return distribution_from_json(dist);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidConfig) throw;
    invalid(std::string("distribution: ") + e.what());
  }
  invalid("'dist' must be a name or an object");
}

bool has_errors(const std::vector<Diagnostic>& diagnostics) {
  return std::any_of(diagnostics.begin(), diagnostics.end(),
                     [](const Diagnostic& d) { return d.severity == Diagnostic::Severity::error; });
}

std::vector<Diagnostic> validate(const ExperimentConfig& c) {
  std::vector<Diagnostic> out;
  auto error = [&](ErrorCode code, std::string msg) {
    out.push_back({Diagnostic::Severity::error, code, std::move(msg)});
  };
  auto warn = [&](ErrorCode code, std::string msg) {
    out.push_back({Diagnostic::Severity::warning, code, std::move(msg)});
  };
  if (std::find(kSubcommands.begin(), kSubcommands.end(), c.subcommand) == kSubcommands.end()) {
    error(ErrorCode::InvalidConfig, "unknown subcommand '" + c.subcommand + "'");
  }
  if (!c.master_seed) error(ErrorCode::InvalidConfig, "master_seed is mandatory");
  for (const auto& k : c.unknown_keys) warn(ErrorCode::InvalidConfig, "unknown key '" + k + "' ignored");
  std::optional<StepDistribution> dist;
  try {
    dist = c.distribution();
  } catch (const Error& e) {
    error(ErrorCode::InvalidConfig, e.what());
  }
  if (c.workers < 1) error(ErrorCode::InvalidConfig, "workers must be >= 1");
  if (c.subcommand == "report") return out;

  if (c.n_grid.empty()) error(ErrorCode::InvalidConfig, "n grid is empty");
  for (std::size_t i = 1; i < c.n_grid.size(); ++i) {
    if (c.n_grid[i] <= c.n_grid[i - 1]) {
      error(ErrorCode::InvalidConfig, "n grid must be strictly increasing");
      break;
    }
  }
  if (!c.n_grid.empty() && c.n_grid.front() < 1) error(ErrorCode::InvalidConfig, "n must be >= 1");
  if (c.N.mean < 1) error(ErrorCode::InvalidConfig, "N.mean must be positive");
  if (c.N.mean < 1000) warn(ErrorCode::InsufficientData, "N.mean < 1000 gives a noisy centering");

  const bool uses_theta = c.subcommand == "tail" || c.subcommand == "blocks";
  if (uses_theta) {
    if (!(c.theta >= 1.0)) error(ErrorCode::InvalidConfig, "theta must be >= 1");
    if (dist && c.theta >= 1.0) {
      const auto cov = covariance(*dist);
      for (std::size_t n : c.n_grid) {
        if (n >= 2 && c.theta * expansion_r(cov, n) > static_cast<double>(n)) {
          warn(ErrorCode::RegimeViolation, "theta * expansion_r(" + std::to_string(n) + ") = " +
                                               csv::num(c.theta * expansion_r(cov, n)) + " exceeds n");
        }
      }
    }
  }
  if (c.subcommand == "clt" || c.subcommand == "mgf" || c.subcommand == "rate") {
    if (c.N.clt < 1) error(ErrorCode::InvalidConfig, "N.clt must be positive");
    // the scaled sd of R_n is about 2.3 for the simple walk, so the scaled
    // centering error 2.3 / sqrt(N.mean) needs N.mean near 6e4
    if (c.N.mean < 60000) {
      warn(ErrorCode::InsufficientData, "N.mean = " + std::to_string(c.N.mean) +
                                            " probably leaves the centering too noisy (needs about 60000)");
    }
    if (c.N.clt < 1000) warn(ErrorCode::InsufficientData, "N.clt < 1000 under-powers the distribution checks");
    for (std::size_t n : c.n_grid) {
      if (n < c.min_scaled_n) {
        error(ErrorCode::InvalidConfig, "n = " + std::to_string(n) + " is below min_scaled_n");
      }
    }
    if (!(c.lambda_step > 0) || !(c.lambda_min <= 0 && c.lambda_max > 0)) {
      error(ErrorCode::InvalidConfig, "lambda grid must contain 0 and have a positive step");
    }
  }
  if (c.subcommand == "tail") {
    if (c.particles < 100) error(ErrorCode::InvalidConfig, "particles must be >= 100");
    if (!(c.kill_fraction > 0 && c.kill_fraction < 0.5)) error(ErrorCode::InvalidConfig, "kill_fraction must be in (0, 1/2)");
    if (c.replications < 1) error(ErrorCode::InvalidConfig, "replications must be >= 1");
    if (c.replications < 2) warn(ErrorCode::InsufficientData, "one replication gives no confidence interval");
    if (c.n_grid.size() < 4) warn(ErrorCode::InsufficientData, "fewer than 4 n values: no exponent fit");
  }
  if (c.subcommand == "blocks") {
    if (c.beta_grid.empty()) error(ErrorCode::InvalidConfig, "beta grid is empty");
    if (c.N.events > 0 && c.N.events < 1000) error(ErrorCode::InvalidConfig, "N.events must be 0 or >= 1000");
    for (double beta : c.beta_grid) {
      for (std::size_t n : c.n_grid) {
        try {
          const auto p = make_block_params(BlockRegime::lower, n, c.theta, beta);
          if (c.N.events > 0 && p.m < 8) {
            error(ErrorCode::DegenerateBlocks, "n = " + std::to_string(n) + ", beta = " + csv::num(beta) + ": m = " +
                                                   std::to_string(p.m) + " is below 8");
          }
        } catch (const Error& e) {
          error(e.code() == ErrorCode::DegenerateBlocks ? ErrorCode::DegenerateBlocks : ErrorCode::InvalidConfig,
                "n = " + std::to_string(n) + ", beta = " + csv::num(beta) + ": " + e.what());
        }
      }
    }
  }
  return out;
}

std::vector<Task> seed_plan(const ExperimentConfig& c) {
  if (!c.master_seed) invalid("master_seed is mandatory");
  std::vector<Task> tasks;
  auto add = [&](std::string id, std::size_t n, std::optional<double> beta) {
    Task t;
    t.seed = SeedRecord{*c.master_seed, fnv1a(id)};
    t.id = std::move(id);
    t.n = n;
    t.beta = beta;
    tasks.push_back(std::move(t));
  };
  if (c.subcommand == "report") {
    add("report/inputs=" + report_inputs_digest(c.out), 0, std::nullopt);
  } else if (c.subcommand == "blocks") {
    for (std::size_t n : c.n_grid) {
      for (double beta : c.beta_grid) add("blocks/n=" + std::to_string(n) + "/beta=" + fmt_beta(beta), n, beta);
    }
  } else {
    for (std::size_t n : c.n_grid) add(c.subcommand + "/n=" + std::to_string(n), n, std::nullopt);
  }
  std::set<std::uint64_t> seen;
  for (const auto& t : tasks) {
    if (!seen.insert(t.seed.task_index).second) invalid("task id digest collision at " + t.id);
  }
  return tasks;
}

const TaskRecord* RunManifest::find(const std::string& id) const {
  for (const auto& t : tasks) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

json RunManifest::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["subcommand"] = subcommand;
  j["tasks"] = json::array();
  for (const auto& t : tasks) {
    json r;
    r["id"] = t.id;
    r["status"] = t.done ? "done" : "failed";
    r["attempts"] = t.attempts;
    r["outputs"] = t.outputs;
    if (!t.error.empty()) r["error"] = t.error;
    j["tasks"].push_back(r);
  }
  return j;
}

RunManifest RunManifest::from_json(const json& doc) {
  RunManifest m;
  m.config_hash = doc.at("config_hash").get<std::string>();
  m.subcommand = doc.at("subcommand").get<std::string>();
  for (const auto& r : doc.at("tasks")) {
    TaskRecord t;
    t.id = r.at("id").get<std::string>();
    t.done = r.at("status").get<std::string>() == "done";
    t.attempts = r.at("attempts").get<unsigned>();
    t.outputs = r.at("outputs").get<std::map<std::string, std::string>>();
    if (r.contains("error")) t.error = r["error"].get<std::string>();
    m.tasks.push_back(std::move(t));
  }
  return m;
}

RunResult run(const ExperimentConfig& config, std::ostream* log) {
  RunResult result;
  result.diagnostics = validate(config);
  if (has_errors(result.diagnostics)) {
    result.exit_code = 1;
    return result;
  }
  const fs::path out(config.out);
  const fs::path task_dir = out / "tasks";
  fs::create_directories(task_dir);
  const auto dist = config.distribution();
  const auto tasks = seed_plan(config);
  const std::string hash = config.hash();
  const std::string manifest_name = "manifest_" + config.subcommand + ".json";

  RunManifest previous;
  if (const auto text = read_or_empty(out / manifest_name); !text.empty()) {
    try {
      previous = RunManifest::from_json(json::parse(text));
    } catch (const std::exception&) {
      previous = {};
    }
  }
  const bool same_config = previous.config_hash == hash;

  // Mean table shared by every task; entries are keyed by (dist, n, N, seed)
  // so tasks computing a missing entry agree on its value.
  MeanTable table;
  const auto table_path = out / "mean_table.csv";
  if (fs::exists(table_path)) table = MeanTable::load(table_path.string());
  if (config.subcommand != "report" && config.subcommand != "blocks") {
    for (std::size_t n : config.n_grid) table.ensure(dist, n, config.N.mean, *config.master_seed, config.workers);
    table.save(table_path.string());
  }

  RunManifest manifest;
  manifest.config_hash = hash;
  manifest.subcommand = config.subcommand;
  manifest.tasks.resize(tasks.size());
  std::vector<char> pending(tasks.size(), 0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const TaskRecord* old = same_config ? previous.find(tasks[i].id) : nullptr;
    if (old && old->done && outputs_intact(*old, task_dir)) {
      manifest.tasks[i] = *old;
      ++result.reused;
    } else {
      manifest.tasks[i].id = tasks[i].id;
      pending[i] = 1;
    }
  }

  std::mutex mu;
  auto save_manifest = [&] { csv::write_file((out / manifest_name).string(), manifest.to_json().dump(2) + '\n'); };
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (pending[i]) todo.push_back(i);
  }
  const unsigned pool = static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(config.workers, todo.size())));
  const unsigned inner = std::max(1u, config.workers / pool);
  run_tasks(todo.size(), pool, [&](std::size_t j) {
    const std::size_t i = todo[j];
    const Task& t = tasks[i];
    Context cx{config, dist, table, inner, out};
    TaskRecord rec;
    rec.id = t.id;
    for (unsigned attempt = 1; attempt <= 2 && !rec.done; ++attempt) {
      rec.attempts = attempt;
      try {
        const Outputs files = execute(t, cx);
        rec.outputs.clear();
        for (const auto& [name, content] : files) {
          csv::write_file((task_dir / name).string(), content);
          rec.outputs[name] = csv::checksum(content);
        }
        rec.done = true;
        rec.error.clear();
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
    }
    std::lock_guard lock(mu);
    if (log) *log << (rec.done ? "done   " : "FAILED ") << t.id << (rec.done ? "" : ": " + rec.error) << '\n';
    manifest.tasks[i] = std::move(rec);
    save_manifest();
  });
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!pending[i]) continue;
    if (manifest.tasks[i].done) ++result.computed;
    else ++result.failed;
  }
  save_manifest();

  for (const auto& [name, content] : merge(config, manifest, task_dir)) {
    csv::write_file((out / name).string(), content);
    result.artifacts.push_back(name);
  }
  result.manifest = manifest;
  if (result.failed > 0) {
    result.exit_code = 2;
    result.diagnostics.push_back({Diagnostic::Severity::error, ErrorCode::PartialFailure,
                                  std::to_string(result.failed) + " of " + std::to_string(tasks.size()) +
                                      " tasks failed; see " + manifest_name});
  }
  return result;
}

}  // namespace rangelab
