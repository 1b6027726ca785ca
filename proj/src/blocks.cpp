#include "rangelab/blocks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "json.hpp"
#include "rangelab/csv.hpp"
#include "rangelab/error.hpp"
#include "rangelab/range.hpp"

namespace rangelab {

namespace {

// x > -sqrt(m), x < c sqrt(m), x > c sqrt(m), all exact in integers.
bool above_neg_root(std::int64_t x, std::int64_t m) { return x >= 0 || x * x < m; }
bool below_root(std::int64_t x, std::int64_t m, std::int64_t c) { return x <= 0 || x * x < c * c * m; }
bool above_root(std::int64_t x, std::int64_t m, std::int64_t c) { return x > 0 && x * x > c * c * m; }

bool in_strip(std::int64_t x, std::int64_t m) { return above_neg_root(x, m) && below_root(x, m, 3); }
bool in_end_window(std::int64_t x, std::int64_t m) { return above_root(x, m, 2) && below_root(x, m, 3); }

// B on positions [a, b) of the path with block parameter m: strip at every
// position, end window at relative position m - 1 when the block reaches it.
bool b_event(const WalkPath& path, std::size_t a, std::size_t b, std::size_t m) {
  const auto mm = static_cast<std::int64_t>(m);
  const std::int64_t x0 = path.positions[a].x;
  for (std::size_t i = a; i < b; ++i) {
    const std::int64_t x = path.positions[i].x - x0;
    if (!in_strip(x, mm)) return false;
    if (i - a == m - 1 && !in_end_window(x, mm)) return false;
  }
  return true;
}

void require_block(const WalkPath& path, std::size_t k, std::size_t m, std::size_t blocks) {
  if (k < 1 || m < 1 || (k + blocks - 1) * m > path.positions.size()) {
    throw Error(ErrorCode::OutOfBounds, "block " + std::to_string(k) + " of length " + std::to_string(m) +
                                            " does not fit a path of " + std::to_string(path.positions.size()) +
                                            " positions");
  }
}

std::uint64_t site_key(Point p) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.x)) << 32) | static_cast<std::uint32_t>(p.y);
}

// Free step drawn by inversion; used for the steps that join blocks.
class FreeStep {
 public:
  explicit FreeStep(const StepDistribution& dist) : dist_(dist) {
    double acc = 0.0;
    for (const auto& a : dist.atoms()) cdf_.push_back(acc += a.p);
  }
  Point draw(Engine& eng) const {
    const double u = uniform01(eng) * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
    return dist_.atoms()[i].step;
  }

 private:
  const StepDistribution& dist_;
  std::vector<double> cdf_;
};

constexpr std::size_t kBatch = 64;
constexpr std::size_t kMaxSamplerCells = 25'000'000;

}  // namespace

std::string to_string(BlockRegime r) { return r == BlockRegime::upper ? "upper" : "lower"; }

BlockRegime block_regime_from_string(const std::string& s) {
  if (s == "upper") return BlockRegime::upper;
  if (s == "lower") return BlockRegime::lower;
  throw Error(ErrorCode::InvalidArgument, "unknown block regime '" + s + "'");
}

BlockParams make_block_params(BlockRegime regime, std::size_t n, double theta, double beta) {
  if (!(theta >= 1.0)) throw Error(ErrorCode::InvalidArgument, "theta must be >= 1");
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "block construction needs n >= 4");
  if (!(beta > 0.0)) throw Error(ErrorCode::InvalidArgument, "beta must be positive");
  const double logn = std::log(static_cast<double>(n));
  const double raw = regime == BlockRegime::upper ? std::exp(beta + 1.0 + logn / theta) : std::exp(logn / theta - beta);
  if (!(raw >= 2.0)) {
    throw Error(ErrorCode::DegenerateBlocks, "block length " + csv::num(raw) + " is below 2");
  }
  BlockParams p;
  p.regime = regime;
  p.n = n;
  p.theta = theta;
  p.beta = beta;
  p.m = static_cast<std::size_t>(std::floor(std::min(raw, 1e18)));
  p.M = (n + p.m - 1) / p.m;
  if (p.M < 1) throw Error(ErrorCode::DegenerateBlocks, "no blocks");
  return p;
}

bool eval_B(const WalkPath& path, std::size_t k, std::size_t m) {
  require_block(path, k, m, 1);
  return b_event(path, (k - 1) * m, k * m, m);
}

double e_threshold(double r_m, std::size_t m, double beta) {
  if (m < 3) throw Error(ErrorCode::InvalidArgument, "E needs m >= 3");
  return r_m * (1.0 - 0.5 * beta / std::log(static_cast<double>(m)));
}

double i_threshold(double r_m, std::size_t m, double beta) {
  if (m < 3) throw Error(ErrorCode::InvalidArgument, "I needs m >= 3");
  return r_m * (beta / 6.0) / std::log(static_cast<double>(m));
}

bool eval_E(const WalkPath& path, std::size_t k, std::size_t m, double r_m, double beta) {
  const double thr = e_threshold(r_m, m, beta);
  require_block(path, k, m, 1);
  return static_cast<double>(window_range(path, (k - 1) * m, k * m).range) >= thr;
}

bool eval_I(const WalkPath& path, std::size_t k, std::size_t m, double r_m, double beta) {
  const double thr = i_threshold(r_m, m, beta);
  require_block(path, k, m, 2);
  return static_cast<double>(block_intersection(path, k, m).size) <= thr;
}

std::vector<EventRecord> block_events(const WalkPath& path, const BlockParams& params, double r_m, double r_last) {
  if (path.steps() != params.n) {
    throw Error(ErrorCode::OutOfBounds, "path has " + std::to_string(path.steps()) + " steps, blocks expect " +
                                            std::to_string(params.n));
  }
  const std::size_t M = params.M;
  std::vector<EventRecord> out(M);
  for (std::size_t k = 1; k <= M; ++k) {
    EventRecord& e = out[k - 1];
    e.k = k;
    const std::size_t a = params.block_begin(k), b = params.block_end(k);
    e.B = b_event(path, a, b, params.m);
    e.block_range = window_range(path, a, b).range;
    const double r = k == M ? r_last : r_m;
    e.E = static_cast<double>(e.block_range) >= e_threshold(r, params.m, params.beta);
  }
  const double ithr = i_threshold(r_m, params.m, params.beta);
  for (std::size_t k = 1; k < M; ++k) {
    EventRecord& e = out[k - 1];
    const std::size_t joint = window_range(path, params.block_begin(k), params.block_end(k + 1)).range;
    e.intersection = e.block_range + out[k].block_range - joint;
    e.I_ok = static_cast<double>(e.intersection) <= ithr;
    e.eta = e.E && out[k].E && e.I_ok;
  }
  return out;
}

ConditionedBlockSampler::ConditionedBlockSampler(const StepDistribution& dist, std::size_t m, std::size_t length)
    : m_(m), length_(length) {
  if (m < 2 || length < 1) throw Error(ErrorCode::InvalidArgument, "conditioned block needs m >= 2");
  const auto mm = static_cast<std::int64_t>(m);
  auto root = static_cast<std::int64_t>(std::sqrt(static_cast<double>(m)));
  std::int64_t lo = -root - 1, hi = 3 * root + 3;
  while (!in_strip(lo, mm)) ++lo;
  while (in_strip(lo - 1, mm)) --lo;
  while (!in_strip(hi, mm)) --hi;
  while (in_strip(hi + 1, mm)) ++hi;
  lo_ = static_cast<int>(lo);
  hi_ = static_cast<int>(hi);
  const auto width = static_cast<std::size_t>(hi_ - lo_ + 1);
  if (width * length > kMaxSamplerCells) {
    throw Error(ErrorCode::BudgetExceeded, "conditioned block table of " + std::to_string(width * length) +
                                               " cells exceeds the budget");
  }

  for (std::size_t i = 0; i < dist.size(); ++i) {
    const auto& a = dist.atoms()[i];
    auto it = std::find_if(moves_.begin(), moves_.end(), [&](const XMove& mv) { return mv.dx == a.step.x; });
    if (it == moves_.end()) {
      moves_.push_back(XMove{a.step.x, 0.0, {}, {}});
      it = moves_.end() - 1;
    }
    it->p += a.p;
    it->steps.push_back(a.step);
  }
  if (moves_.size() > 64) throw Error(ErrorCode::InvalidArgument, "conditioned sampler supports 64 distinct dx");
  for (auto& mv : moves_) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (dist.atoms()[i].step.x == mv.dx) mv.cumulative.push_back(acc += dist.atoms()[i].p / mv.p);
    }
  }

  // Backward pass. Row t holds h(t, x) up to a per-row factor; log_scale
  // accumulates the factors so P(B) can be recovered from row 0.
  h_.assign(width * length, 0.0);
  auto allowed = [&](std::size_t t, int x) {
    return t != m - 1 || in_end_window(x, mm);  // strip holds on the whole table
  };
  double log_scale = 0.0;
  for (std::size_t t = length; t-- > 0;) {
    double* row = &h_[t * width];
    double top = 0.0;
    for (int x = lo_; x <= hi_; ++x) {
      double v = 0.0;
      if (allowed(t, x)) {
        if (t + 1 == length) {
          v = 1.0;
        } else {
          const double* next = &h_[(t + 1) * width];
          for (const auto& mv : moves_) {
            const int y = x + mv.dx;
            if (y >= lo_ && y <= hi_) v += mv.p * next[y - lo_];
          }
        }
      }
      row[x - lo_] = v;
      top = std::max(top, v);
    }
    if (top == 0.0) break;
    for (std::size_t i = 0; i < width; ++i) row[i] /= top;
    log_scale += std::log(top);
  }
  const double h0 = h_[static_cast<std::size_t>(-lo_)];
  probability_ = h0 > 0.0 ? std::exp(std::log(h0) + log_scale) : 0.0;
}

void ConditionedBlockSampler::sample(Engine& eng, Point start, std::vector<Point>& out, bool include_start) const {
  if (probability_ <= 0.0) throw Error(ErrorCode::DomainError, "B cannot occur for this block length");
  const auto width = static_cast<std::size_t>(hi_ - lo_ + 1);
  if (include_start) out.push_back(start);
  Point s = start;
  int x = 0;
  std::array<double, 64> w{};
  for (std::size_t t = 0; t + 1 < length_; ++t) {
    const double* next = &h_[(t + 1) * width];
    double total = 0.0;
    for (std::size_t j = 0; j < moves_.size(); ++j) {
      const int y = x + moves_[j].dx;
      const double v = (y >= lo_ && y <= hi_) ? moves_[j].p * next[y - lo_] : 0.0;
      total += v;
      w[j] = total;
    }
    const double u = uniform01(eng) * total;
    std::size_t j = 0;
    while (j + 1 < moves_.size() && !(u < w[j])) ++j;
    const XMove& mv = moves_[j];
    std::size_t a = 0;
    if (mv.steps.size() > 1) {
      const double v = uniform01(eng);
      while (a + 1 < mv.steps.size() && !(v < mv.cumulative[a])) ++a;
    }
    s = s + mv.steps[a];
    x += mv.dx;
    out.push_back(s);
  }
}

ProportionEstimate proportion(std::uint64_t hits, std::uint64_t trials) {
  ProportionEstimate p;
  p.hits = hits;
  p.trials = trials;
  p.estimate = trials > 0 ? static_cast<double>(hits) / static_cast<double>(trials) : 0.0;
  const auto ci = wilson_interval(hits, trials);
  p.low = ci.low;
  p.high = ci.high;
  return p;
}

std::string EventProbReport::csv_header() {
  return "dist_id,m,beta,N,r_m,r_m_stderr,p_B,p_B_low,p_B_high,p_B_exact,p_E,p_E_low,p_E_high,p_I,p_I_low,p_I_high,"
         "p_eta_given_BB,p_eta_low,p_eta_high,master_seed";
}

std::string EventProbReport::csv_row() const {
  std::string s = dist_id + ',' + std::to_string(m) + ',' + csv::num(beta) + ',' + std::to_string(N) + ',' +
                  csv::num(r_m) + ',' + csv::num(r_m_stderr);
  for (const ProportionEstimate* p : {&p_B}) s += ',' + csv::num(p->estimate) + ',' + csv::num(p->low) + ',' + csv::num(p->high);
  s += ',' + csv::num(p_B_exact);
  for (const ProportionEstimate* p : {&p_E, &p_I, &p_eta_given_BB}) {
    s += ',' + csv::num(p->estimate) + ',' + csv::num(p->low) + ',' + csv::num(p->high);
  }
  return s + ',' + std::to_string(master_seed);
}

EventProbReport estimate_event_probs(const StepDistribution& dist, std::size_t m, double beta, std::uint64_t N,
                                     const SeedRecord& seed, const MeanRangeEntry& r_m, unsigned workers) {
  if (m < 8) throw Error(ErrorCode::InvalidArgument, "event probabilities need m >= 8");
  if (N < 1000) throw Error(ErrorCode::InvalidArgument, "event probabilities need N >= 1000");
  if (r_m.n + 1 != m) {
    throw Error(ErrorCode::InvalidArgument, "r_m must be the mean range of m positions (table n = m - 1)");
  }
  const ConditionedBlockSampler sampler(dist, m, m);
  const FreeStep free_step(dist);
  const double ethr = e_threshold(r_m.r_hat, m, beta);
  const double ithr = i_threshold(r_m.r_hat, m, beta);

  struct Counts {
    std::uint64_t b = 0, e = 0, i = 0, eta = 0;
  };
  const std::size_t batches = static_cast<std::size_t>((N + kBatch - 1) / kBatch);
  std::vector<Counts> counts(batches);
  run_tasks(batches, workers, [&](std::size_t batch) {
    Counts c;
    const std::uint64_t first = batch * kBatch;
    const std::uint64_t count = std::min<std::uint64_t>(kBatch, N - first);
    const SeedRecord free_seed = seed.child(0).child(batch);
    const SeedRecord cond_seed = seed.child(1).child(batch);
    Engine cond = cond_seed.engine();
    WalkPath pair;
    for (std::uint64_t j = 0; j < count; ++j) {
      const WalkPath path = sample_path(dist, 2 * m - 1, free_seed.child(j));
      c.b += eval_B(path, 1, m);
      c.e += static_cast<double>(window_range(path, 0, m).range) >= ethr;
      c.i += static_cast<double>(block_intersection(path, 1, m).size) <= ithr;

      pair.positions.clear();
      sampler.sample(cond, Point{}, pair.positions, true);
      sampler.sample(cond, pair.positions.back() + free_step.draw(cond), pair.positions, true);
      const bool e1 = static_cast<double>(window_range(pair, 0, m).range) >= ethr;
      const bool e2 = static_cast<double>(window_range(pair, m, 2 * m).range) >= ethr;
      const bool iok = static_cast<double>(block_intersection(pair, 1, m).size) <= ithr;
      c.eta += e1 && e2 && iok;
    }
    counts[batch] = c;
  });
  Counts total;
  for (const auto& c : counts) {
    total.b += c.b;
    total.e += c.e;
    total.i += c.i;
    total.eta += c.eta;
  }
  EventProbReport r;
  r.dist_id = dist.id();
  r.m = m;
  r.beta = beta;
  r.N = N;
  r.r_m = r_m.r_hat;
  r.r_m_stderr = r_m.std_error;
  r.p_B = proportion(total.b, N);
  r.p_B_exact = sampler.probability();
  r.p_E = proportion(total.e, N);
  r.p_I = proportion(total.i, N);
  r.p_eta_given_BB = proportion(total.eta, N);
  r.master_seed = seed.master_seed;
  return r;
}

std::string StrategyReport::to_json() const {
  nlohmann::ordered_json j;
  j["regime"] = to_string(params.regime);
  j["n"] = params.n;
  j["theta"] = params.theta;
  j["beta"] = params.beta;
  j["m"] = params.m;
  j["M"] = params.M;
  j["r_hat_n"] = r_hat_n;
  j["target"] = target;
  j["r_m"] = r_m;
  j["r_last"] = r_last;
  j["p_B_block"] = p_B_block;
  j["samples"] = samples;
  j["block_draws"] = block_draws;
  j["acceptance"] = acceptance;
  j["b_failures"] = b_failures;
  j["event_failures"] = event_failures;
  j["decomposition_failures"] = decomposition_failures;
  j["disjointness_violations"] = disjointness_violations;
  j["implication_fraction"] = implication.estimate;
  j["implication_ci"] = {implication.low, implication.high};
  j["min_range"] = min_range;
  j["mean_range"] = mean_range;
  j["eta_mean_given_B"] = eta_mean.estimate;
  j["eta_lag2_corr"] = eta_lag2_corr;
  j["eta_lag2_z"] = eta_lag2_z;
  j["eta_lag2_pairs"] = eta_lag2_pairs;
  return j.dump(2);
}

StrategyReport strategy_implication_check(const StepDistribution& dist, std::size_t n, double theta, double beta,
                                          const StrategyOptions& options, const SeedRecord& seed, MeanTable& table,
                                          unsigned workers) {
  if (options.samples < 1) throw Error(ErrorCode::InvalidArgument, "strategy check needs samples >= 1");
  StrategyReport rep;
  rep.params = make_block_params(BlockRegime::lower, n, theta, beta);
  const BlockParams& P = rep.params;
  if (P.m < 3) throw Error(ErrorCode::DegenerateBlocks, "strategy check needs m >= 3");
  const std::size_t last_len = P.block_end(P.M) - P.block_begin(P.M);

  rep.r_hat_n = table.ensure(dist, n, options.mean_samples, seed.master_seed, workers).r_hat;
  rep.target = theta * rep.r_hat_n;
  rep.r_m = table.ensure(dist, P.m - 1, options.mean_samples, seed.master_seed, workers).r_hat;
  rep.r_last =
      last_len == 1 ? 1.0 : table.ensure(dist, last_len - 1, options.mean_samples, seed.master_seed, workers).r_hat;
  const double ithr = i_threshold(rep.r_m, P.m, beta);
  auto ethr = [&](std::size_t k) { return e_threshold(k == P.M ? rep.r_last : rep.r_m, P.m, beta); };

  const ConditionedBlockSampler full(dist, P.m, P.m);
  const ConditionedBlockSampler last(dist, P.m, last_len);
  const FreeStep free_step(dist);
  rep.p_B_block = full.probability();
  const std::int64_t radius = walk_radius(2 * P.m, step_scale(dist));

  struct Checked {
    bool b_all = true;
    bool events_all = true;
    bool decomposition_ok = true;
    std::uint64_t violations = 0;
    std::vector<char> eta;
    std::size_t range = 0;
    std::uint64_t draws = 0;  // block draws, sequential phase only
  };
  auto check = [&](const WalkPath& path, Checked& c) {
    const auto events = block_events(path, P, rep.r_m, rep.r_last);
    c.range = range_count(path).range;
    std::int64_t sum = 0;
    for (const auto& e : events) {
      c.b_all = c.b_all && e.B;
      c.events_all = c.events_all && e.E && (e.k == P.M || e.I_ok);
      sum += static_cast<std::int64_t>(e.block_range) - static_cast<std::int64_t>(e.intersection);
      if (e.eta) c.eta.push_back(*e.eta ? 1 : 0);
    }
    c.decomposition_ok = sum == static_cast<std::int64_t>(c.range);
    thread_local std::unordered_map<std::uint64_t, std::uint32_t> first_block;
    first_block.clear();
    first_block.reserve(n + 1);
    for (std::size_t k = 1; k <= P.M; ++k) {
      for (std::size_t i = P.block_begin(k); i < P.block_end(k); ++i) {
        const auto [it, fresh] = first_block.try_emplace(site_key(path.positions[i]), static_cast<std::uint32_t>(k));
        if (!fresh && it->second + 2 <= k) ++c.violations;
      }
    }
  };

  // Law of the blocks given every B_k: independent blocks, free joins.
  auto b_path = [&](std::uint64_t index) {
    Engine eng = seed.child(0).child(index).engine();
    WalkPath path;
    path.positions.reserve(n + 1);
    Point start{};
    for (std::size_t k = 1; k <= P.M; ++k) {
      (k == P.M ? last : full).sample(eng, start, path.positions, true);
      if (k < P.M) start = path.positions.back() + free_step.draw(eng);
    }
    Checked c;
    check(path, c);
    return c;
  };

  // Block k is redrawn (with its joining step) until E_k and I_{k-1,k} hold.
  auto sequential_path = [&](std::uint64_t index) {
    Engine eng = seed.child(1).child(index).engine();
    thread_local SiteSet prev, cur;
    prev.ensure_radius(radius);
    cur.ensure_radius(radius);
    WalkPath path;
    path.positions.reserve(n + 1);
    std::vector<Point> block;
    Checked c;
    for (std::size_t k = 1; k <= P.M; ++k) {
      const Point anchor = k == 1 ? Point{} : path.positions[P.block_begin(k - 1)];
      if (k > 1) {
        prev.clear(anchor);
        for (std::size_t i = P.block_begin(k - 1); i < P.block_end(k - 1); ++i) prev.insert(path.positions[i]);
      }
      for (std::uint64_t tries = 1;; ++tries) {
        ++c.draws;
        block.clear();
        const Point start = k == 1 ? Point{} : path.positions.back() + free_step.draw(eng);
        (k == P.M ? last : full).sample(eng, start, block, true);
        cur.clear(anchor);
        std::size_t shared = 0;
        for (const Point& q : block) {
          if (cur.insert(q) && k > 1 && prev.contains(q)) ++shared;
        }
        if (static_cast<double>(cur.size()) >= ethr(k) && static_cast<double>(shared) <= ithr) break;
        if (tries >= options.min_attempts &&
            static_cast<double>(tries) * options.min_acceptance > 1.0) {
          throw Error(ErrorCode::RejectionBudgetExceeded,
                      "block " + std::to_string(k) + " rejected " + std::to_string(tries) + " times in a row");
        }
      }
      path.positions.insert(path.positions.end(), block.begin(), block.end());
    }
    check(path, c);
    return c;
  };

  std::vector<Checked> b_runs(options.samples), seq_runs(options.samples);
  run_tasks(options.samples, workers, [&](std::size_t i) { b_runs[i] = b_path(i); });
  run_tasks(options.samples, workers, [&](std::size_t i) { seq_runs[i] = sequential_path(i); });

  std::uint64_t eta_ones = 0, eta_total = 0, pairs = 0;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (const Checked& c : b_runs) {
    rep.b_failures += !c.b_all;
    rep.decomposition_failures += !c.decomposition_ok;
    rep.disjointness_violations += c.violations;
    for (char e : c.eta) eta_ones += e;
    eta_total += c.eta.size();
    // eta_k and eta_{k+2}, leaving out eta_{M-1} which involves the cut block
    for (std::size_t k = 0; k + 4 <= c.eta.size(); ++k) {
      const double x = c.eta[k], y = c.eta[k + 2];
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
      ++pairs;
    }
  }
  RunningStats ranges;
  double min_range = std::numeric_limits<double>::infinity();
  std::uint64_t implied = 0;
  for (const Checked& c : seq_runs) {
    rep.b_failures += !c.b_all;
    rep.event_failures += !c.events_all;
    rep.decomposition_failures += !c.decomposition_ok;
    rep.disjointness_violations += c.violations;
    rep.block_draws += c.draws;
    const auto r = static_cast<double>(c.range);
    ranges.add(r);
    min_range = std::min(min_range, r);
    implied += r >= rep.target;
  }
  rep.samples = options.samples;
  rep.acceptance = static_cast<double>(options.samples * P.M) / static_cast<double>(rep.block_draws);
  rep.implication = proportion(implied, options.samples);
  rep.min_range = min_range;
  rep.mean_range = ranges.mean;
  rep.eta_mean = proportion(eta_ones, eta_total);
  rep.eta_lag2_pairs = pairs;
  if (pairs > 1) {
    const double np = static_cast<double>(pairs);
    const double cov = sxy / np - (sx / np) * (sy / np);
    const double vx = sxx / np - (sx / np) * (sx / np);
    const double vy = syy / np - (sy / np) * (sy / np);
    rep.eta_lag2_corr = vx > 0 && vy > 0 ? cov / std::sqrt(vx * vy) : 0.0;
    rep.eta_lag2_z = rep.eta_lag2_corr * std::sqrt(np);
  }
  return rep;
}

double lower_bound_certificate(const BlockParams& params, const EventProbReport& report) {
  if (!(report.p_eta_given_BB.estimate > 0.75)) {
    throw Error(ErrorCode::BoundNotApplicable,
                "P(eta = 1 | BB) = " + csv::num(report.p_eta_given_BB.estimate) + " is not above 3/4");
  }
  const double M = static_cast<double>(params.M);
  const double log_pb = report.p_B.estimate > 0 ? std::log(report.p_B.estimate)
                                                 : -std::numeric_limits<double>::infinity();
  return M * log_pb + M * std::log(0.25);
}

std::string ChebyshevProbe::to_json() const {
  nlohmann::ordered_json j;
  j["n"] = params.n;
  j["theta"] = params.theta;
  j["beta"] = params.beta;
  j["m"] = params.m;
  j["M"] = params.M;
  j["r_m"] = r_m;
  j["r_hat_n"] = r_hat_n;
  j["blocks_sampled"] = blocks_sampled;
  j["lambda"] = lambda;
  j["log_mgf"] = log_mgf;
  j["log_bound"] = log_bound;
  j["lambda0"] = lambda0;
  j["log_bound_opt"] = log_bound_opt;
  j["required_excess"] = required_excess;
  j["log_bound_required"] = log_bound_required;
  j["log_bound_required_opt"] = log_bound_required_opt ? nlohmann::ordered_json(*log_bound_required_opt) : nullptr;
  j["direct_log_p"] = direct_log_p ? nlohmann::ordered_json(*direct_log_p) : nullptr;
  return j.dump(2);
}

ChebyshevProbe upper_chebyshev_probe(const StepDistribution& dist, std::size_t n, double theta, double beta,
                                     double lambda, const SeedRecord& seed, MeanTable& table,
                                     const ChebyshevOptions& options, unsigned workers, const TailEstimate* direct) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be >= 0");
  if (options.blocks < 2) throw Error(ErrorCode::InvalidArgument, "probe needs at least two blocks sampled");
  ChebyshevProbe probe;
  probe.params = make_block_params(BlockRegime::upper, n, theta, beta);
  const BlockParams& P = probe.params;
  probe.r_m = table.ensure(dist, P.m - 1, options.mean_samples, seed.master_seed, workers).r_hat;
  probe.r_hat_n = table.ensure(dist, n, options.mean_samples, seed.master_seed, workers).r_hat;
  probe.blocks_sampled = options.blocks;
  probe.lambda = lambda;

  const double lm = std::log(static_cast<double>(P.m));
  const double scale = lm * lm / static_cast<double>(P.m);
  const auto ranges = sample_ranges(dist, P.m - 1, options.blocks, seed.child(0), workers);
  std::vector<double> values(ranges.size());
  for (std::size_t i = 0; i < ranges.size(); ++i) values[i] = scale * (static_cast<double>(ranges[i]) - probe.r_m);

  double top = -std::numeric_limits<double>::infinity();
  for (double v : values) top = std::max(top, lambda * v);
  double acc = 0.0;
  for (double v : values) acc += std::exp(lambda * v - top);
  probe.log_mgf = top + std::log(acc / static_cast<double>(values.size()));
  const double M = static_cast<double>(P.M);
  probe.log_bound = -lambda * beta * M + M * probe.log_mgf;

  const auto curve = log_mgf(values, uniform_grid(0.0, options.lambda_max, options.lambda_step), P.m - 1);
  auto optimum = [&](double level) -> std::optional<std::pair<double, double>> {
    if (level <= 0.0) return std::pair{0.0, 0.0};
    try {
      const auto lp = legendre(curve, level);
      return std::pair{lp.lambda0, -M * lp.lambda_star};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MaximizerAtBoundary && e.code() != ErrorCode::NonConvexCurve) throw;
      return std::nullopt;
    }
  };
  if (const auto o = optimum(beta)) {
    probe.lambda0 = o->first;
    probe.log_bound_opt = o->second;
  } else {
    // Maximiser beyond the grid: the best grid point still gives a bound.
    probe.lambda0 = std::numeric_limits<double>::quiet_NaN();
    probe.log_bound_opt = 0.0;
    for (std::size_t i = 0; i < curve.lambda_grid.size(); ++i) {
      probe.log_bound_opt = std::min(probe.log_bound_opt, M * (curve.values[i] - beta * curve.lambda_grid[i]));
    }
  }

  // A last block one position longer than m has range at most one more than
  // a block of m positions; a shorter one is dominated by a full block.
  const double slack = P.block_end(P.M) - P.block_begin(P.M) > P.m ? 1.0 : 0.0;
  probe.required_excess = (theta * probe.r_hat_n - slack - M * probe.r_m) / M * scale;
  probe.log_bound_required = -lambda * probe.required_excess * M + M * probe.log_mgf;
  if (const auto o = optimum(probe.required_excess)) probe.log_bound_required_opt = o->second;
  if (direct) probe.direct_log_p = direct->log_p_hat;
  return probe;
}

}  // namespace rangelab
