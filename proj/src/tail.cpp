#include "rangelab/tail.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "json.hpp"
#include "rangelab/csv.hpp"
#include "rangelab/error.hpp"
#include "rangelab/range.hpp"
#include "rangelab/stats.hpp"

namespace rangelab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0 ? std::log(p) : kNegInf; }

TailEstimate from_counts(const StepDistribution& dist, std::size_t n, std::size_t threshold, std::uint64_t hits,
                         std::uint64_t N, double z, const SeedRecord& seed) {
  TailEstimate e;
  e.dist_id = dist.id();
  e.n = n;
  e.threshold = threshold;
  e.method = TailMethod::naive;
  e.hits = hits;
  e.trials = N;
  e.work = static_cast<std::uint64_t>(n) * N;
  e.p_hat = static_cast<double>(hits) / static_cast<double>(N);
  const auto ci = wilson_interval(hits, N, z);
  e.ci_low = ci.low;
  e.ci_high = ci.high;
  e.log_p_hat = safe_log(e.p_hat);
  e.log_ci_low = safe_log(e.ci_low);
  e.log_ci_high = safe_log(e.ci_high);
  e.master_seed = seed.master_seed;
  return e;
}

std::uint64_t count_at_least(const std::vector<std::uint32_t>& ranges, std::size_t threshold) {
  return static_cast<std::uint64_t>(
      std::count_if(ranges.begin(), ranges.end(), [&](std::uint32_t r) { return r >= threshold; }));
}

// ---- splitting ----

using StepIndex = std::uint8_t;
constexpr std::uint64_t kPilotBranch = 1ULL << 40;

constexpr double kAbsorbed = std::numeric_limits<double>::infinity();

struct Particle {
  std::vector<StepIndex> steps;  // may stop short of n once the outcome is settled
  double level = 0.0;
};

// Simulates particles under the score xi(t) = R_t - slope * t. A particle's
// level is sup_t xi(t), or +inf once R_t reaches the threshold. In settle
// mode a walk stops as soon as it is absorbed or can no longer reach the
// threshold (its level is final then).
class Regrower {
 public:
  Regrower(const StepDistribution& dist, std::size_t n, std::size_t threshold, double slope, bool settle)
      : dist_(dist), n_(n), threshold_(threshold), slope_(slope), settle_(settle) {
    arena_.ensure_radius(walk_radius(n, step_scale(dist)));
  }

  double fresh(std::vector<StepIndex>& out, StepStream& stream) {
    begin();
    extend(out, stream);
    return level();
  }

  // Copies `src` up to the first time its score exceeds z, then continues
  // with fresh steps.
  double regrow_after_crossing(const std::vector<StepIndex>& src, double z, std::vector<StepIndex>& out,
                               StepStream& stream) {
    begin();
    out.clear();
    if (!(sup_ > z)) {
      cross_ = z;
      replay(src.data(), src.size(), out);
      cross_.reset();
      if (!(reached_ || sup_ > z)) throw Error(ErrorCode::InvalidArgument, "parent does not clear the level");
    }
    if (!done()) extend(out, stream);
    return level();
  }

  // Prefix of `src` up to `pivot`, fresh suffix to time n. Returns -inf when
  // the proposal provably cannot exceed z (it is abandoned early).
  double propose(const std::vector<StepIndex>& src, std::size_t pivot, double z, std::vector<StepIndex>& out,
                 StepStream& stream) {
    begin();
    out.clear();
    replay(src.data(), pivot, out);
    constexpr std::size_t kChunk = 256;
    while (t_ < n_) {
      if (!reached_ && !(sup_ > z)) {
        const double remaining = static_cast<double>(n_ - t_);
        const double best = static_cast<double>(size_) + remaining - slope_ * static_cast<double>(n_);
        if (best <= z && static_cast<double>(size_) + remaining < static_cast<double>(threshold_)) {
          return -kAbsorbed;
        }
      }
      extend(out, stream, kChunk);
    }
    return level();
  }

  std::uint64_t work() const { return work_; }

 private:
  void begin() {
    arena_.clear();
    pos_ = Point{};
    arena_.insert(pos_);
    t_ = 0;
    size_ = 1;
    sup_ = 1.0;
    reached_ = threshold_ <= 1;
    dead_ = false;
  }

  bool done() const { return t_ == n_ || (settle_ && (reached_ || dead_)); }
  double level() const { return reached_ ? kAbsorbed : sup_; }

  bool observe(std::size_t i, std::size_t size, std::size_t t0) {
    const std::size_t t = t0 + i + 1;
    size_ = size;
    if (!reached_) {
      if (size >= threshold_) {
        reached_ = true;
      } else {
        sup_ = std::max(sup_, static_cast<double>(size) - slope_ * static_cast<double>(t));
        if (size + (n_ - t) < threshold_) dead_ = true;
      }
    }
    if (cross_ && (reached_ || sup_ > *cross_)) return true;
    return settle_ && (reached_ || dead_);
  }

  void replay(const StepIndex* src, std::size_t count, std::vector<StepIndex>& out) {
    const Atom* atoms = dist_.atoms().data();
    Point s = pos_;
    const StepIndex* p = src;
    const std::size_t t0 = t_;
    const std::size_t used = arena_.insert_sequence_until(
        count, [&] { return s = s + atoms[*p++].step; },
        [&](std::size_t i, std::size_t size) { return observe(i, size, t0); });
    out.insert(out.end(), src, src + used);
    pos_ = s;
    t_ += used;
    work_ += used;
  }

  void extend(std::vector<StepIndex>& out, StepStream& stream, std::size_t limit = SIZE_MAX) {
    constexpr std::size_t kChunk = 512;
    std::array<StepIndex, kChunk> buf;
    std::size_t budget = std::min(limit, n_ - t_);
    while (budget > 0 && !done()) {
      const std::size_t len = std::min(kChunk, budget);
      for (std::size_t i = 0; i < len; ++i) buf[i] = static_cast<StepIndex>(stream.next_index());
      const std::size_t before = t_;
      replay(buf.data(), len, out);
      budget -= t_ - before;
    }
  }

  const StepDistribution& dist_;
  std::size_t n_;
  std::size_t threshold_;
  double slope_;
  bool settle_;
  SiteSet arena_;
  Point pos_{};
  std::size_t t_ = 0;
  std::size_t size_ = 1;
  double sup_ = 1.0;
  bool reached_ = false;
  bool dead_ = false;
  std::optional<double> cross_;
  std::uint64_t work_ = 0;
};

struct ReplicationResult {
  double log_p = 0.0;
  std::uint64_t work = 0;
  std::size_t iterations = 0;
};

ReplicationResult run_replication(const StepDistribution& dist, std::size_t n, std::size_t threshold,
                                  const SplittingOptions& opt, double schedule_slope, const SeedRecord& rep_seed) {
  const std::size_t N = opt.particles;
  const auto kill = static_cast<std::size_t>(std::ceil(opt.kill_fraction * static_cast<double>(N)));
  const double slope = schedule_slope * static_cast<double>(threshold) / static_cast<double>(n);
  Regrower grower(dist, n, threshold, slope, opt.pivot == PivotRule::crossing);
  std::vector<Particle> particles(N);
  {
    const SeedRecord init = rep_seed.child(0);
    for (std::size_t i = 0; i < N; ++i) {
      StepStream stream(dist, init.child(i));
      particles[i].level = grower.fresh(particles[i].steps, stream);
    }
  }
  ReplicationResult res;
  std::vector<double> levels(N);
  std::vector<std::size_t> killed, survivors;
  std::vector<StepIndex> scratch;
  std::size_t stalled = 0;
  for (std::size_t iter = 0;; ++iter) {
    for (std::size_t i = 0; i < N; ++i) levels[i] = particles[i].level;
    std::nth_element(levels.begin(), levels.begin() + static_cast<std::ptrdiff_t>(kill - 1), levels.end());
    const double z = levels[kill - 1];
    if (z == kAbsorbed) {
      std::size_t hits = 0;
      for (const auto& p : particles) hits += p.level == kAbsorbed;
      res.log_p += std::log(static_cast<double>(hits) / static_cast<double>(N));
      res.iterations = iter;
      break;
    }
    if (iter >= opt.max_iterations) {
      throw Error(ErrorCode::Stagnation, "splitting hit the iteration cap at level " + csv::num(z));
    }
    killed.clear();
    survivors.clear();
    for (std::size_t i = 0; i < N; ++i) (particles[i].level <= z ? killed : survivors).push_back(i);
    if (survivors.empty()) {
      throw Error(ErrorCode::Stagnation, "all " + std::to_string(N) + " particles tie at level " + csv::num(z));
    }
    res.log_p += std::log(static_cast<double>(survivors.size()) / static_cast<double>(N));

    const SeedRecord iter_seed = rep_seed.child(1 + iter);
    Engine pick = iter_seed.engine();
    std::size_t accepted = 0;
    for (std::size_t j : killed) {
      const Particle& parent = particles[survivors[uniform_index(pick, survivors.size())]];
      Particle& child = particles[j];
      StepStream stream(dist, iter_seed.child(j));
      if (opt.pivot == PivotRule::crossing) {
        child.level = grower.regrow_after_crossing(parent.steps, z, child.steps, stream);
        ++accepted;
        continue;
      }
      child.steps = parent.steps;
      child.level = parent.level;
      for (std::size_t s = 0; s < opt.mutation_steps; ++s) {
        const std::size_t pivot = uniform_index(stream.engine(), n);
        const double level = grower.propose(child.steps, pivot, z, scratch, stream);
        if (level > z) {
          child.steps.swap(scratch);
          child.level = level;
          ++accepted;
        }
      }
    }
    stalled = accepted == 0 ? stalled + 1 : 0;
    if (stalled >= opt.max_stalled_iterations) {
      throw Error(ErrorCode::Stagnation, "no mutation accepted in " + std::to_string(stalled) +
                                             " consecutive iterations at level " + csv::num(z));
    }
  }
  res.work = grower.work();
  return res;
}

}  // namespace

std::string to_string(TailMethod m) { return m == TailMethod::naive ? "naive" : "splitting"; }

std::string to_string(PivotRule r) { return r == PivotRule::crossing ? "crossing" : "uniform_mcmc"; }

PivotRule pivot_rule_from_string(const std::string& s) {
  if (s == "crossing") return PivotRule::crossing;
  if (s == "uniform_mcmc") return PivotRule::uniform_mcmc;
  throw Error(ErrorCode::InvalidArgument, "unknown pivot rule '" + s + "'");
}

std::string TailEstimate::csv_header() {
  return "dist_id,n,theta,method,p_hat,ci_low,ci_high,work,master_seed,threshold,log_p_hat,log_ci_low,log_ci_high,schedule_slope";
}

std::string TailEstimate::csv_row() const {
  return dist_id + ',' + std::to_string(n) + ',' + csv::num(theta) + ',' + to_string(method) + ',' + csv::num(p_hat) +
         ',' + csv::num(ci_low) + ',' + csv::num(ci_high) + ',' + std::to_string(work) + ',' +
         std::to_string(master_seed) + ',' + std::to_string(threshold) + ',' + csv::num(log_p_hat) + ',' +
         csv::num(log_ci_low) + ',' + csv::num(log_ci_high) + ',' + csv::num(schedule_slope);
}

double theoretical_exponent(std::size_t n, double theta) {
  if (!(theta >= 1.0)) throw Error(ErrorCode::DomainError, "theta must be >= 1, got " + csv::num(theta));
  if (n < 1) throw Error(ErrorCode::DomainError, "n must be >= 1");
  return std::pow(static_cast<double>(n), 1.0 - 1.0 / theta);
}

std::size_t tail_threshold(double theta, double r_hat) {
  return static_cast<std::size_t>(std::ceil(theta * r_hat));
}

void check_regime(std::size_t n, double theta, double r_hat) {
  if (!(theta >= 1.0)) throw Error(ErrorCode::RegimeViolation, "theta must be >= 1, got " + csv::num(theta));
  if (theta * r_hat > static_cast<double>(n)) {
    throw Error(ErrorCode::RegimeViolation, "theta * r_n = " + csv::num(theta * r_hat) + " exceeds n = " +
                                                std::to_string(n));
  }
}

TailEstimate naive_tail_at(const StepDistribution& dist, std::size_t n, std::size_t threshold, std::uint64_t N,
                           const SeedRecord& seed, unsigned workers, double z) {
  if (N < 1) throw Error(ErrorCode::InvalidArgument, "naive tail needs N >= 1");
  const auto ranges = sample_ranges(dist, n, N, seed, workers);
  return from_counts(dist, n, threshold, count_at_least(ranges, threshold), N, z, seed);
}

TailEstimate naive_tail(const StepDistribution& dist, std::size_t n, double theta, double r_hat, std::uint64_t N,
                        const SeedRecord& seed, unsigned workers, double z) {
  check_regime(n, theta, r_hat);
  auto e = naive_tail_at(dist, n, tail_threshold(theta, r_hat), N, seed, workers, z);
  e.theta = theta;
  return e;
}

ThresholdSensitivity naive_sensitivity(const StepDistribution& dist, std::size_t n, double theta, double r_hat,
                                       std::uint64_t N, const SeedRecord& seed, unsigned workers) {
  check_regime(n, theta, r_hat);
  if (N < 1) throw Error(ErrorCode::InvalidArgument, "naive tail needs N >= 1");
  const auto ranges = sample_ranges(dist, n, N, seed, workers);
  const std::size_t t = tail_threshold(theta, r_hat);
  const double z = 1.959963984540054;
  ThresholdSensitivity out{from_counts(dist, n, t > 0 ? t - 1 : 0, count_at_least(ranges, t > 0 ? t - 1 : 0), N, z, seed),
                           from_counts(dist, n, t, count_at_least(ranges, t), N, z, seed),
                           from_counts(dist, n, t + 1, count_at_least(ranges, t + 1), N, z, seed)};
  out.lower.theta = out.centre.theta = out.upper.theta = theta;
  return out;
}

SlopeSelection select_schedule_slope(const StepDistribution& dist, std::size_t n, std::size_t threshold,
                                     const SplittingOptions& options, const SeedRecord& seed, unsigned workers) {
  if (options.pilot_particles < 100 || options.pilot_replications < 1) {
    throw Error(ErrorCode::InvalidArgument, "pilot needs >= 100 particles and >= 1 replication");
  }
  SplittingOptions pilot = options;
  pilot.particles = options.pilot_particles;
  pilot.replications = options.pilot_replications;
  const SeedRecord branch = seed.child(kPilotBranch);

  SlopeSelection out;
  auto score = [&](double slope) {
    for (std::size_t i = 0; i < out.tried.size(); ++i) {
      if (std::abs(out.tried[i] - slope) < 1e-9) return out.median_log_p[i];
    }
    const SeedRecord cand = branch.child(out.tried.size());
    std::vector<double> logs(pilot.replications, kNegInf);
    std::vector<std::uint64_t> work(pilot.replications, 0);
    run_tasks(logs.size(), workers, [&](std::size_t r) {
      try {
        const auto rep = run_replication(dist, n, threshold, pilot, slope, cand.child(r));
        logs[r] = rep.log_p;
        work[r] = rep.work;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::Stagnation) throw;
      }
    });
    for (auto w : work) out.work += w;
    std::sort(logs.begin(), logs.end());
    const double med = logs[logs.size() / 2];
    out.tried.push_back(slope);
    out.median_log_p.push_back(med);
    return med;
  };

  double best = 0.85;
  double best_score = kNegInf;
  auto consider = [&](double slope) {
    // The range grows by at most one site per step, so a per-step slope of 1
    // or more leaves the score flat at its starting value.
    if (slope <= 0.0 || slope >= 1.0 || slope * static_cast<double>(threshold) >= static_cast<double>(n)) return;
    const double s = score(slope);
    if (s > best_score) {
      best_score = s;
      best = slope;
    }
  };
  for (double s : {0.65, 0.75, 0.85, 0.95}) consider(s);
  for (double step : {0.05, 0.025}) {
    const double centre = best;
    consider(centre - step);
    consider(centre + step);
  }
  out.slope = best;
  return out;
}

TailEstimate splitting_tail_at(const StepDistribution& dist, std::size_t n, std::size_t threshold,
                               const SplittingOptions& options, const SeedRecord& seed, unsigned workers) {
  if (options.particles < 100) throw Error(ErrorCode::InvalidArgument, "splitting needs at least 100 particles");
  if (!(options.kill_fraction > 0.0 && options.kill_fraction < 0.5)) {
    throw Error(ErrorCode::InvalidArgument, "kill_fraction must lie in (0, 1/2)");
  }
  if (options.replications < 1) throw Error(ErrorCode::InvalidArgument, "splitting needs >= 1 replication");
  if (dist.size() > 256) throw Error(ErrorCode::InvalidArgument, "splitting supports at most 256 atoms");
  if (options.pivot == PivotRule::uniform_mcmc && options.mutation_steps < 1) {
    throw Error(ErrorCode::InvalidArgument, "uniform_mcmc needs mutation_steps >= 1");
  }

  TailEstimate e;
  if (options.schedule_slope) {
    e.schedule_slope = *options.schedule_slope;
  } else {
    const auto pick = select_schedule_slope(dist, n, threshold, options, seed, workers);
    e.schedule_slope = pick.slope;
    e.work += pick.work;
  }
  std::vector<ReplicationResult> reps(options.replications);
  run_tasks(reps.size(), workers, [&](std::size_t r) {
    reps[r] = run_replication(dist, n, threshold, options, e.schedule_slope, seed.child(r));
  });

  e.dist_id = dist.id();
  e.n = n;
  e.threshold = threshold;
  e.method = TailMethod::splitting;
  e.master_seed = seed.master_seed;
  double top = kNegInf;
  for (const auto& r : reps) {
    e.work += r.work;
    e.replicate_log_p.push_back(r.log_p);
    top = std::max(top, r.log_p);
  }
  const double R = static_cast<double>(reps.size());
  if (top == kNegInf) {
    e.log_p_hat = e.log_ci_low = e.log_ci_high = kNegInf;
  } else {
    // mean and spread of p_r / exp(top)
    RunningStats rel;
    for (const auto& r : reps) rel.add(std::exp(r.log_p - top));
    e.log_p_hat = top + std::log(rel.mean);
    if (reps.size() >= 2) {
      const double rse = rel.stddev() / (std::sqrt(R) * rel.mean);
      const double t = student_t_quantile_two_sided(options.confidence, R - 1.0);
      e.log_ci_low = e.log_p_hat - t * rse;
      e.log_ci_high = std::min(0.0, e.log_p_hat + t * rse);
    } else {
      e.log_ci_low = kNegInf;
      e.log_ci_high = 0.0;
    }
  }
  e.p_hat = std::exp(e.log_p_hat);
  e.ci_low = std::exp(e.log_ci_low);
  e.ci_high = std::exp(e.log_ci_high);
  return e;
}

TailEstimate splitting_tail(const StepDistribution& dist, std::size_t n, double theta, double r_hat,
                            const SplittingOptions& options, const SeedRecord& seed, unsigned workers) {
  check_regime(n, theta, r_hat);
  auto e = splitting_tail_at(dist, n, tail_threshold(theta, r_hat), options, seed, workers);
  e.theta = theta;
  return e;
}

bool informative(const TailEstimate& e) {
  return e.log_ci_low > kNegInf && e.log_p_hat < 0.0 && e.log_ci_high - e.log_ci_low < std::log(10.0);
}

ExponentFit fit_exponent(const std::vector<TailEstimate>& estimates, double theta) {
  ExponentFit fit;
  fit.theta = theta;
  fit.predicted = 1.0 - 1.0 / theta;
  std::vector<double> x, y;
  std::vector<std::size_t> seen;
  for (const auto& e : estimates) {
    if (std::abs(e.theta - theta) > 1e-12) {
      throw Error(ErrorCode::InvalidArgument, "estimate at theta " + csv::num(e.theta) + " in a fit at theta " +
                                                  csv::num(theta));
    }
    if (!informative(e)) {
      ++fit.excluded;
      continue;
    }
    x.push_back(std::log(static_cast<double>(e.n)));
    y.push_back(std::log(-e.log_p_hat));
    fit.n_grid.push_back(e.n);
    if (std::find(seen.begin(), seen.end(), e.n) == seen.end()) seen.push_back(e.n);
    const double c = -e.log_p_hat / theoretical_exponent(e.n, theta);
    fit.c_low_emp = fit.n_grid.size() == 1 ? c : std::max(fit.c_low_emp, c);
    fit.c_up_emp = fit.n_grid.size() == 1 ? c : std::min(fit.c_up_emp, c);
  }
  if (seen.size() < 4) {
    throw Error(ErrorCode::InsufficientData,
                std::to_string(seen.size()) + " informative estimates at distinct n; need 4");
  }
  const auto line = least_squares(x, y);
  fit.slope = line.slope;
  fit.intercept = line.intercept;
  fit.slope_stderr = line.slope_stderr;
  return fit;
}

std::string ExponentFit::to_json() const {
  nlohmann::json j;
  j["theta"] = theta;
  j["n_grid"] = n_grid;
  j["slope"] = slope;
  j["intercept"] = intercept;
  j["slope_stderr"] = slope_stderr;
  j["predicted"] = predicted;
  j["c_low_emp"] = c_low_emp;
  j["c_up_emp"] = c_up_emp;
  j["excluded"] = excluded;
  return j.dump(2) + "\n";
}

double drift_strategy_log_floor(const StepDistribution& dist, std::size_t n) {
  double c1 = 0.0;
  for (const auto& a : dist.atoms()) {
    if (a.step.x > 0) c1 = std::max(c1, a.p);
  }
  if (c1 == 0.0) throw Error(ErrorCode::NoDriftAtom, "no atom with a positive first coordinate");
  return static_cast<double>(n) * std::log(c1);
}

double drift_strategy_floor(const StepDistribution& dist, std::size_t n) {
  return std::exp(drift_strategy_log_floor(dist, n));
}

}  // namespace rangelab
