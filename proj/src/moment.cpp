#include "rangelab/moment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rangelab/csv.hpp"
#include "rangelab/error.hpp"
#include "rangelab/range.hpp"
#include "rangelab/stats.hpp"

namespace rangelab {

namespace mp = boost::multiprecision;

double leading_term_r(const CovarianceData& cov, std::size_t n) {
  if (n < 2) throw Error(ErrorCode::DomainError, "log n must be positive (n >= 2)");
  const double nn = static_cast<double>(n);
  return cov.e1 * nn / std::log(nn);
}

double expansion_r(const CovarianceData& cov, std::size_t n) {
  if (n < 2) throw Error(ErrorCode::DomainError, "expansion needs n >= 2, got " + std::to_string(n));
  const double nn = static_cast<double>(n);
  const double l = std::log(nn);
  return cov.e1 * nn / l + cov.e1 * nn / (l * l);
}

namespace {

std::size_t batch_count(std::uint64_t N) { return static_cast<std::size_t>((N + kMeanBatch - 1) / kMeanBatch); }

std::uint64_t batch_size(std::uint64_t N, std::size_t b) {
  return std::min<std::uint64_t>(kMeanBatch, N - static_cast<std::uint64_t>(b) * kMeanBatch);
}

}  // namespace

std::vector<std::uint32_t> sample_ranges(const StepDistribution& dist, std::size_t n, std::uint64_t N,
                                         const SeedRecord& seed, unsigned workers) {
  std::vector<std::uint32_t> out(N);
  run_tasks(batch_count(N), workers, [&](std::size_t b) {
    StepStream stream(dist, seed.child(b));
    SiteSet& arena = thread_arena();
    const std::uint64_t first = static_cast<std::uint64_t>(b) * kMeanBatch;
    for (std::uint64_t i = 0; i < batch_size(N, b); ++i) {
      out[first + i] = static_cast<std::uint32_t>(streaming_range(stream, n, arena));
    }
  });
  return out;
}

MeanRangeEntry mc_mean_range(const StepDistribution& dist, std::size_t n, std::uint64_t N,
                             const SeedRecord& seed, unsigned workers) {
  if (N < 2) throw Error(ErrorCode::InvalidArgument, "mean range needs N >= 2 samples");
  std::vector<RunningStats> parts(batch_count(N));
  run_tasks(parts.size(), workers, [&](std::size_t b) {
    StepStream stream(dist, seed.child(b));
    SiteSet& arena = thread_arena();
    RunningStats s;
    for (std::uint64_t i = 0; i < batch_size(N, b); ++i) {
      s.add(static_cast<double>(streaming_range(stream, n, arena)));
    }
    parts[b] = s;
  });
  RunningStats total;
  for (const auto& p : parts) total.merge(p);

  MeanRangeEntry e;
  e.dist_id = dist.id();
  e.n = n;
  e.r_hat = total.mean;
  e.std_error = total.stderr_mean();
  e.samples = N;
  if (n >= 2) e.expansion = expansion_r(covariance(dist), n);
  e.master_seed = seed.master_seed;
  return e;
}

Rational ExactPmf::total() const {
  Rational t = 0;
  for (const auto& [r, p] : pmf) t += p;
  return t;
}

Rational ExactPmf::mean() const {
  Rational m = 0;
  for (const auto& [r, p] : pmf) m += p * r;
  return m;
}

Rational ExactPmf::tail_at_least(std::size_t k) const {
  Rational t = 0;
  for (auto it = pmf.lower_bound(k); it != pmf.end(); ++it) t += it->second;
  return t;
}

double ExactPmf::probability(std::size_t k) const {
  const auto it = pmf.find(k);
  return it == pmf.end() ? 0.0 : static_cast<double>(it->second);
}

namespace {

template <class Weight>
class Enumerator {
 public:
  Enumerator(const std::vector<Point>& steps, const std::vector<Weight>& weights, std::size_t n)
      : steps_(steps), weights_(weights), n_(n), acc_(n + 2, Weight(0)) {
    int reach = 0;
    for (const auto& s : steps) reach = std::max({reach, std::abs(s.x), std::abs(s.y)});
    radius_ = reach * static_cast<int>(n);
    side_ = 2 * radius_ + 1;
    counts_.assign(static_cast<std::size_t>(side_) * static_cast<std::size_t>(side_), 0);
  }

  std::vector<Weight> run() {
    visit({0, 0});
    descend(0, {0, 0}, 1, Weight(1));
    return std::move(acc_);
  }

 private:
  std::size_t cell(Point p) const {
    return static_cast<std::size_t>(p.x + radius_) * static_cast<std::size_t>(side_) +
           static_cast<std::size_t>(p.y + radius_);
  }
  bool visit(Point p) { return counts_[cell(p)]++ == 0; }
  void leave(Point p) { --counts_[cell(p)]; }

  void descend(std::size_t depth, Point pos, std::size_t range, const Weight& weight) {
    if (depth == n_) {
      acc_[range] += weight;
      return;
    }
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      const Point next = pos + steps_[i];
      const bool fresh = visit(next);
      descend(depth + 1, next, range + (fresh ? 1 : 0), Weight(weight * weights_[i]));
      leave(next);
    }
  }

  const std::vector<Point>& steps_;
  const std::vector<Weight>& weights_;
  std::size_t n_;
  std::vector<Weight> acc_;
  int radius_ = 0;
  int side_ = 1;
  std::vector<std::uint32_t> counts_;
};

}  // namespace

ExactPmf exact_pmf(const StepDistribution& dist, std::size_t n, std::uint64_t budget) {
  const double paths = std::pow(static_cast<double>(dist.size()), static_cast<double>(n));
  if (paths > static_cast<double>(budget)) {
    throw Error(ErrorCode::BudgetExceeded, std::to_string(dist.size()) + "^" + std::to_string(n) +
                                               " paths exceed the enumeration budget " +
                                               std::to_string(budget));
  }

  // Integer weights over a common denominator D: w_i = p_i * D.
  mp::cpp_int denom = 1;
  for (const auto& a : dist.atoms()) denom = mp::lcm(denom, mp::denominator(a.prob));
  std::vector<mp::cpp_int> numerators;
  std::vector<Point> steps;
  for (const auto& a : dist.atoms()) {
    numerators.push_back(mp::numerator(a.prob) * (denom / mp::denominator(a.prob)));
    steps.push_back(a.step);
  }
  const mp::cpp_int scale = mp::pow(denom, static_cast<unsigned>(n));

  ExactPmf out;
  out.n = n;
  auto collect = [&](const auto& acc) {
    for (std::size_t r = 1; r < acc.size(); ++r) {
      if (acc[r] != 0) out.pmf[r] = Rational(mp::cpp_int(acc[r]), scale);
    }
  };
  if (scale < mp::cpp_int(std::numeric_limits<std::int64_t>::max())) {
    // Every partial sum is bounded by D^n.
    std::vector<std::uint64_t> w;
    for (const auto& v : numerators) w.push_back(static_cast<std::uint64_t>(v));
    collect(Enumerator<std::uint64_t>(steps, w, n).run());
  } else {
    collect(Enumerator<mp::cpp_int>(steps, numerators, n).run());
  }
  return out;
}

IntersectionMeanReport intersection_mean_check(const StepDistribution& dist, std::size_t m,
                                               std::uint64_t N, const SeedRecord& seed,
                                               unsigned workers) {
  if (m < 1) throw Error(ErrorCode::InvalidArgument, "block length must be positive");
  if (N < 100) throw Error(ErrorCode::InvalidArgument, "intersection check needs N >= 100");

  struct Part {
    RunningStats inter, block, joint, diff;
    std::uint64_t violations = 0;
  };
  std::vector<Part> parts(batch_count(N));
  run_tasks(parts.size(), workers, [&](std::size_t b) {
    Part part;
    for (std::uint64_t i = 0; i < batch_size(N, b); ++i) {
      const auto path = sample_path(dist, 2 * m - 1, seed.child(b).child(i));
      const auto inter = block_intersection(path, 1, m).size;
      const auto r1 = window_range(path, 0, m).range;
      const auto r2 = window_range(path, m, 2 * m).range;
      const auto r12 = window_range(path, 0, 2 * m).range;
      const auto via_identity = static_cast<std::int64_t>(r1 + r2) - static_cast<std::int64_t>(r12);
      if (static_cast<std::int64_t>(inter) != via_identity) ++part.violations;
      part.inter.add(static_cast<double>(inter));
      part.block.add(static_cast<double>(r1));
      part.block.add(static_cast<double>(r2));
      part.joint.add(static_cast<double>(r12));
      part.diff.add(static_cast<double>(static_cast<std::int64_t>(inter) - via_identity));
    }
    parts[b] = part;
  });
  Part total;
  for (const auto& p : parts) {
    total.inter.merge(p.inter);
    total.block.merge(p.block);
    total.joint.merge(p.joint);
    total.diff.merge(p.diff);
    total.violations += p.violations;
  }

  IntersectionMeanReport rep;
  rep.m = m;
  rep.N = N;
  rep.mean_intersection = total.inter.mean;
  rep.intersection_stderr = total.inter.stderr_mean();
  rep.r_m_hat = total.block.mean;
  rep.r_2m_hat = total.joint.mean;
  rep.identity_mean = 2.0 * rep.r_m_hat - rep.r_2m_hat;
  rep.paired_diff_mean = total.diff.mean;
  const double se = total.diff.stderr_mean();
  rep.z_score = se > 0.0 ? rep.paired_diff_mean / se : 0.0;
  rep.identity_violations = total.violations;
  rep.asymptotic_ratio = m >= 2 ? rep.mean_intersection /
                                      (rep.r_m_hat * 2.0 * std::log(2.0) / std::log(static_cast<double>(m)))
                                : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

std::uint64_t MeanTable::table_task_index(std::size_t n) { return 0x6D65616E00000000ULL ^ n; }

const MeanRangeEntry* MeanTable::find(const std::string& dist_id, std::size_t n) const {
  const MeanRangeEntry* best = nullptr;
  for (const auto& e : entries_) {
    if (e.dist_id == dist_id && e.n == n && (!best || e.samples > best->samples)) best = &e;
  }
  return best;
}

const MeanRangeEntry& MeanTable::ensure(const StepDistribution& dist, std::size_t n, std::uint64_t N,
                                        std::uint64_t master_seed, unsigned workers) {
  auto match = [&]() -> const MeanRangeEntry* {
    for (const auto& e : entries_) {
      if (e.dist_id == dist.id() && e.n == n && e.samples == N && e.master_seed == master_seed) return &e;
    }
    return nullptr;
  };
  if (const auto* e = match()) return *e;
  insert(mc_mean_range(dist, n, N, SeedRecord{master_seed, table_task_index(n)}, workers));
  return *match();
}

void MeanTable::insert(MeanRangeEntry entry) {
  auto same = [&](const MeanRangeEntry& e) {
    return e.dist_id == entry.dist_id && e.n == entry.n && e.samples == entry.samples &&
           e.master_seed == entry.master_seed;
  };
  std::erase_if(entries_, same);
  entries_.push_back(std::move(entry));
  std::sort(entries_.begin(), entries_.end(), [](const MeanRangeEntry& a, const MeanRangeEntry& b) {
    return std::tie(a.dist_id, a.n, a.samples, a.master_seed) < std::tie(b.dist_id, b.n, b.samples, b.master_seed);
  });
}

std::string MeanTable::to_csv() const {
  std::string out = "dist_id,n,N,r_hat,stderr,master_seed\n";
  for (const auto& e : entries_) {
    out += e.dist_id + "," + csv::num(static_cast<std::uint64_t>(e.n)) + "," + csv::num(e.samples) + "," +
           csv::num(e.r_hat) + "," + csv::num(e.std_error) + "," + csv::num(e.master_seed) + "\n";
  }
  return out;
}

MeanTable MeanTable::from_csv(const std::string& text) {
  MeanTable t;
  const auto rows = csv::parse(text);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 6) throw Error(ErrorCode::InvalidArgument, "mean table row " + std::to_string(i) + " malformed");
    MeanRangeEntry e;
    e.dist_id = r[0];
    e.n = std::stoull(r[1]);
    e.samples = std::stoull(r[2]);
    e.r_hat = std::stod(r[3]);
    e.std_error = std::stod(r[4]);
    e.master_seed = std::stoull(r[5]);
    t.insert(std::move(e));
  }
  return t;
}

void MeanTable::save(const std::string& path) const { csv::write_file(path, to_csv()); }

MeanTable MeanTable::load(const std::string& path) { return from_csv(csv::read_file(path)); }

}  // namespace rangelab
