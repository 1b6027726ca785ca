#include <cmath>
#include <map>

#include "doctest.h"
#include "rangelab/blocks.hpp"
#include "rangelab/error.hpp"
#include "rangelab/range.hpp"

using namespace rangelab;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no exception");
  return ErrorCode::InvalidArgument;
}

WalkPath path_of(const std::vector<Point>& steps) { return path_from_steps(steps); }

const Point E{1, 0}, W{-1, 0}, N{0, 1}, S{0, -1};

// Law of the first coordinate of a simple-walk block of m positions: weight
// of every endpoint over step sequences that satisfy B, by brute force.
std::map<int, double> enumerate_b(int m) {
  const double root = std::sqrt(static_cast<double>(m));
  std::map<int, double> out;
  std::function<void(int, int, double)> go = [&](int j, int x, double w) {
    if (!(x > -root && x < 3 * root)) return;
    if (j == m - 1) {
      if (x > 2 * root && x < 3 * root) out[x] += w;
      return;
    }
    go(j + 1, x - 1, w * 0.25);
    go(j + 1, x, w * 0.5);
    go(j + 1, x + 1, w * 0.25);
  };
  go(0, 0, 1.0);
  return out;
}

MeanRangeEntry mean_entry(std::size_t positions, std::uint64_t N, std::uint64_t tag) {
  return mc_mean_range(simple_random_walk(), positions - 1, N, {77, tag});
}

}  // namespace

TEST_CASE("block sizes in both regimes") {
  const auto up = make_block_params(BlockRegime::upper, 10000, 2.0, 1.0);
  CHECK(up.m == 738);
  CHECK(up.M == 14);
  const auto low = make_block_params(BlockRegime::lower, 10000, 2.0, 1.0);
  CHECK(low.m == 36);
  CHECK(low.M == 278);
  for (const auto& p : {up, low}) {
    CHECK(p.m * p.M >= p.n);
    CHECK(p.block_begin(1) == 0);
    CHECK(p.block_end(p.M) == p.n + 1);
  }
  CHECK(code_of([] { make_block_params(BlockRegime::lower, 10, 2.0, 3.0); }) == ErrorCode::DegenerateBlocks);
  CHECK(code_of([] { make_block_params(BlockRegime::upper, 3, 2.0, 1.0); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { make_block_params(BlockRegime::upper, 100, 0.5, 1.0); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { make_block_params(BlockRegime::upper, 100, 2.0, 0.0); }) == ErrorCode::InvalidArgument);
  CHECK(block_regime_from_string(to_string(BlockRegime::lower)) == BlockRegime::lower);
}

TEST_CASE("B on fixture paths, open intervals") {
  CHECK_FALSE(eval_B(path_of(std::vector<Point>(99, E)), 1, 100));  // endpoint 99 > 30

  auto shaped = [](int east, int west_first) {
    std::vector<Point> steps(west_first, W);
    for (int i = 0; i < east + west_first; ++i) steps.push_back(E);
    while (steps.size() < 99) steps.push_back(steps.size() % 2 ? N : S);
    return path_of(steps);
  };
  CHECK(eval_B(shaped(25, 0), 1, 100));       // 25 in (20, 30)
  CHECK_FALSE(eval_B(shaped(20, 0), 1, 100));  // boundary values are excluded
  CHECK_FALSE(eval_B(shaped(30, 0), 1, 100));
  CHECK(eval_B(shaped(25, 9), 1, 100));        // dips to -9 > -10
  CHECK_FALSE(eval_B(shaped(25, 10), 1, 100)); // touches -10

  // m = 4: three steps cannot reach (4, 6).
  CHECK_FALSE(eval_B(path_of({E, E, E}), 1, 4));
  CHECK(ConditionedBlockSampler(simple_random_walk(), 4, 4).probability() == 0.0);

  CHECK(code_of([] { eval_B(path_of({E, E}), 1, 4); }) == ErrorCode::OutOfBounds);
  CHECK(code_of([] { eval_B(path_of(std::vector<Point>(10, E)), 0, 4); }) == ErrorCode::OutOfBounds);
}

TEST_CASE("conditioned sampler: P(B) matches enumeration") {
  for (int m : {9, 12, 16}) {
    double total = 0.0;
    for (const auto& [x, w] : enumerate_b(m)) total += w;
    const ConditionedBlockSampler s(simple_random_walk(), m, m);
    CHECK(s.probability() == doctest::Approx(total).epsilon(1e-10));
  }
}

TEST_CASE("conditioned sampler draws the conditional law") {
  const int m = 12;
  const auto exact = enumerate_b(m);
  double total = 0.0;
  for (const auto& [x, w] : exact) total += w;
  const ConditionedBlockSampler s(simple_random_walk(), m, m);
  Engine eng = SeedRecord{21, 0}.engine();
  const int draws = 40000;
  std::map<int, int> seen;
  std::vector<Point> block;
  for (int i = 0; i < draws; ++i) {
    block.clear();
    s.sample(eng, Point{5, -3}, block, true);
    REQUIRE(block.size() == static_cast<std::size_t>(m));
    WalkPath p;
    for (const Point& q : block) p.positions.push_back(q - Point{5, -3});
    REQUIRE(is_valid_path(p, simple_random_walk()));
    REQUIRE(eval_B(p, 1, m));
    ++seen[p.positions.back().x];
  }
  for (const auto& [x, w] : exact) {
    const double q = w / total;
    const double sd = std::sqrt(q * (1 - q) / draws);
    CHECK(std::abs(seen[x] / double(draws) - q) < 4 * sd + 1e-12);
  }
}

TEST_CASE("E and I thresholds") {
  const auto d = simple_random_walk();
  const auto path = sample_path(d, 199, {31, 0});
  CHECK(eval_E(path, 1, 100, 50.0, 1e6));          // threshold below 1
  CHECK_FALSE(eval_E(path, 1, 100, 200.0, 0.0));   // threshold above m
  CHECK(code_of([&] { eval_E(path, 1, 2, 1.0, 1.0); }) == ErrorCode::InvalidArgument);

  const auto r100 = mean_entry(100, 5000, 1);
  std::uint64_t hits = 0;
  for (std::uint64_t i = 0; i < 2000; ++i) hits += eval_E(sample_path(d, 99, {32, i}), 1, 100, r100.r_hat, 0.0);
  CHECK(hits > 400);
  CHECK(hits < 1600);

  // Straight east: neighbouring blocks are disjoint.
  CHECK(eval_I(path_of(std::vector<Point>(19, E)), 1, 10, 1.0, 1e-9));
  // East then back west over the same sites: nine shared sites.
  std::vector<Point> back(9, E);
  for (int i = 0; i < 10; ++i) back.push_back(W);
  const auto rev = path_of(back);
  CHECK(block_intersection(rev, 1, 10).size == 9);
  CHECK_FALSE(eval_I(rev, 1, 10, 10.0, 1.0));
  CHECK(eval_I(rev, 1, 10, 10.0, 1000.0));
  CHECK(code_of([&] { eval_I(rev, 2, 10, 10.0, 1.0); }) == ErrorCode::OutOfBounds);
}

TEST_CASE("event probabilities") {
  const auto d = simple_random_walk();
  const auto r1000 = mean_entry(1000, 4000, 2);
  const auto rep = estimate_event_probs(d, 1000, 24.0, 2000, {41, 0}, r1000);
  // 1 - 2 log 2 / (beta / 6) at beta = 24, less 0.05 for finite m.
  MESSAGE("p_I at beta 24: " << rep.p_I.estimate);
  CHECK(rep.p_I.estimate >= 1 - 2 * std::log(2.0) / 4.0 - 0.05);

  // Thresholds are monotone in beta and the same walks are reused.
  const auto r256 = mean_entry(256, 4000, 3);
  double last = -1.0;
  for (double beta : {0.5, 1.0, 2.0, 4.0}) {
    const auto e = estimate_event_probs(d, 256, beta, 1000, {42, 0}, r256);
    CHECK(e.p_E.estimate >= last);
    last = e.p_E.estimate;
  }

  double min_pb = 1.0;
  for (std::size_t m : {64ul, 256ul, 1024ul}) {
    const auto e = estimate_event_probs(d, m, 2.0, 20000, {43, m}, mean_entry(m, 2000, m));
    MESSAGE("m=" << m << " p_B=" << e.p_B.estimate << " exact " << e.p_B_exact << " p_eta|BB=" << e.p_eta_given_BB.estimate);
    CHECK(e.p_B.hits > 0);
    // Wilson interval at z = 4 for the exact value
    const auto wide = wilson_interval(e.p_B.hits, e.p_B.trials, 4.0);
    CHECK(wide.low <= e.p_B_exact);
    CHECK(e.p_B_exact <= wide.high);
    CHECK(e.p_B.low <= e.p_B.estimate);
    CHECK(e.p_B.estimate <= e.p_B.high);
    min_pb = std::min(min_pb, e.p_B_exact);
  }
  MESSAGE("smallest P(B) over m in {64, 256, 1024}: " << min_pb);
  CHECK(min_pb > 0.0);

  CHECK(code_of([&] { estimate_event_probs(d, 7, 1.0, 1000, {1, 0}, mean_entry(7, 100, 4)); }) ==
        ErrorCode::InvalidArgument);
  CHECK(code_of([&] { estimate_event_probs(d, 64, 1.0, 999, {1, 0}, mean_entry(64, 100, 5)); }) ==
        ErrorCode::InvalidArgument);
  CHECK(code_of([&] { estimate_event_probs(d, 64, 1.0, 1000, {1, 0}, r256); }) == ErrorCode::InvalidArgument);
  CHECK(rep.csv_row().find(rep.dist_id) == 0);
}

TEST_CASE("block ranges are subadditive on free paths") {
  const auto d = simple_random_walk();
  const auto p = make_block_params(BlockRegime::lower, 5000, 1.5, 1.0);
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto path = sample_path(d, p.n, {51, i});
    const auto ev = block_events(path, p, 100.0, 100.0);
    REQUIRE(ev.size() == p.M);
    std::size_t sum = 0;
    for (const auto& e : ev) sum += e.block_range;
    CHECK(range_count(path).range <= sum);
    CHECK_FALSE(ev.back().eta.has_value());
    for (std::size_t k = 0; k + 1 < ev.size(); ++k) {
      CHECK(ev[k].eta.has_value());
      CHECK(*ev[k].eta == (ev[k].E && ev[k + 1].E && ev[k].I_ok));
    }
  }
}

TEST_CASE("strategy check on conditioned paths") {
  const auto d = simple_random_walk();
  MeanTable table;
  StrategyOptions o;
  o.samples = 100;
  o.mean_samples = 2000;
  const auto a = strategy_implication_check(d, 20000, 1.2, 2.0, o, {61, 0}, table, 1);
  MESSAGE(a.to_json());
  CHECK(a.b_failures == 0);
  CHECK(a.event_failures == 0);
  CHECK(a.decomposition_failures == 0);
  CHECK(a.disjointness_violations == 0);
  CHECK(a.samples == 100);
  CHECK(a.acceptance > 0.0);
  CHECK(a.acceptance <= 1.0);
  CHECK(std::abs(a.eta_lag2_z) < 4.0);
  CHECK(a.min_range <= a.mean_range);

  MeanTable again;
  const auto b = strategy_implication_check(d, 20000, 1.2, 2.0, o, {61, 0}, again, 3);
  CHECK(a.to_json() == b.to_json());

  // At beta = 0.01 the I threshold is below 1: neighbours must not touch.
  o.samples = 2;
  o.min_attempts = 50;
  o.min_acceptance = 0.5;
  MeanTable t3;
  CHECK(code_of([&] { strategy_implication_check(d, 20000, 1.2, 0.01, o, {62, 0}, t3); }) ==
        ErrorCode::RejectionBudgetExceeded);
}

TEST_CASE("lower-bound certificate arithmetic") {
  EventProbReport r;
  r.p_B = proportion(100, 1000);
  r.p_eta_given_BB = proportion(900, 1000);
  BlockParams p;
  p.M = 14;
  CHECK(lower_bound_certificate(p, r) == doctest::Approx(14 * (std::log(0.1) + std::log(0.25))));
  p.M = 1;
  CHECK(lower_bound_certificate(p, r) == doctest::Approx(std::log(0.1) + std::log(0.25)));
  r.p_eta_given_BB = proportion(750, 1000);
  CHECK(code_of([&] { lower_bound_certificate(p, r); }) == ErrorCode::BoundNotApplicable);
}

TEST_CASE("upper Chebyshev probe") {
  const auto d = simple_random_walk();
  MeanTable table;
  ChebyshevOptions o;
  o.blocks = 4000;
  o.mean_samples = 4000;
  const auto zero = upper_chebyshev_probe(d, 10000, 2.0, 1.0, 0.0, {71, 0}, table, o);
  CHECK(zero.params.m == 738);
  CHECK(zero.params.M == 14);
  CHECK(zero.log_bound == doctest::Approx(0.0).epsilon(1e-12));

  const auto p = upper_chebyshev_probe(d, 10000, 2.0, 1.0, 1.0, {71, 0}, table, o);
  const double M = static_cast<double>(p.params.M);
  CHECK(p.log_bound == doctest::Approx(M * (p.log_mgf - p.lambda * p.params.beta)));
  CHECK(p.log_bound_opt <= 0.0);

  // theta = 1.2 is within naive reach; the bound with the excess actually
  // required must sit above the direct estimate.
  const double r_n = table.ensure(d, 10000, 4000, 71).r_hat;
  const auto direct = naive_tail(d, 10000, 1.2, r_n, 20000, {72, 0});
  const auto q = upper_chebyshev_probe(d, 10000, 1.2, 0.1, 1.0, {71, 1}, table, o, 1, &direct);
  MESSAGE(q.to_json());
  REQUIRE(q.log_bound_required_opt.has_value());
  CHECK(*q.log_bound_required_opt >= direct.log_p_hat);
  CHECK(q.log_bound_required >= direct.log_p_hat);
  CHECK(q.direct_log_p == direct.log_p_hat);
}
