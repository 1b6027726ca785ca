#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "doctest.h"
#include "rangelab/error.hpp"
#include "rangelab/moment.hpp"

using namespace rangelab;

namespace {

// Independent oracle: expand every step sequence explicitly and count its
// sites with std::set; weights multiplied as rationals.
std::map<std::size_t, Rational> brute_pmf(const StepDistribution& d, std::size_t n) {
  std::map<std::size_t, Rational> out;
  std::vector<std::size_t> idx(n, 0);
  while (true) {
    std::set<Point> seen{{0, 0}};
    Point s{};
    Rational w = 1;
    for (std::size_t i = 0; i < n; ++i) {
      s = s + d.atoms()[idx[i]].step;
      seen.insert(s);
      w *= d.atoms()[idx[i]].prob;
    }
    out[seen.size()] += w;
    std::size_t pos = 0;
    while (pos < n && ++idx[pos] == d.size()) idx[pos++] = 0;
    if (pos == n) break;
  }
  return out;
}

}  // namespace

TEST_CASE("expansion_r") {
  const auto cov = covariance(simple_random_walk());
  const double l = std::log(100.0);
  CHECK(expansion_r(cov, 100) == doctest::Approx(std::numbers::pi * 100.0 * (l + 1.0) / (l * l)));
  CHECK(expansion_r(cov, 100) == doctest::Approx(83.0323).epsilon(1e-5));
  CHECK_THROWS_AS(expansion_r(cov, 1), Error);
  try {
    expansion_r(cov, 0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DomainError);
  }
  double prev = 10.0;
  for (std::size_t n : {100ul, 10000ul, 1000000ul, 100000000ul, 10000000000ul}) {
    const double ratio = expansion_r(cov, n) / leading_term_r(cov, n);
    CHECK(ratio > 1.0);
    CHECK(ratio < prev);
    prev = ratio;
  }
  CHECK(prev - 1.0 < 0.05);
}

TEST_CASE("exact pmf closed values") {
  const auto d = simple_random_walk();
  const auto p1 = exact_pmf(d, 1);
  CHECK(p1.pmf.size() == 1);
  CHECK(p1.pmf.at(2) == 1);

  const auto p2 = exact_pmf(d, 2);
  CHECK(p2.pmf.at(2) == Rational(1, 4));
  CHECK(p2.pmf.at(3) == Rational(3, 4));
  CHECK(p2.mean() == Rational(11, 4));
  CHECK(p2.total() == 1);

  const auto p0 = exact_pmf(d, 0);
  CHECK(p0.pmf.at(1) == 1);
}

TEST_CASE("exact pmf agrees with the brute-force oracle") {
  const auto lazy = distribution_from_json(nlohmann::json::parse(
      R"({"atoms": [[2,1,"1/10"],[-2,-1,"1/10"],[0,1,"3/10"],[0,-1,"3/10"],[0,0,"1/5"]]})"));
  for (const auto& d : {simple_random_walk(), diagonal_walk(), lazy}) {
    for (std::size_t n = 0; n <= 6; ++n) {
      const auto exact = exact_pmf(d, n);
      CHECK(exact.total() == 1);
      CHECK(exact.pmf == brute_pmf(d, n));
      for (const auto& [r, p] : exact.pmf) {
        CHECK(r >= 1);
        CHECK(r <= n + 1);
      }
    }
  }
}

TEST_CASE("exact pmf mass is exactly one up to n = 10, and tail sums") {
  const auto d = simple_random_walk();
  for (std::size_t n = 0; n <= 10; ++n) {
    const auto pmf = exact_pmf(d, n);
    CHECK(pmf.total() == 1);
    CHECK(pmf.tail_at_least(0) == 1);
    CHECK(pmf.tail_at_least(n + 2) == 0);
  }
  // The walk never revisits within one step: P(R_n = n+1) is the
  // self-avoiding fraction; 4*3^(n-1) of 4^n paths for n <= 3.
  CHECK(exact_pmf(d, 3).pmf.at(4) == Rational(36, 64));
}

TEST_CASE("float-specified laws enumerate with exact renormalised weights") {
  const auto d = distribution_from_json(
      nlohmann::json::parse(R"({"atoms": [[1,0,0.25],[-1,0,0.25],[0,1,0.25],[0,-1,0.25]]})"));
  CHECK(exact_pmf(d, 4).pmf == exact_pmf(simple_random_walk(), 4).pmf);
}

TEST_CASE("enumeration budget") {
  try {
    exact_pmf(simple_random_walk(), 14, 1000);
    FAIL("expected BudgetExceeded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BudgetExceeded);
  }
}

TEST_CASE("mc_mean_range") {
  const auto d = simple_random_walk();
  const auto one = mc_mean_range(d, 1, 1000, {1, 0});
  CHECK(one.r_hat == 2.0);
  CHECK(one.std_error == 0.0);
  CHECK_FALSE(one.expansion.has_value());

  const auto two = mc_mean_range(d, 2, 1000000, {2, 0});
  CHECK(std::abs(two.r_hat - 2.75) < 4 * two.std_error);

  CHECK_THROWS_AS(mc_mean_range(d, 5, 1, {1, 0}), Error);
}

TEST_CASE("mc mean agrees with exact mean for n <= 10") {
  const auto d = simple_random_walk();
  for (std::size_t n = 1; n <= 10; ++n) {
    const auto exact = static_cast<double>(exact_pmf(d, n).mean());
    const auto mc = mc_mean_range(d, n, 100000, {3, n});
    if (n == 1) {
      CHECK(mc.r_hat == exact);
    } else {
      CHECK(std::abs(mc.r_hat - exact) < 4 * mc.std_error);
    }
  }
}

TEST_CASE("mc_mean_range is independent of the worker count") {
  const auto d = simple_random_walk();
  const auto a = mc_mean_range(d, 300, 1000, {9, 9}, 1);
  const auto b = mc_mean_range(d, 300, 1000, {9, 9}, 4);
  CHECK(a.r_hat == b.r_hat);
  CHECK(a.std_error == b.std_error);
  const auto ranges = sample_ranges(d, 300, 1000, {9, 9}, 3);
  double sum = 0;
  for (auto r : ranges) sum += r;
  CHECK(sum / 1000.0 == doctest::Approx(a.r_hat).epsilon(1e-12));
}

TEST_CASE("intersection mean check") {
  const auto d = simple_random_walk();
  const auto rep = intersection_mean_check(d, 50, 2000, {4, 0});
  CHECK(rep.identity_violations == 0);
  CHECK(rep.z_score == 0.0);
  CHECK(rep.paired_diff_mean == 0.0);
  CHECK(rep.mean_intersection == doctest::Approx(rep.identity_mean).epsilon(1e-9));

  const auto unit = intersection_mean_check(d, 1, 200, {4, 1});
  CHECK(unit.mean_intersection == 0.0);  // a non-lazy walk always moves
  const auto lazy = distribution_from_json(nlohmann::json::parse(
      R"({"atoms": [[1,0,"1/8"],[-1,0,"1/8"],[0,1,"1/8"],[0,-1,"1/8"],[0,0,"1/2"]]})"));
  const auto lazy_unit = intersection_mean_check(lazy, 1, 2000, {4, 2});
  CHECK(lazy_unit.mean_intersection > 0.4);
  CHECK(lazy_unit.mean_intersection < 0.6);

  CHECK_THROWS_AS(intersection_mean_check(d, 10, 99, {4, 0}), Error);
}

TEST_CASE("intersection mean at m = 1000 is of the predicted order") {
  const auto rep = intersection_mean_check(simple_random_walk(), 1000, 2000, {12, 0});
  MESSAGE("E[I]/(r_m 2 log2 / log m) at m=1000: " << rep.asymptotic_ratio);
  CHECK(rep.identity_violations == 0);
  CHECK(rep.asymptotic_ratio > 0.5);
  CHECK(rep.asymptotic_ratio < 2.0);
}

TEST_CASE("mean table persistence and caching") {
  const auto d = simple_random_walk();
  MeanTable table;
  const auto& e = table.ensure(d, 100, 500, 17);
  CHECK(e.samples == 500);
  const double first = e.r_hat;
  CHECK(table.ensure(d, 100, 500, 17).r_hat == first);  // cached
  CHECK(table.entries().size() == 1);
  // A key differing in N or seed is a separate entry, never a substitute.
  table.ensure(d, 100, 1000, 17);
  CHECK(table.entries().size() == 2);
  table.ensure(d, 100, 500, 18);
  CHECK(table.entries().size() == 3);
  CHECK(table.ensure(d, 100, 500, 17).r_hat == first);
  CHECK(table.find("simple", 100)->samples == 1000);

  const auto csv = table.to_csv();
  CHECK(csv.rfind("dist_id,n,N,r_hat,stderr,master_seed\n", 0) == 0);
  const auto back = MeanTable::from_csv(csv);
  CHECK(back.to_csv() == csv);
  CHECK(back.find("simple", 100)->r_hat == table.find("simple", 100)->r_hat);
}
