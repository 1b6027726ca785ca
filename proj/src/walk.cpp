#include "rangelab/walk.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rangelab/error.hpp"

namespace rangelab {

namespace {

constexpr double kFloatTolerance = 1e-12;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (!s.empty() && s.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw Error(ErrorCode::InvalidArgument, "not an integer: '" + std::string(s) + "'");
  }
  return v;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

// Vose alias table with 32-bit fixed-point thresholds.
void build_alias(const std::vector<double>& probs, std::vector<std::uint64_t>& threshold,
                 std::vector<std::uint32_t>& alias) {
  const std::size_t k = probs.size();
  std::vector<double> scaled(k);
  for (std::size_t i = 0; i < k; ++i) scaled[i] = probs[i] * static_cast<double>(k);
  threshold.assign(k, 1ULL << 32);
  alias.resize(k);
  for (std::size_t i = 0; i < k; ++i) alias[i] = static_cast<std::uint32_t>(i);

  std::vector<std::size_t> small, large;
  for (std::size_t i = 0; i < k; ++i) (scaled[i] < 1.0 ? small : large).push_back(i);
  while (!small.empty() && !large.empty()) {
    const std::size_t s = small.back();
    small.pop_back();
    const std::size_t l = large.back();
    threshold[s] = static_cast<std::uint64_t>(std::llround(scaled[s] * 4294967296.0));
    alias[s] = static_cast<std::uint32_t>(l);
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  // Leftovers are 1 up to rounding.
}

}  // namespace

Probability Probability::ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) throw Error(ErrorCode::InvalidArgument, "zero denominator");
  Rational r(num, den);
  return {r, static_cast<double>(r)};
}

Probability Probability::real(double p) { return {std::nullopt, p}; }

Probability Probability::parse(std::string_view text) {
  const std::string t = trim(text);
  if (t.empty()) throw Error(ErrorCode::InvalidArgument, "empty probability");
  if (const auto slash = t.find('/'); slash != std::string::npos) {
    return ratio(parse_int(trim(std::string_view(t).substr(0, slash))),
                 parse_int(trim(std::string_view(t).substr(slash + 1))));
  }
  if (t.find_first_of(".eE") == std::string::npos) return ratio(parse_int(t), 1);
  std::istringstream in(t);
  double v = 0.0;
  in >> v;
  if (!in || !in.eof()) throw Error(ErrorCode::InvalidArgument, "bad probability '" + t + "'");
  return real(v);
}

StepDistribution build_distribution(const std::vector<AtomSpec>& specs, std::string id) {
  if (specs.empty()) throw Error(ErrorCode::InvalidArgument, "empty atom list");

  struct Merged {
    Point step;
    Rational exact;
    double value = 0.0;
  };
  bool exact = true;
  std::vector<Merged> merged;
  for (const auto& a : specs) {
    if (!(a.p.value > 0.0) || (a.p.exact && *a.p.exact <= 0)) {
      throw Error(ErrorCode::InvalidArgument, "atom probabilities must be positive");
    }
    exact = exact && a.p.exact.has_value();
    const Point step{a.dx, a.dy};
    auto it = std::find_if(merged.begin(), merged.end(), [&](const Merged& m) { return m.step == step; });
    if (it == merged.end()) {
      merged.push_back({step, a.p.exact.value_or(Rational(a.p.value)), a.p.value});
    } else {
      it->exact += a.p.exact.value_or(Rational(a.p.value));
      it->value += a.p.value;
    }
  }
  std::sort(merged.begin(), merged.end(), [](const Merged& a, const Merged& b) { return a.step < b.step; });

  Rational total = 0;
  double total_f = 0.0;
  for (const auto& m : merged) {
    total += m.exact;
    total_f += m.value;
  }
  if (exact ? total != 1 : std::abs(total_f - 1.0) > kFloatTolerance) {
    throw Error(ErrorCode::ProbabilitiesDoNotSumToOne, "total mass " + std::to_string(total_f));
  }

  Rational mx = 0, my = 0;
  double mx_f = 0.0, my_f = 0.0;
  for (const auto& m : merged) {
    mx += m.exact * m.step.x;
    my += m.exact * m.step.y;
    mx_f += m.value * m.step.x;
    my_f += m.value * m.step.y;
  }
  if (exact ? (mx != 0 || my != 0)
            : (std::abs(mx_f) > kFloatTolerance || std::abs(my_f) > kFloatTolerance)) {
    throw Error(ErrorCode::NonzeroMean, "mean (" + std::to_string(mx_f) + ", " + std::to_string(my_f) + ")");
  }

  for (const auto& m : merged) {
    const Point neg{-m.step.x, -m.step.y};
    auto it = std::find_if(merged.begin(), merged.end(), [&](const Merged& o) { return o.step == neg; });
    const bool ok = it != merged.end() &&
                    (exact ? it->exact == m.exact : std::abs(it->value - m.value) <= kFloatTolerance);
    if (!ok) {
      throw Error(ErrorCode::NotSymmetric, "atom (" + std::to_string(m.step.x) + ", " +
                                               std::to_string(m.step.y) + ") has no mirror of equal weight");
    }
  }

  bool planar = false;
  for (std::size_t i = 0; i < merged.size() && !planar; ++i) {
    for (std::size_t j = i + 1; j < merged.size() && !planar; ++j) {
      const auto& a = merged[i].step;
      const auto& b = merged[j].step;
      planar = static_cast<std::int64_t>(a.x) * b.y - static_cast<std::int64_t>(a.y) * b.x != 0;
    }
  }
  if (!planar) throw Error(ErrorCode::OneDimensionalSupport, "atoms lie on a line through the origin");

  StepDistribution d;
  d.exact_ = exact;
  std::vector<double> probs;
  std::ostringstream canon;
  for (const auto& m : merged) {
    Atom atom;
    atom.step = m.step;
    atom.prob = exact ? m.exact : m.exact / total;
    atom.p = exact ? static_cast<double>(m.exact) : m.value / total_f;
    probs.push_back(atom.p);
    canon << m.step.x << ',' << m.step.y << ',' << atom.prob.str() << ';';
    d.atoms_.push_back(std::move(atom));
  }
  d.digest_ = fnv1a(canon.str());
  if (id.empty()) {
    std::ostringstream hex;
    hex << "d" << std::hex << d.digest_;
    id = hex.str();
  }
  d.id_ = std::move(id);

  const bool equal = std::all_of(d.atoms_.begin(), d.atoms_.end(),
                                 [&](const Atom& a) { return a.prob == d.atoms_.front().prob; });
  if (equal && std::has_single_bit(d.atoms_.size()) && d.atoms_.size() <= (1u << 16)) {
    d.uniform_bits_ = std::countr_zero(d.atoms_.size());
  }
  // A single-atom law cannot pass validation, so uniform_bits_ > 0 whenever set.
  build_alias(probs, d.alias_threshold_, d.alias_index_);
  return d;
}

StepDistribution simple_random_walk() {
  return build_distribution({{1, 0, Probability::ratio(1, 4)},
                             {-1, 0, Probability::ratio(1, 4)},
                             {0, 1, Probability::ratio(1, 4)},
                             {0, -1, Probability::ratio(1, 4)}},
                            "simple");
}

StepDistribution diagonal_walk() {
  return build_distribution({{1, 1, Probability::ratio(1, 4)},
                             {1, -1, Probability::ratio(1, 4)},
                             {-1, 1, Probability::ratio(1, 4)},
                             {-1, -1, Probability::ratio(1, 4)}},
                            "diagonal");
}

StepDistribution distribution_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("atoms") || !doc["atoms"].is_array()) {
    throw Error(ErrorCode::InvalidArgument, "distribution document needs an \"atoms\" array");
  }
  std::vector<AtomSpec> atoms;
  for (const auto& a : doc["atoms"]) {
    if (!a.is_array() || a.size() != 3 || !a[0].is_number_integer() || !a[1].is_number_integer()) {
      throw Error(ErrorCode::InvalidArgument, "atom must be [dx, dy, p]: " + a.dump());
    }
    AtomSpec spec{a[0].get<int>(), a[1].get<int>(), {}};
    if (a[2].is_string()) {
      spec.p = Probability::parse(a[2].get<std::string>());
    } else if (a[2].is_number_integer()) {
      spec.p = Probability::ratio(a[2].get<std::int64_t>(), 1);
    } else if (a[2].is_number()) {
      spec.p = Probability::real(a[2].get<double>());
    } else {
      throw Error(ErrorCode::InvalidArgument, "bad probability in " + a.dump());
    }
    atoms.push_back(spec);
  }
  return build_distribution(atoms, doc.value("id", std::string{}));
}

StepDistribution load_distribution(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
  }
  return distribution_from_json(doc);
}

CovarianceData covariance(const StepDistribution& dist) {
  CovarianceData c;
  for (const auto& a : dist.atoms()) {
    const double x = a.step.x, y = a.step.y;
    c.gamma[0][0] += a.p * x * x;
    c.gamma[0][1] += a.p * x * y;
    c.gamma[1][1] += a.p * y * y;
  }
  c.gamma[1][0] = c.gamma[0][1];
  c.det = c.gamma[0][0] * c.gamma[1][1] - c.gamma[0][1] * c.gamma[1][0];
  c.e1 = 2.0 * std::numbers::pi * std::sqrt(c.det);
  return c;
}

WalkPath sample_path(const StepDistribution& dist, std::size_t n, const SeedRecord& seed,
                     std::size_t max_steps) {
  if (n > max_steps) {
    throw Error(ErrorCode::BudgetExceeded,
                "path of " + std::to_string(n) + " steps exceeds budget " + std::to_string(max_steps));
  }
  WalkPath path;
  path.seed = seed;
  path.dist_id = dist.id();
  path.positions.resize(n + 1);
  StepStream stream(dist, seed);
  Point s{};
  for (std::size_t i = 1; i <= n; ++i) {
    s = s + stream.next_step();
    path.positions[i] = s;
  }
  return path;
}

WalkPath path_from_steps(std::span<const Point> steps, std::string dist_id) {
  WalkPath path;
  path.dist_id = std::move(dist_id);
  path.positions.reserve(steps.size() + 1);
  Point s{};
  path.positions.push_back(s);
  for (const auto& d : steps) {
    s = s + d;
    path.positions.push_back(s);
  }
  return path;
}

bool is_valid_path(const WalkPath& path, const StepDistribution& dist) {
  if (path.positions.empty() || path.positions.front() != Point{}) return false;
  for (std::size_t i = 1; i < path.positions.size(); ++i) {
    const Point d = path.positions[i] - path.positions[i - 1];
    const bool ok = std::any_of(dist.atoms().begin(), dist.atoms().end(),
                                [&](const Atom& a) { return a.step == d; });
    if (!ok) return false;
  }
  return true;
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonzeroMean: return "NonzeroMean";
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::OneDimensionalSupport: return "OneDimensionalSupport";
    case ErrorCode::ProbabilitiesDoNotSumToOne: return "ProbabilitiesDoNotSumToOne";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::CenteringUnavailable: return "CenteringUnavailable";
    case ErrorCode::MaximizerAtBoundary: return "MaximizerAtBoundary";
    case ErrorCode::NoBracket: return "NoBracket";
    case ErrorCode::NonConvexCurve: return "NonConvexCurve";
    case ErrorCode::RegimeViolation: return "RegimeViolation";
    case ErrorCode::Stagnation: return "Stagnation";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NoDriftAtom: return "NoDriftAtom";
    case ErrorCode::DegenerateBlocks: return "DegenerateBlocks";
    case ErrorCode::RejectionBudgetExceeded: return "RejectionBudgetExceeded";
    case ErrorCode::BoundNotApplicable: return "BoundNotApplicable";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::PartialFailure: return "PartialFailure";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace rangelab
