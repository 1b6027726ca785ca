#include "rangelab/rate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "rangelab/csv.hpp"
#include "rangelab/error.hpp"

namespace rangelab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInvPhi = 0.6180339887498949;

template <class F>
double golden_max(F&& phi, double a, double b) {
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = phi(c), fd = phi(d);
  for (int it = 0; it < 200 && b - a > 1e-13 * std::max(1.0, std::abs(a) + std::abs(b)); ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = phi(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = phi(d);
    }
  }
  return fc >= fd ? c : d;
}

// Values at the knots of the greatest convex minorant of (x_i, y_i).
std::vector<double> convex_minorant(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<std::size_t> hull;
  for (std::size_t i = 0; i < x.size(); ++i) {
    while (hull.size() >= 2) {
      const std::size_t a = hull[hull.size() - 2], b = hull.back();
      // drop b when it lies on or above the chord a -> i
      const double cross = (y[b] - y[a]) * (x[i] - x[a]) - (y[i] - y[a]) * (x[b] - x[a]);
      if (cross >= 0) {
        hull.pop_back();
      } else {
        break;
      }
    }
    hull.push_back(i);
  }
  std::vector<double> out(x.size());
  for (std::size_t h = 0; h + 1 < hull.size(); ++h) {
    const std::size_t a = hull[h], b = hull[h + 1];
    out[a] = y[a];
    for (std::size_t i = a + 1; i < b; ++i) {
      out[i] = y[a] + (y[b] - y[a]) * (x[i] - x[a]) / (x[b] - x[a]);
    }
  }
  out[hull.back()] = y[hull.back()];
  return out;
}

void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty lambda grid");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw Error(ErrorCode::InvalidArgument, "lambda grid must be strictly ascending");
  }
  if (std::find(grid.begin(), grid.end(), 0.0) == grid.end()) {
    throw Error(ErrorCode::InvalidArgument, "lambda grid must contain 0");
  }
}

void finish_curve(LogMgfCurve& c) {
  c.values = convex_minorant(c.lambda_grid, c.raw);
  c.projection_shift = 0.0;
  for (std::size_t i = 0; i < c.raw.size(); ++i) {
    const double shift = std::abs(c.values[i] - c.raw[i]);
    const double tol = 1e-12 * std::max(1.0, std::abs(c.raw[i]));
    if (shift <= tol) continue;
    c.projection_shift = std::max(
        c.projection_shift, c.std_error[i] > 0 ? shift / c.std_error[i] : std::numeric_limits<double>::infinity());
  }
  c.convexity_flag = c.projection_shift > 3.0;
  c.reliable.resize(c.ess.size());
  for (std::size_t i = 0; i < c.ess.size(); ++i) c.reliable[i] = c.ess[i] >= kMinEss;
}

}  // namespace

std::string to_string(CenteringMode mode) { return mode == CenteringMode::exact ? "exact" : "mc_table"; }

Centering Centering::from_table(const MeanRangeEntry& entry) {
  return {entry.n, entry.r_hat, entry.std_error, CenteringMode::mc_table};
}

Centering Centering::from_exact(const ExactPmf& pmf) {
  return {pmf.n, static_cast<double>(pmf.mean()), 0.0, CenteringMode::exact};
}

double ScaledSampleSet::scale() const {
  const double l = std::log(static_cast<double>(n));
  return l * l / static_cast<double>(n);
}

ScaledSampleSet scaled_samples(const StepDistribution& dist, std::size_t n, std::uint64_t N,
                               const SeedRecord& seed, const Centering& centering, unsigned workers,
                               const ScaledOptions& options) {
  if (n < options.min_n || n < 2) {
    throw Error(ErrorCode::InvalidArgument,
                "scaled samples need n >= " + std::to_string(std::max<std::size_t>(options.min_n, 2)));
  }
  if (N < 1) throw Error(ErrorCode::InvalidArgument, "scaled samples need N >= 1");
  ScaledSampleSet set;
  set.n = n;
  set.centering = centering;
  if (centering.n != n) {
    throw Error(ErrorCode::CenteringUnavailable,
                "centering is for n=" + std::to_string(centering.n) + ", not n=" + std::to_string(n));
  }
  const double scale = set.scale();
  if (!(centering.std_error * scale < options.max_scaled_centering_error)) {
    throw Error(ErrorCode::CenteringUnavailable, "centering stderr " + csv::num(centering.std_error) +
                                                     " scales to " + csv::num(centering.std_error * scale) +
                                                     " >= " + csv::num(options.max_scaled_centering_error));
  }
  const auto ranges = sample_ranges(dist, n, N, seed, workers);
  set.values.reserve(ranges.size());
  for (auto r : ranges) set.values.push_back(scale * (static_cast<double>(r) - centering.r));
  return set;
}

ConvexInterpolant::ConvexInterpolant(std::vector<double> x, std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
  if (x_.size() != y_.size() || x_.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "interpolant needs at least two matching knots");
  }
  const std::size_t k = x_.size();
  std::vector<double> h(k - 1), d(k - 1);
  for (std::size_t i = 0; i + 1 < k; ++i) {
    h[i] = x_[i + 1] - x_[i];
    if (!(h[i] > 0)) throw Error(ErrorCode::InvalidArgument, "interpolant knots must be strictly ascending");
    d[i] = (y_[i + 1] - y_[i]) / h[i];
  }
  slopes_.assign(k, d[0]);
  if (k >= 3) {
    for (std::size_t i = 1; i + 1 < k; ++i) slopes_[i] = (h[i - 1] * d[i] + h[i] * d[i - 1]) / (h[i - 1] + h[i]);
    slopes_[0] = d[0] - h[0] * (d[1] - d[0]) / (h[0] + h[1]);
    slopes_[k - 1] = d[k - 2] + h[k - 2] * (d[k - 2] - d[k - 3]) / (h[k - 3] + h[k - 2]);
  } else {
    slopes_[1] = d[0];
  }
  chord_.assign(k - 1, 0);
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const double tol = 1e-12 * (std::abs(d[i]) + std::abs(slopes_[i]) + std::abs(slopes_[i + 1]) + 1.0);
    const bool left_ok = 2 * slopes_[i] + slopes_[i + 1] <= 3 * d[i] + tol;
    const bool right_ok = slopes_[i] + 2 * slopes_[i + 1] >= 3 * d[i] - tol;
    chord_[i] = !(left_ok && right_ok);
  }
}

std::size_t ConvexInterpolant::interval(double t) const {
  if (t <= x_.front()) return 0;
  if (t >= x_.back()) return x_.size() - 2;
  const auto it = std::upper_bound(x_.begin(), x_.end(), t);
  return static_cast<std::size_t>(it - x_.begin()) - 1;
}

double ConvexInterpolant::value(double t) const {
  const std::size_t i = interval(t);
  const double h = x_[i + 1] - x_[i];
  const double u = (t - x_[i]) / h;
  if (chord_[i]) return y_[i] + (y_[i + 1] - y_[i]) * u;
  const double u2 = u * u, u3 = u2 * u;
  return (2 * u3 - 3 * u2 + 1) * y_[i] + (u3 - 2 * u2 + u) * h * slopes_[i] + (-2 * u3 + 3 * u2) * y_[i + 1] +
         (u3 - u2) * h * slopes_[i + 1];
}

double ConvexInterpolant::derivative(double t) const {
  const std::size_t i = interval(t);
  const double h = x_[i + 1] - x_[i];
  if (chord_[i]) return (y_[i + 1] - y_[i]) / h;
  const double u = (t - x_[i]) / h;
  const double u2 = u * u;
  return (6 * u2 - 6 * u) / h * y_[i] + (3 * u2 - 4 * u + 1) * slopes_[i] + (-6 * u2 + 6 * u) / h * y_[i + 1] +
         (3 * u2 - 2 * u) * slopes_[i + 1];
}

ConjugatePoint conjugate(const ConvexInterpolant& f, double s) {
  const auto& x = f.x();
  const auto& y = f.y();
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (s * x[i] - y[i] > s * x[best] - y[best]) best = i;
  }
  const std::size_t last = x.size() - 1;
  auto phi = [&](double t) { return s * t - f.value(t); };
  double a = x[best > 0 ? best - 1 : 0];
  double b = x[std::min(best + 1, last)];
  if (best == last && s - f.derivative(x[last]) >= 0) {
    throw Error(ErrorCode::MaximizerAtBoundary,
                "maximiser at the upper grid edge " + csv::num(x[last]) + " for slope " + csv::num(s));
  }
  if (best == 0 && s - f.derivative(x[0]) <= 0) {
    if (x[0] != 0.0) {
      throw Error(ErrorCode::MaximizerAtBoundary,
                  "maximiser at the lower grid edge " + csv::num(x[0]) + " for slope " + csv::num(s));
    }
    return {s * x[0] - y[0], x[0]};
  }
  const double t = golden_max(phi, a, b);
  const double v = phi(t);
  if (v >= s * x[best] - y[best]) return {v, t};
  return {s * x[best] - y[best], x[best]};
}

ConvexInterpolant LogMgfCurve::interpolant() const { return ConvexInterpolant(lambda_grid, values); }

std::string LogMgfCurve::to_csv() const {
  std::string out = "lambda,value,raw,stderr,ess,reliable\n";
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    out += csv::num(lambda_grid[i]) + ',' + csv::num(values[i]) + ',' + csv::num(raw[i]) + ',' +
           csv::num(std_error[i]) + ',' + csv::num(ess[i]) + ',' + (reliable[i] ? "1" : "0") + '\n';
  }
  return out;
}

LogMgfCurve log_mgf(std::span<const double> values, const std::vector<double>& lambda_grid, std::size_t n_used) {
  check_grid(lambda_grid);
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "log-MGF of an empty sample");
  const std::size_t N = values.size();
  const double dn = static_cast<double>(N);
  LogMgfCurve c;
  c.lambda_grid = lambda_grid;
  c.n_used = n_used;
  c.N_used = N;
  std::vector<double> w(N);
  for (double lambda : lambda_grid) {
    if (lambda == 0.0) {
      c.raw.push_back(0.0);
      c.std_error.push_back(0.0);
      c.ess.push_back(dn);
      continue;
    }
    double top = -std::numeric_limits<double>::infinity();
    for (double v : values) top = std::max(top, lambda * v);
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      w[i] = std::exp(lambda * values[i] - top);
      sum += w[i];
      sum2 += w[i] * w[i];
    }
    c.raw.push_back(top + std::log(sum / dn));
    c.ess.push_back(sum * sum / sum2);
    if (N < 2) {
      c.std_error.push_back(0.0);
      continue;
    }
    // Leave-one-out values differ from the full estimate by
    // log1p(-w_i / sum) + log(N / (N - 1)).
    const double shift = std::log(dn / (dn - 1.0));
    double mean = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      w[i] = std::log1p(-std::min(w[i] / sum, 1.0 - 1e-300)) + shift;
      mean += w[i];
    }
    mean /= dn;
    double ss = 0.0;
    for (std::size_t i = 0; i < N; ++i) ss += (w[i] - mean) * (w[i] - mean);
    c.std_error.push_back(std::sqrt((dn - 1.0) / dn * ss));
  }
  finish_curve(c);
  return c;
}

LogMgfCurve curve_from_function(const std::vector<double>& lambda_grid, const std::function<double(double)>& f) {
  check_grid(lambda_grid);
  LogMgfCurve c;
  c.lambda_grid = lambda_grid;
  for (double l : lambda_grid) {
    c.raw.push_back(l == 0.0 ? 0.0 : f(l));
    c.std_error.push_back(0.0);
    c.ess.push_back(std::numeric_limits<double>::infinity());
  }
  finish_curve(c);
  return c;
}

std::vector<double> uniform_grid(double lo, double hi, double step) {
  if (!(step > 0) || !(hi >= lo)) throw Error(ErrorCode::InvalidArgument, "bad grid bounds");
  const auto count = static_cast<std::size_t>(std::llround((hi - lo) / step));
  std::vector<double> g;
  g.reserve(count + 1);
  for (std::size_t i = 0; i <= count; ++i) g.push_back(lo + static_cast<double>(i) * step);
  // snap values that should be exactly zero
  for (double& v : g) {
    if (std::abs(v) < 1e-12 * step) v = 0.0;
  }
  return g;
}

LegendrePoint legendre(const LogMgfCurve& curve, double beta) {
  if (!(beta >= 0)) throw Error(ErrorCode::DomainError, "legendre transform needs beta >= 0");
  const auto p = conjugate(curve.interpolant(), beta);
  return {p.value, p.argmax};
}

namespace {

double tilde_objective(const ConvexInterpolant& f, double beta) {
  return std::exp(-(beta + 1.0)) * conjugate(f, beta).value;
}

}  // namespace

RateSolution solve_rate_constants(const LogMgfCurve& curve, std::vector<double> beta_grid) {
  if (curve.convexity_flag) {
    throw Error(ErrorCode::NonConvexCurve, "convex projection moved the curve by " +
                                               csv::num(curve.projection_shift) + " standard errors");
  }
  const ConvexInterpolant f = curve.interpolant();
  const auto& x = f.x();
  auto g_knot = [&](std::size_t i) { return f.y()[i] - x[i] * (f.knot_slope(i) - 1.0); };
  auto g = [&](double b) { return f.value(b) - b * (f.derivative(b) - 1.0); };

  // g(0) = 0 with g'(0) = 1, so the origin counts as the positive side.
  std::optional<std::size_t> hi_idx;
  bool positive = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0) continue;
    const double gi = x[i] == 0.0 ? 1.0 : g_knot(i);
    if (positive && gi <= 0) {
      hi_idx = i;
      break;
    }
    positive = gi > 0;
  }
  if (!hi_idx) throw Error(ErrorCode::NoBracket, "g(b) = Lambda(b) - b(Lambda'(b) - 1) has no sign change on the grid");

  double lo = x[*hi_idx - 1], hi = x[*hi_idx];
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (mid > 0 && g(mid) > 0 ? lo : hi) = mid;
  }

  RateSolution sol;
  sol.b0 = 0.5 * (lo + hi);
  sol.beta0 = f.derivative(sol.b0);
  sol.tilde_lambda_closed = std::exp(-(sol.beta0 + 1.0)) * sol.b0;
  sol.tilde_lambda_alt = std::exp(-(sol.beta0 - 1.0)) * sol.b0;

  if (beta_grid.empty()) {
    const double top = 0.98 * f.derivative(x.back());
    if (!(top > 0)) throw Error(ErrorCode::NoBracket, "curve has no positive slope range");
    for (int i = 0; i <= 400; ++i) beta_grid.push_back(top * i / 400.0);
  }
  sol.beta_grid = beta_grid;
  std::size_t best = beta_grid.size();
  double best_val = -1.0;
  for (std::size_t i = 0; i < beta_grid.size(); ++i) {
    double ls = kNaN, l0 = kNaN;
    try {
      const auto p = conjugate(f, beta_grid[i]);
      ls = p.value;
      l0 = p.argmax;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MaximizerAtBoundary) throw;
    }
    sol.lambda_star.push_back(ls);
    sol.lambda0.push_back(l0);
    if (!std::isnan(ls)) {
      const double v = std::exp(-(beta_grid[i] + 1.0)) * ls;
      if (v > best_val) {
        best_val = v;
        best = i;
      }
    }
  }
  if (best == beta_grid.size()) throw Error(ErrorCode::NoBracket, "no beta on the grid has a finite conjugate");

  std::size_t a = best, b = best;
  if (a > 0 && !std::isnan(sol.lambda_star[a - 1])) --a;
  if (b + 1 < beta_grid.size() && !std::isnan(sol.lambda_star[b + 1])) ++b;
  sol.beta_direct = beta_grid[best];
  sol.tilde_lambda_direct = best_val;
  if (a < b) {
    const double t = golden_max([&](double beta) { return tilde_objective(f, beta); }, beta_grid[a], beta_grid[b]);
    const double v = tilde_objective(f, t);
    if (v > best_val) {
      sol.beta_direct = t;
      sol.tilde_lambda_direct = v;
    }
  }
  sol.residual = std::abs(sol.tilde_lambda_direct - sol.tilde_lambda_closed) / sol.tilde_lambda_direct;

  const double h = 1e-3 * std::max(1.0, sol.beta0);
  try {
    const double up = conjugate(f, sol.beta0 + h).value;
    const double down = conjugate(f, std::max(0.0, sol.beta0 - h)).value;
    const double mid = conjugate(f, sol.beta0).value;
    const double slope = (up - down) / (sol.beta0 + h - std::max(0.0, sol.beta0 - h));
    sol.optimality_residual = std::abs(slope - mid) / mid;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::MaximizerAtBoundary) throw;
    sol.optimality_residual = kNaN;
  }
  return sol;
}

std::string RateSolution::to_json() const {
  nlohmann::json j;
  j["b0"] = b0;
  j["beta0"] = beta0;
  j["tilde_lambda_direct"] = tilde_lambda_direct;
  j["beta_direct"] = beta_direct;
  j["tilde_lambda_closed"] = tilde_lambda_closed;
  j["tilde_lambda_alt"] = tilde_lambda_alt;
  j["residual"] = residual;
  j["optimality_residual"] = optimality_residual;
  return j.dump(2) + "\n";
}

BootstrapInterval bootstrap_rate_constants(std::span<const double> values, const std::vector<double>& lambda_grid,
                                           std::size_t resamples, const SeedRecord& seed, double confidence) {
  if (values.empty() || resamples < 2) throw Error(ErrorCode::InvalidArgument, "bootstrap needs data and >= 2 resamples");
  std::vector<double> b0s, beta0s, tildes;
  BootstrapInterval out;
  out.resamples = resamples;
  std::vector<double> draw(values.size());
  for (std::size_t r = 0; r < resamples; ++r) {
    Engine eng = seed.child(r).engine();
    for (double& v : draw) v = values[uniform_index(eng, values.size())];
    try {
      const auto sol = solve_rate_constants(log_mgf(draw, lambda_grid));
      b0s.push_back(sol.b0);
      beta0s.push_back(sol.beta0);
      tildes.push_back(sol.tilde_lambda_direct);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoBracket && e.code() != ErrorCode::NonConvexCurve) throw;
      ++out.failures;
    }
  }
  if (b0s.size() < 2) throw Error(ErrorCode::InsufficientData, "too few bootstrap resamples had a bracket");
  auto percentile = [&](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const double alpha = (1.0 - confidence) / 2.0;
    auto at = [&](double q) {
      const double pos = q * static_cast<double>(v.size() - 1);
      const auto i = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(i);
      return i + 1 < v.size() ? v[i] * (1 - frac) + v[i + 1] * frac : v[i];
    };
    return Interval{at(alpha), at(1.0 - alpha)};
  };
  out.b0 = percentile(b0s);
  out.beta0 = percentile(beta0s);
  out.tilde_lambda = percentile(tildes);
  return out;
}

double biconjugate(const std::vector<double>& beta_grid, const std::vector<double>& lambda_star, double lambda) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < beta_grid.size() && i < lambda_star.size(); ++i) {
    if (std::isnan(lambda_star[i])) continue;
    xs.push_back(beta_grid[i]);
    ys.push_back(lambda_star[i]);
  }
  return conjugate(ConvexInterpolant(std::move(xs), std::move(ys)), lambda).value;
}

}  // namespace rangelab
