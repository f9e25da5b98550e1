#include "sta4clc/resilience.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sta4clc/spline.hpp"

namespace sta4clc::resilience {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

void ResilienceConfig::validate() const {
  if (window < 8 || window % 2 != 0) throw std::invalid_argument("resilience window must be even and >= 8");
  if (bins < 5) throw std::invalid_argument("resilience bins must be >= 5");
  if (min_points < 6) throw std::invalid_argument("resilience min_points must be >= 6");
  if (dense_grid_points < 4) throw std::invalid_argument("resilience dense_grid_points must be >= 4");
  if (!(spline_smoothing >= 0.0)) throw std::invalid_argument("spline smoothing must be non-negative");
}

std::optional<PotentialEstimate> estimate_potential(std::span<const TimePoint> points, const ResilienceConfig& config) {
  if (points.size() < static_cast<std::size_t>(config.min_points)) return std::nullopt;
  std::vector<TimePoint> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](const TimePoint& a, const TimePoint& b) { return a.t < b.t; });

  double vmin = pts.front().v, vmax = pts.front().v, vabs = 0.0;
  for (const auto& p : pts) {
    if (!std::isfinite(p.v) || !std::isfinite(p.t)) return std::nullopt;
    vmin = std::min(vmin, p.v);
    vmax = std::max(vmax, p.v);
    vabs = std::max(vabs, std::abs(p.v));
  }
  if (!(vmax - vmin > 1e-9 * vabs)) return std::nullopt;

  std::vector<double> t(pts.size()), v(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    t[i] = pts[i].t;
    v[i] = pts[i].v;
  }
  const SmoothingSpline spline(t, v, config.spline_smoothing);

  const auto n_dense = static_cast<std::size_t>(config.dense_grid_points);
  std::vector<double> v_dense(n_dense), f_dense(n_dense);
  const double t0 = t.front(), t1 = t.back();
  for (std::size_t i = 0; i < n_dense; ++i) {
    const double ti = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(n_dense - 1);
    v_dense[i] = spline.value(ti);
    f_dense[i] = spline.derivative(ti);
  }
  const auto [lo_it, hi_it] = std::minmax_element(v_dense.begin(), v_dense.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return std::nullopt;

  // Each populated bin contributes (mean state, mean drift).
  const auto n_bins = static_cast<std::size_t>(config.bins);
  std::vector<double> sum_v(n_bins, 0.0), sum_f(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t i = 0; i < n_dense; ++i) {
    auto b = static_cast<std::size_t>((v_dense[i] - lo) / width);
    b = std::min(b, n_bins - 1);
    sum_v[b] += v_dense[i];
    sum_f[b] += f_dense[i];
    ++count[b];
  }
  PotentialEstimate est;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    est.bin_v.push_back(sum_v[b] / static_cast<double>(count[b]));
    est.bin_f.push_back(sum_f[b] / static_cast<double>(count[b]));
  }
  if (est.bin_v.size() < 2 || !(est.bin_v.back() > est.bin_v.front())) return std::nullopt;

  // Potential grid spans the populated bin means; f_hat is piecewise linear
  // between them.
  const double g0 = est.bin_v.front(), g1 = est.bin_v.back();
  const double dv = (g1 - g0) / static_cast<double>(n_dense - 1);
  est.v_grid.resize(n_dense);
  est.f_hat.resize(n_dense);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n_dense; ++i) {
    const double x = i + 1 == n_dense ? g1 : g0 + dv * static_cast<double>(i);
    est.v_grid[i] = x;
    while (seg + 2 < est.bin_v.size() && x > est.bin_v[seg + 1]) ++seg;
    const double xa = est.bin_v[seg], xb = est.bin_v[seg + 1];
    const double w = std::clamp((x - xa) / (xb - xa), 0.0, 1.0);
    est.f_hat[i] = est.bin_f[seg] + w * (est.bin_f[seg + 1] - est.bin_f[seg]);
  }

  est.V.assign(n_dense, 0.0);
  for (std::size_t i = 1; i < n_dense; ++i) est.V[i] = est.V[i - 1] - 0.5 * (est.f_hat[i - 1] + est.f_hat[i]) * dv;

  est.V2.assign(n_dense, 0.0);
  const double inv = 1.0 / (dv * dv);
  const auto& V = est.V;
  for (std::size_t i = 1; i + 1 < n_dense; ++i) est.V2[i] = (V[i + 1] - 2.0 * V[i] + V[i - 1]) * inv;
  const std::size_t e = n_dense - 1;
  est.V2[0] = (2.0 * V[0] - 5.0 * V[1] + 4.0 * V[2] - V[3]) * inv;
  est.V2[e] = (2.0 * V[e] - 5.0 * V[e - 1] + 4.0 * V[e - 2] - V[e - 3]) * inv;

  est.star = static_cast<std::size_t>(std::min_element(V.begin(), V.end()) - V.begin());
  return est;
}

std::vector<double> rolling_resilience(std::span<const double> v, const ResilienceConfig& config) {
  config.validate();
  const auto n = static_cast<long>(v.size());
  const long half = config.window / 2;
  std::vector<double> r(v.size(), kNaN);
  std::vector<TimePoint> window;
  for (long i = 0; i < n; ++i) {
    window.clear();
    for (long j = std::max(0L, i - half); j <= std::min(n - 1, i + half); ++j)
      if (std::isfinite(v[static_cast<std::size_t>(j)]))
        window.push_back({static_cast<double>(j), v[static_cast<std::size_t>(j)]});
    if (auto est = estimate_potential(window, config)) r[static_cast<std::size_t>(i)] = est->curvature_at_star();
  }
  return r;
}

void fill_undefined(std::span<double> r, UndefinedFill mode, double fill_value) {
  double last = fill_value;
  for (double& x : r) {
    if (std::isnan(x))
      x = mode == UndefinedFill::Zero ? fill_value : last;
    else
      last = x;
  }
}

std::vector<double> decay_sequence(std::span<const Impulse> impulses, double alpha, std::size_t weeks) {
  if (!(alpha > 0.0)) throw std::invalid_argument("decay rate alpha must be positive");
  std::vector<double> d(weeks, 0.0);
  for (std::size_t t = 0; t < weeks; ++t) {
    double acc = 0.0;
    for (const auto& imp : impulses) {
      if (imp.week < 0 || static_cast<std::size_t>(imp.week) > t) continue;
      acc += imp.severity * std::exp(-alpha * static_cast<double>(static_cast<long>(t) - imp.week));
    }
    d[t] = acc;
  }
  return d;
}

std::vector<Impulse> block_impulses(std::span<const data::DisasterEvent> events, const std::string& block_id,
                                    int start_week, std::size_t weeks) {
  std::vector<Impulse> out;
  for (const auto& e : events) {
    const int local = e.week - start_week;
    if (local < 0 || static_cast<std::size_t>(local) >= weeks) continue;
    auto it = e.severity_by_block.find(block_id);
    if (it == e.severity_by_block.end() || it->second == 0.0) continue;
    out.push_back({local, it->second});
  }
  std::stable_sort(out.begin(), out.end(), [](const Impulse& a, const Impulse& b) { return a.week < b.week; });
  return out;
}

std::vector<double> decay_sequence(std::span<const data::DisasterEvent> events, const std::string& block_id,
                                   double alpha, std::size_t weeks, int start_week) {
  const auto imp = block_impulses(events, block_id, start_week, weeks);
  return decay_sequence(imp, alpha, weeks);
}

}  // namespace sta4clc::resilience
