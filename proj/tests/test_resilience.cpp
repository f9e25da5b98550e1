#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "gen.hpp"
#include "sta4clc/resilience.hpp"
#include "sta4clc/spline.hpp"

using namespace sta4clc;
using namespace sta4clc::resilience;

namespace {

std::vector<double> relaxation(double k, int weeks, double v_inf = 100.0, double v0 = 200.0) {
  std::vector<double> v(static_cast<std::size_t>(weeks));
  for (int t = 0; t < weeks; ++t) v[static_cast<std::size_t>(t)] = v_inf + (v0 - v_inf) * std::exp(-k * t);
  return v;
}

double interior_median(const std::vector<double>& r, int window) {
  std::vector<double> in;
  const int n = static_cast<int>(r.size());
  for (int t = window / 2; t < n - window / 2; ++t)
    if (!std::isnan(r[static_cast<std::size_t>(t)])) in.push_back(r[static_cast<std::size_t>(t)]);
  REQUIRE(!in.empty());
  std::sort(in.begin(), in.end());
  const std::size_t m = in.size() / 2;
  return in.size() % 2 ? in[m] : 0.5 * (in[m - 1] + in[m]);
}

}  // namespace

TEST_CASE("decay_sequence examples") {
  const std::vector<Impulse> one{{10, 1.0}};
  const auto d = decay_sequence(one, 0.5, 20);
  CHECK(d[9] == 0.0);
  CHECK(d[10] == doctest::Approx(1.0));
  CHECK(d[12] == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));

  const std::vector<Impulse> two{{10, 1.0}, {20, 2.0}};
  const auto d2 = decay_sequence(two, 0.1, 30);
  CHECK(d2[25] == doctest::Approx(std::exp(-1.5) + 2 * std::exp(-0.5)).epsilon(1e-14));
  CHECK(std::abs(d2[25] - 1.4361915) <= 1e-7);
}

TEST_CASE("decay_sequence is linear and superposes") {
  gen::Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = static_cast<std::size_t>(rng.integer(5, 120));
    const double alpha = rng.uniform(0.01, 1.0);
    std::vector<Impulse> events;
    const int n = static_cast<int>(rng.integer(0, 6));
    for (int k = 0; k < n; ++k)
      events.push_back({static_cast<int>(rng.index(T)), rng.uniform(0.0, 3.0)});
    const auto base = decay_sequence(events, alpha, T);

    const double c = rng.uniform(0.1, 5.0);
    auto scaled_events = events;
    for (auto& e : scaled_events) e.severity *= c;
    const auto scaled = decay_sequence(scaled_events, alpha, T);
    std::vector<double> sum(T, 0.0);
    for (const auto& e : events) {
      const std::vector<Impulse> single{e};
      const auto s = decay_sequence(single, alpha, T);
      for (std::size_t t = 0; t < T; ++t) sum[t] += s[t];
    }
    for (std::size_t t = 0; t < T; ++t) {
      CHECK(std::abs(scaled[t] - c * base[t]) <= 1e-12 * std::max(1.0, c * base[t]));
      CHECK(std::abs(sum[t] - base[t]) <= 1e-12);
    }

    // Non-increasing between consecutive event weeks.
    std::vector<int> weeks;
    for (const auto& e : events) weeks.push_back(e.week);
    for (std::size_t t = 1; t < T; ++t)
      if (std::find(weeks.begin(), weeks.end(), static_cast<int>(t)) == weeks.end()) CHECK(base[t] <= base[t - 1]);
  }
}

TEST_CASE("block_impulses selects events of the block within the period") {
  std::vector<data::DisasterEvent> events{{"E1", 5, {{"A", 1.0}, {"B", 0.5}}},
                                          {"E2", 60, {{"A", 2.0}}},
                                          {"E3", 200, {{"A", 3.0}}}};
  const auto a = block_impulses(events, "A", 52, 104);
  REQUIRE(a.size() == 1);
  CHECK(a[0].week == 8);
  CHECK(a[0].severity == 2.0);
  CHECK(block_impulses(events, "B", 0, 104).size() == 1);
  CHECK(block_impulses(events, "C", 0, 104).empty());
  const auto d = decay_sequence(events, "A", 0.5, 104, 0);
  CHECK(d[5] == 1.0);
  CHECK(d[60] == doctest::Approx(2.0 + std::exp(-27.5)));
}

TEST_CASE("smoothing spline interpolates as lambda vanishes and is linear when large") {
  std::vector<double> t, y;
  for (int i = 0; i < 12; ++i) {
    t.push_back(i);
    y.push_back(std::sin(0.5 * i));
  }
  const SmoothingSpline tight(t, y, 1e-10);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(tight.value(t[i]) == doctest::Approx(y[i]).epsilon(1e-6));

  std::vector<double> line;
  for (double ti : t) line.push_back(3.0 - 2.0 * ti);
  const SmoothingSpline flat(t, line, 10.0);
  CHECK(flat.value(4.5) == doctest::Approx(-6.0));
  CHECK(flat.derivative(7.2) == doctest::Approx(-2.0));
  CHECK(flat.curvature().front() == 0.0);
  CHECK(flat.curvature().back() == 0.0);
}

TEST_CASE("estimate_potential conventions") {
  gen::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TimePoint> pts;
    double v = rng.uniform(50, 150);
    for (int t = 0; t < 26; ++t) {
      v += rng.normal(5.0) - 0.2 * (v - 100);
      pts.push_back({double(t), v});
    }
    ResilienceConfig cfg;
    const auto est = estimate_potential(pts, cfg);
    REQUIRE(est.has_value());
    CHECK(est->V[0] == 0.0);
    CHECK(std::is_sorted(est->v_grid.begin(), est->v_grid.end()));
    const double vmin = *std::min_element(est->V.begin(), est->V.end());
    CHECK(est->V[est->star] == vmin);
  }
}

TEST_CASE("estimate_potential reports undefined windows") {
  ResilienceConfig cfg;
  std::vector<TimePoint> flat;
  for (int t = 0; t < 26; ++t) flat.push_back({double(t), 7.0});
  CHECK_FALSE(estimate_potential(flat, cfg).has_value());
  std::vector<TimePoint> few{{0, 1}, {1, 2}, {2, 3}};
  CHECK_FALSE(estimate_potential(few, cfg).has_value());
}

TEST_CASE("rolling_resilience recovers the relaxation rate") {
  ResilienceConfig cfg;
  cfg.window = 26;
  cfg.bins = 20;
  const double m01 = interior_median(rolling_resilience(relaxation(0.1, 104), cfg), cfg.window);
  const double m05 = interior_median(rolling_resilience(relaxation(0.5, 104), cfg), cfg.window);
  CHECK(std::abs(m01 - 0.1) <= 0.2 * 0.1);
  CHECK(std::abs(m05 - 0.5) <= 0.2 * 0.5);
  CHECK(m05 > m01);
}

TEST_CASE("rolling_resilience keeps length and marks flat stretches undefined") {
  ResilienceConfig cfg;
  std::vector<double> v(60, 10.0);
  const auto r = rolling_resilience(v, cfg);
  CHECK(r.size() == v.size());
  CHECK(std::all_of(r.begin(), r.end(), [](double x) { return std::isnan(x); }));
}

TEST_CASE("config validation") {
  ResilienceConfig cfg;
  cfg.window = 7;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.window = 26;
  cfg.bins = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.bins = 20;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("fill_undefined") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> a{nan, 1.0, nan, nan, 3.0};
  auto b = a;
  fill_undefined(a, UndefinedFill::Zero);
  CHECK(a == std::vector<double>{0.0, 1.0, 0.0, 0.0, 3.0});
  fill_undefined(b, UndefinedFill::ForwardFill, -1.0);
  CHECK(b == std::vector<double>{-1.0, 1.0, 1.0, 1.0, 3.0});
}
