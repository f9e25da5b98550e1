#pragma once

// Temporal features derived from visitation and disaster records: the rolling
// ball-and-basin resilience metric and the cumulative disaster decay sequence.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sta4clc/data.hpp"

namespace sta4clc::resilience {

struct ResilienceConfig {
  int window = 26;  // W, even, >= 8
  int bins = 20;    // B, >= 5
  double spline_smoothing = 1.0;
  int dense_grid_points = 200;
  int min_points = 6;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

struct TimePoint {
  double t = 0.0;
  double v = 0.0;
};

struct PotentialEstimate {
  std::vector<double> v_grid;  // ascending
  std::vector<double> f_hat;   // drift on the grid
  std::vector<double> V;       // potential, V[0] = 0
  std::vector<double> V2;      // second derivative of V
  std::size_t star = 0;        // argmin of V on the grid
  std::vector<double> bin_v;   // per non-empty bin: mean state
  std::vector<double> bin_f;   // per non-empty bin: mean drift

  double v_star() const { return v_grid[star]; }
  double curvature_at_star() const { return V2[star]; }
};

/// Potential landscape of one window. std::nullopt marks an undefined window
/// (fewer than min_points samples, a flat series, or fewer than two
/// populated bins).
std::optional<PotentialEstimate> estimate_potential(std::span<const TimePoint> points, const ResilienceConfig& config);

/// r[t] = V''(v*) of the window [t - W/2, t + W/2] clipped to the series;
/// undefined windows yield NaN.
std::vector<double> rolling_resilience(std::span<const double> v, const ResilienceConfig& config);

enum class UndefinedFill { Zero, ForwardFill };

/// Replaces NaN entries. Forward fill uses fill_value before the first
/// defined entry.
void fill_undefined(std::span<double> r, UndefinedFill mode, double fill_value = 0.0);

struct DecayConfig {
  double alpha = 0.1733;
};

/// A disaster impulse at a period-local week.
struct Impulse {
  int week = 0;
  double severity = 0.0;
};

/// D[t] = sum over impulses with week <= t of severity * exp(-alpha (t - week)).
std::vector<double> decay_sequence(std::span<const Impulse> impulses, double alpha, std::size_t weeks);

/// Impulses of events falling in [start_week, start_week + weeks) that carry
/// a severity for block_id, expressed in period-local weeks.
std::vector<Impulse> block_impulses(std::span<const data::DisasterEvent> events, const std::string& block_id,
                                    int start_week, std::size_t weeks);

std::vector<double> decay_sequence(std::span<const data::DisasterEvent> events, const std::string& block_id,
                                   double alpha, std::size_t weeks, int start_week = 0);

}  // namespace sta4clc::resilience
