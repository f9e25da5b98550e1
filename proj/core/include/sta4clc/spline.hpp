#pragma once

#include <span>
#include <vector>

namespace sta4clc {

/// Natural cubic smoothing spline minimizing
///   sum_i (y_i - s(t_i))^2 + lambda * integral s''(t)^2 dt
/// with knots at the (strictly increasing) sample abscissae (Reinsch form).
class SmoothingSpline {
 public:
  SmoothingSpline(std::span<const double> t, std::span<const double> y, double lambda);

  double value(double t) const;
  double derivative(double t) const;

  const std::vector<double>& knots() const { return t_; }
  const std::vector<double>& fitted() const { return g_; }
  /// Second derivatives at the knots (zero at both ends).
  const std::vector<double>& curvature() const { return gamma_; }

 private:
  std::size_t segment(double t) const;

  std::vector<double> t_;
  std::vector<double> g_;
  std::vector<double> gamma_;
};

}  // namespace sta4clc
