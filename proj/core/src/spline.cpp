#include "sta4clc/spline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>

namespace sta4clc {

SmoothingSpline::SmoothingSpline(std::span<const double> t, std::span<const double> y, double lambda)
    : t_(t.begin(), t.end()), g_(y.begin(), y.end()), gamma_(t.size(), 0.0) {
  const std::size_t n = t_.size();
  if (n != g_.size()) throw std::invalid_argument("SmoothingSpline: t and y differ in length");
  if (n < 2) throw std::invalid_argument("SmoothingSpline: need at least two points");
  if (lambda < 0.0) throw std::invalid_argument("SmoothingSpline: negative smoothing");
  for (std::size_t i = 1; i < n; ++i)
    if (!(t_[i] > t_[i - 1])) throw std::invalid_argument("SmoothingSpline: abscissae must increase strictly");
  if (n == 2) return;

  const std::size_t m = n - 2;
  std::vector<double> h(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) h[i] = t_[i + 1] - t_[i];

  // Q is n x m (three non-zeros per column), R is m x m tridiagonal.
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    Q(J, J) = 1.0 / h[j];
    Q(J + 1, J) = -1.0 / h[j] - 1.0 / h[j + 1];
    Q(J + 2, J) = 1.0 / h[j + 1];
    R(J, J) = (h[j] + h[j + 1]) / 3.0;
    if (j + 1 < m) {
      R(J, J + 1) = h[j + 1] / 6.0;
      R(J + 1, J) = h[j + 1] / 6.0;
    }
  }
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(n));
  const Eigen::MatrixXd A = R + lambda * Q.transpose() * Q;
  const Eigen::VectorXd gamma = A.ldlt().solve(Q.transpose() * yv);
  const Eigen::VectorXd g = yv - lambda * Q * gamma;
  for (std::size_t i = 0; i < n; ++i) g_[i] = g(static_cast<Eigen::Index>(i));
  for (std::size_t j = 0; j < m; ++j) gamma_[j + 1] = gamma(static_cast<Eigen::Index>(j));
}

std::size_t SmoothingSpline::segment(double t) const {
  auto it = std::upper_bound(t_.begin(), t_.end(), t);
  std::size_t i = it == t_.begin() ? 0 : static_cast<std::size_t>(it - t_.begin()) - 1;
  return std::min(i, t_.size() - 2);
}

double SmoothingSpline::value(double t) const {
  const std::size_t i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double a = (t_[i + 1] - t) / h, b = (t - t_[i]) / h;
  return a * g_[i] + b * g_[i + 1] + ((a * a * a - a) * gamma_[i] + (b * b * b - b) * gamma_[i + 1]) * h * h / 6.0;
}

double SmoothingSpline::derivative(double t) const {
  const std::size_t i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double a = (t_[i + 1] - t) / h, b = (t - t_[i]) / h;
  return (g_[i + 1] - g_[i]) / h - (3.0 * a * a - 1.0) / 6.0 * h * gamma_[i] +
         (3.0 * b * b - 1.0) / 6.0 * h * gamma_[i + 1];
}

}  // namespace sta4clc
