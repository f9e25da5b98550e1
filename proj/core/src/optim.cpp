#include "sta4clc/optim.hpp"

#include <algorithm>
#include <limits>
#include <cmath>

#include "sta4clc/error.hpp"

namespace sta4clc::ad {

Adam::Adam(std::vector<Var> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  for (const auto& p : params_) {
    for (double g : p.grad().values())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name() + "'");
  }
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Array& value = params_[i].mutable_value();
    const Array& grad = params_[i].grad();
    const bool has_grad = grad.size() == value.size();
    Array& m = m_[i];
    Array& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = has_grad ? grad[j] : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      value[j] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }
}

GradcheckReport gradcheck(const std::function<Var()>& loss_fn, const std::vector<Var>& params, double h,
                          double tol) {
  std::vector<Var> ps = params;
  for (auto& p : ps) p.zero_grad();
  Var loss = loss_fn();
  backward(loss);
  const double loss0 = loss.value()[0];

  GradcheckReport report;
  for (auto& p : ps) {
    GradcheckEntry entry;
    entry.name = p.name();
    Array& value = p.mutable_value();
    entry.count = value.size();
    const Array analytic = p.grad().size() == value.size() ? p.grad() : Array(value.shape(), 0.0);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double saved = value[j];
      value[j] = saved + h;
      const double up = loss_fn().value()[0];
      value[j] = saved - h;
      const double down = loss_fn().value()[0];
      value[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double d = analytic[j] - numeric;
      diff2 += d * d;
      a2 += analytic[j] * analytic[j];
      n2 += numeric * numeric;
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(d));
    }
    entry.analytic_norm = std::sqrt(a2);
    entry.numeric_norm = std::sqrt(n2);
    // Gradients that vanish structurally leave rounding noise of order
    // eps * |loss| / h in the differences; below that level both sides count
    // as zero rather than as a 100% error.
    const double noise = 100.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss0)) / h *
                         std::sqrt(static_cast<double>(value.size()));
    const double denom = std::max(entry.analytic_norm, entry.numeric_norm);
    entry.relative_error = denom > noise ? std::sqrt(diff2) / denom : 0.0;
    entry.passed = std::isfinite(entry.relative_error) && entry.relative_error <= tol;
    report.max_relative_error = std::max(report.max_relative_error, entry.relative_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace sta4clc::ad
