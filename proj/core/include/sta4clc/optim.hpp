#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sta4clc/autodiff.hpp"

namespace sta4clc::ad {

struct AdamOptions {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators for a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options);

  /// Applies one bias-corrected update from the parameters' current
  /// gradients (missing gradients count as zero). Throws NumericError naming
  /// the parameter when a gradient is non-finite; nothing is updated then.
  void step();
  void zero_grad();

  long step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  AdamOptions options_;
  std::vector<Array> m_;
  std::vector<Array> v_;
  long step_ = 0;
};

struct GradcheckEntry {
  std::string name;
  std::size_t count = 0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double max_abs_error = 0.0;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||); 0 when both are
  /// within finite-difference rounding noise of zero.
  double relative_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_relative_error = 0.0;
  bool passed = true;
};

/// Compares reverse-mode gradients against central differences with step h.
/// The closure must rebuild the loss from the parameters' current values.
GradcheckReport gradcheck(const std::function<Var()>& loss_fn, const std::vector<Var>& params, double h = 1e-5,
                          double tol = 1e-4);

}  // namespace sta4clc::ad
