#pragma once

// Critical-learning-regime (CLR) detection and the loss-tolerance schedule.
//
// A CLR is flagged when the global gradient L2 norm moves by at least eta
// relative to the previous sample:
//
//   | ||G_prev|| - ||G_curr|| | / ||G_prev||  >=  eta
//
// Inside a CLR the active tolerance is p_low; outside it is p_high.

#include <cstdint>
#include <optional>
#include <string_view>

#include "dblp/tensor.hpp"

namespace dblp {

/// Relative-change test. A zero previous norm counts as triggered when the
/// current norm is non-zero (maximal relative change) and as not triggered
/// when both are zero.
bool clr_triggered(double prev_norm, double curr_norm, double eta);

/// Global L2 norm over every element of every tensor, accumulated in double.
double l2_norm(const TensorList& tensors);

enum class ClrCompare {
  /// Compare against the norm sampled at the previous check step.
  CheckStep,
  /// Compare against the norm of the immediately preceding step.
  PreviousStep,
};

std::string_view to_string(ClrCompare mode);
ClrCompare parse_clr_compare(std::string_view text);

struct ScheduleParams {
  double p_low = 0.008;
  double p_high = 0.408;
  double eta = 0.5;
  std::uint64_t freq = 10;
  ClrCompare compare = ClrCompare::CheckStep;

  /// Throws ConfigError unless 0 <= p_low < p_high < 1, eta > 0, freq > 0.
  void validate() const;
};

class ToleranceSchedule {
 public:
  explicit ToleranceSchedule(ScheduleParams params);

  /// Feeds the gradient norm of `step` (steps start at 0 and increase by one
  /// per call) and returns the tolerance now in force.
  ///
  /// At steps divisible by freq the norm is compared with the previous
  /// sample: a trigger opens a CLR window of freq steps (re-triggering
  /// restarts it), otherwise the window closes. Between checks the window
  /// counts down. Step 0 is always p_low.
  double advance(std::uint64_t step, double curr_norm);

  /// Tolerance in force after the last advance (p_low before the first).
  double active() const { return active_; }
  /// True inside a CLR window, at step 0, and before the first step.
  bool clr_active() const { return in_clr_; }
  std::uint64_t clr_remaining() const { return clr_remaining_; }
  std::optional<double> prev_norm() const { return prev_norm_; }
  const ScheduleParams& params() const { return params_; }

 private:
  ScheduleParams params_;
  std::uint64_t clr_remaining_ = 0;
  std::optional<double> prev_norm_;
  std::optional<std::uint64_t> last_step_;
  double active_;
  bool in_clr_ = true;
  bool started_ = false;
};

/// Either a fixed tolerance (the baseline) or an adaptive schedule.
class TolerancePolicy {
 public:
  static TolerancePolicy fixed(double p);
  static TolerancePolicy adaptive(ScheduleParams params);

  /// Tolerance for the next transfer.
  double current() const;
  /// Feeds the post-reduce gradient norm of `step`; returns the new tolerance.
  double update(std::uint64_t step, double norm);
  bool clr_active() const;
  bool is_adaptive() const { return schedule_.has_value(); }

 private:
  double fixed_ = 0.0;
  std::optional<ToleranceSchedule> schedule_;
};

}  // namespace dblp
