#include "dblp/clr.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "dblp/error.hpp"

namespace dblp {

bool clr_triggered(double prev_norm, double curr_norm, double eta) {
  if (!(prev_norm >= 0.0) || !(curr_norm >= 0.0)) {
    throw std::invalid_argument(fmt::format("norms must be non-negative (got {}, {})", prev_norm, curr_norm));
  }
  if (prev_norm == 0.0) return curr_norm > 0.0;
  return std::abs(prev_norm - curr_norm) / prev_norm >= eta;
}

double l2_norm(const TensorList& tensors) {
  double sum = 0.0;
  for (const auto& t : tensors) {
    for (float v : t.values) sum += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sum);
}

std::string_view to_string(ClrCompare mode) {
  return mode == ClrCompare::CheckStep ? "check-step" : "previous-step";
}

ClrCompare parse_clr_compare(std::string_view text) {
  if (text == "check-step") return ClrCompare::CheckStep;
  if (text == "previous-step") return ClrCompare::PreviousStep;
  throw ConfigError(fmt::format("unknown CLR comparison mode '{}'", text));
}

void ScheduleParams::validate() const {
  if (!(p_low >= 0.0 && p_low < p_high && p_high < 1.0)) {
    throw ConfigError(fmt::format("need 0 <= p_low < p_high < 1 (got {}, {})", p_low, p_high));
  }
  if (!(eta > 0.0)) throw ConfigError(fmt::format("eta must be positive (got {})", eta));
  if (freq == 0) throw ConfigError("CLR check frequency must be positive");
}

ToleranceSchedule::ToleranceSchedule(ScheduleParams params) : params_(params), active_(params.p_low) {
  params_.validate();
}

double ToleranceSchedule::advance(std::uint64_t step, double curr_norm) {
  const std::uint64_t expected = last_step_ ? *last_step_ + 1 : 0;
  if (step != expected) {
    throw std::invalid_argument(fmt::format("schedule expected step {}, got {}", expected, step));
  }
  last_step_ = step;
  started_ = true;

  if (step % params_.freq == 0) {
    const bool triggered = prev_norm_ && clr_triggered(*prev_norm_, curr_norm, params_.eta);
    clr_remaining_ = triggered ? params_.freq : 0;
    if (params_.compare == ClrCompare::CheckStep) prev_norm_ = curr_norm;
  } else if (clr_remaining_ > 0) {
    --clr_remaining_;
  }
  if (params_.compare == ClrCompare::PreviousStep) prev_norm_ = curr_norm;

  in_clr_ = step == 0 || clr_remaining_ > 0;
  active_ = in_clr_ ? params_.p_low : params_.p_high;
  return active_;
}

TolerancePolicy TolerancePolicy::fixed(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError(fmt::format("fixed tolerance {} outside [0, 1)", p));
  TolerancePolicy policy;
  policy.fixed_ = p;
  return policy;
}

TolerancePolicy TolerancePolicy::adaptive(ScheduleParams params) {
  TolerancePolicy policy;
  policy.schedule_.emplace(params);
  return policy;
}

double TolerancePolicy::current() const { return schedule_ ? schedule_->active() : fixed_; }

double TolerancePolicy::update(std::uint64_t step, double norm) {
  return schedule_ ? schedule_->advance(step, norm) : fixed_;
}

bool TolerancePolicy::clr_active() const { return schedule_ && schedule_->clr_active(); }

}  // namespace dblp
