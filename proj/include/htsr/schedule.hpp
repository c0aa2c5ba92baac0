/* Copyright 2026 The htsr-decay Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef HTSR_SCHEDULE_HPP_
#define HTSR_SCHEDULE_HPP_

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string_view>
#include <variant>

#include "htsr/spectral.hpp"
#include "htsr/tensor_io.hpp"

namespace htsr {

namespace assign {

struct Uniform {
  bool operator==(const Uniform&) const = default;
};
// Min metric maps to s1*eta, max to s2*eta, linear in between.
struct Linear {
  double s1 = 0.67;
  double s2 = 5.0;
  bool operator==(const Linear&) const = default;
};
struct Sqrt {
  bool operator==(const Sqrt&) const = default;
};
struct Log2 {
  bool operator==(const Log2&) const = default;
};
// eta * 2 / (1 + exp(-beta * z)), z the per-layer standardized metric.
struct SigmoidLike {
  double beta = 4.0;
  bool operator==(const SigmoidLike&) const = default;
};
// Time-wise baseline: eta * (||g|| / ||w||) / running mean of that ratio,
// the same for every module. Approximate; not the cited method verbatim.
struct AwdGlobal {
  bool operator==(const AwdGlobal&) const = default;
};

}  // namespace assign

using AssignFn = std::variant<assign::Uniform, assign::Linear, assign::Sqrt,
                              assign::Log2, assign::SigmoidLike,
                              assign::AwdGlobal>;

// "uniform", "linear", "sqrt", "log2", "sigmoid_like", "awd_global".
std::string_view assign_fn_name(const AssignFn& fn);
void validate_assign_fn(const AssignFn& fn);

enum class MetricKind { kPlAlphaHill, kGradNorm, kFrobeniusNorm, kSpectralNorm };

// "pl_alpha_hill", "grad_norm", "frobenius_norm", "spectral_norm".
std::string_view metric_name(MetricKind metric);
std::optional<MetricKind> parse_metric(std::string_view name);

using MetricMap = std::map<ModuleId, double>;

struct DecayPlan {
  std::size_t step = 0;
  double eta = 0.0;
  std::map<ModuleId, double> assignments;
  MetricMap metric_values;

  // Scheduled modules get their assignment; everything else gets eta.
  double decay_for(const ModuleId& id) const;

  bool operator==(const DecayPlan&) const = default;
};

DecayPlan uniform_plan(std::span<const ModuleId> modules, double eta,
                       std::size_t step = 0);

DecayPlan assign_linear(const MetricMap& metrics, double eta, double s1,
                        double s2);
DecayPlan assign_sqrt(const MetricMap& metrics, double eta);
DecayPlan assign_log2(const MetricMap& metrics, double eta);
// Standardization uses the population mean and std of each layer's metric
// values; a layer with one member or zero spread maps to z = 0.
DecayPlan assign_sigmoid_like(const MetricMap& grad_norms, double eta,
                              double beta);

// eta * (grad_norm_total / weight_norm_total) / running_mean_ratio.
double awd_global(double grad_norm_total, double weight_norm_total, double eta,
                  double running_mean_ratio);

// Running mean of the gradient-to-weight norm ratio since the first call.
class AwdState {
 public:
  // Folds the current ratio into the running mean, then returns awd_global
  // against the updated mean.
  double update(double grad_norm_total, double weight_norm_total, double eta);

  double running_mean() const { return mean_; }
  std::size_t count() const { return count_; }

 private:
  double mean_ = 0.0;
  std::size_t count_ = 0;
};

std::set<ModuleKind> default_scheduled_kinds();

struct SchedulerConfig {
  double eta = 0.0;
  AssignFn assign = assign::Linear{};
  MetricKind metric = MetricKind::kPlAlphaHill;
  FitMethod fit = FitMethod::kMedian;
  FitOptions fit_options;
  std::size_t interval = 500;
  std::set<ModuleKind> scheduled_kinds = default_scheduled_kinds();
  // Larger metric maps to smaller decay when set (metric values are
  // replaced by their reciprocals).
  bool invert_metric = false;
  // Linear min/max taken per layer instead of model-wide.
  bool per_layer_range = false;

  void validate() const;
};

bool is_recompute_step(std::size_t t, const SchedulerConfig& cfg);

// Metric values of `cfg.metric` for every scheduled module; throws
// ScheduleError when a report is missing or lacks the metric.
MetricMap collect_metrics(const SchedulerConfig& cfg,
                          std::span<const ModuleId> modules,
                          const std::map<ModuleId, SpectralReport>& reports);

// One tick of the periodic re-assignment loop. Off-interval steps return
// `previous` unchanged; recompute steps rebuild the plan over the scheduled
// subset of `modules`. `awd` is required only for AwdGlobal.
DecayPlan scheduler_step(std::size_t t, const SchedulerConfig& cfg,
                         std::span<const ModuleId> modules,
                         const std::map<ModuleId, SpectralReport>& reports,
                         const DecayPlan& previous, AwdState* awd = nullptr);

}  // namespace htsr

#endif  // HTSR_SCHEDULE_HPP_
