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

#include "htsr/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "htsr/error.hpp"

namespace htsr {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_nonempty_finite(const MetricMap& metrics) {
  if (metrics.empty()) {
    throw ScheduleError(ErrorCode::kInvalidArgument, "empty metric map");
  }
  for (const auto& [id, v] : metrics) {
    if (!std::isfinite(v)) {
      throw ScheduleError(ErrorCode::kNonFinite,
                          "metric for '" + id.raw_name + "'");
    }
  }
}

void require_eta(double eta) {
  if (!(eta >= 0.0) || !std::isfinite(eta)) {
    throw ScheduleError(ErrorCode::kInvalidArgument, "eta must be >= 0");
  }
}

DecayPlan plan_from(const MetricMap& metrics, double eta) {
  DecayPlan plan;
  plan.eta = eta;
  plan.metric_values = metrics;
  return plan;
}

// Position of v in [lo, hi] mapped onto [s1, s2]. The endpoints are exact.
double linear_factor(double v, double lo, double hi, double s1, double s2) {
  if (hi == lo) return 0.5 * s1 + 0.5 * s2;
  if (v == hi) return s2;
  const double t = (v - lo) / (hi - lo);
  return s1 + t * (s2 - s1);
}

// Ratio weights w_i / mean(w) applied to eta.
DecayPlan mean_normalized(const MetricMap& metrics, double eta,
                          const std::map<ModuleId, double>& weights) {
  double sum = 0.0;
  for (const auto& [id, w] : weights) sum += w;
  const double mean = sum / static_cast<double>(weights.size());
  DecayPlan plan = plan_from(metrics, eta);
  for (const auto& [id, w] : weights) plan.assignments[id] = eta * (w / mean);
  return plan;
}

DecayPlan assign_linear_per_layer(const MetricMap& metrics, double eta,
                                  double s1, double s2) {
  std::map<std::size_t, MetricMap> layers;
  for (const auto& [id, v] : metrics) layers[id.layer_index][id] = v;
  DecayPlan plan = plan_from(metrics, eta);
  for (const auto& [layer, group] : layers) {
    const DecayPlan sub = assign_linear(group, eta, s1, s2);
    plan.assignments.insert(sub.assignments.begin(), sub.assignments.end());
  }
  return plan;
}

}  // namespace

std::string_view assign_fn_name(const AssignFn& fn) {
  return std::visit(
      overloaded{
          [](const assign::Uniform&) { return std::string_view("uniform"); },
          [](const assign::Linear&) { return std::string_view("linear"); },
          [](const assign::Sqrt&) { return std::string_view("sqrt"); },
          [](const assign::Log2&) { return std::string_view("log2"); },
          [](const assign::SigmoidLike&) {
            return std::string_view("sigmoid_like");
          },
          [](const assign::AwdGlobal&) {
            return std::string_view("awd_global");
          },
      },
      fn);
}

void validate_assign_fn(const AssignFn& fn) {
  if (const auto* lin = std::get_if<assign::Linear>(&fn)) {
    if (!(lin->s1 > 0.0) || !(lin->s1 <= lin->s2) || !std::isfinite(lin->s2)) {
      throw ScheduleError(ErrorCode::kInvalidArgument,
                          "linear assignment needs 0 < s1 <= s2");
    }
  }
  if (const auto* sig = std::get_if<assign::SigmoidLike>(&fn)) {
    if (!(sig->beta > 0.0) || !std::isfinite(sig->beta)) {
      throw ScheduleError(ErrorCode::kInvalidArgument,
                          "sigmoid-like assignment needs beta > 0");
    }
  }
}

std::string_view metric_name(MetricKind metric) {
  switch (metric) {
    case MetricKind::kPlAlphaHill: return "pl_alpha_hill";
    case MetricKind::kGradNorm: return "grad_norm";
    case MetricKind::kFrobeniusNorm: return "frobenius_norm";
    case MetricKind::kSpectralNorm: return "spectral_norm";
  }
  return "unknown";
}

std::optional<MetricKind> parse_metric(std::string_view name) {
  for (auto m : {MetricKind::kPlAlphaHill, MetricKind::kGradNorm,
                 MetricKind::kFrobeniusNorm, MetricKind::kSpectralNorm}) {
    if (metric_name(m) == name) return m;
  }
  return std::nullopt;
}

double DecayPlan::decay_for(const ModuleId& id) const {
  auto it = assignments.find(id);
  return it == assignments.end() ? eta : it->second;
}

DecayPlan uniform_plan(std::span<const ModuleId> modules, double eta,
                       std::size_t step) {
  require_eta(eta);
  DecayPlan plan;
  plan.step = step;
  plan.eta = eta;
  for (const auto& id : modules) plan.assignments[id] = eta;
  return plan;
}

DecayPlan assign_linear(const MetricMap& metrics, double eta, double s1,
                        double s2) {
  require_nonempty_finite(metrics);
  require_eta(eta);
  validate_assign_fn(assign::Linear{s1, s2});
  double lo = metrics.begin()->second;
  double hi = lo;
  for (const auto& [id, v] : metrics) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  DecayPlan plan = plan_from(metrics, eta);
  for (const auto& [id, v] : metrics) {
    plan.assignments[id] = eta * linear_factor(v, lo, hi, s1, s2);
  }
  return plan;
}

DecayPlan assign_sqrt(const MetricMap& metrics, double eta) {
  require_nonempty_finite(metrics);
  require_eta(eta);
  std::map<ModuleId, double> weights;
  for (const auto& [id, v] : metrics) {
    if (!(v > 0.0)) {
      throw ScheduleError(ErrorCode::kNonpositiveMetric,
                          "'" + id.raw_name + "' = " + std::to_string(v));
    }
    weights[id] = std::sqrt(v);
  }
  return mean_normalized(metrics, eta, weights);
}

DecayPlan assign_log2(const MetricMap& metrics, double eta) {
  require_nonempty_finite(metrics);
  require_eta(eta);
  std::map<ModuleId, double> weights;
  for (const auto& [id, v] : metrics) {
    if (!(v > 1.0)) {
      throw ScheduleError(ErrorCode::kLogDomain,
                          "'" + id.raw_name + "' = " + std::to_string(v) +
                              " is not > 1");
    }
    weights[id] = std::log2(v);
  }
  return mean_normalized(metrics, eta, weights);
}

DecayPlan assign_sigmoid_like(const MetricMap& grad_norms, double eta,
                              double beta) {
  require_nonempty_finite(grad_norms);
  require_eta(eta);
  validate_assign_fn(assign::SigmoidLike{beta});

  std::map<std::size_t, std::vector<std::pair<ModuleId, double>>> layers;
  for (const auto& [id, g] : grad_norms) {
    layers[id.layer_index].emplace_back(id, std::abs(g));
  }
  DecayPlan plan = plan_from(grad_norms, eta);
  for (const auto& [layer, group] : layers) {
    double mean = 0.0;
    for (const auto& [id, g] : group) mean += g;
    mean /= static_cast<double>(group.size());
    double var = 0.0;
    for (const auto& [id, g] : group) var += (g - mean) * (g - mean);
    const double sd = std::sqrt(var / static_cast<double>(group.size()));
    for (const auto& [id, g] : group) {
      const double z = (group.size() < 2 || !(sd > 0.0)) ? 0.0 : (g - mean) / sd;
      plan.assignments[id] = eta * 2.0 / (1.0 + std::exp(-beta * z));
    }
  }
  return plan;
}

double awd_global(double grad_norm_total, double weight_norm_total, double eta,
                  double running_mean_ratio) {
  if (!(weight_norm_total > 0.0)) {
    throw ScheduleError(ErrorCode::kZeroWeightNorm, "");
  }
  if (!(running_mean_ratio > 0.0)) return eta;
  return eta * (grad_norm_total / weight_norm_total) / running_mean_ratio;
}

double AwdState::update(double grad_norm_total, double weight_norm_total,
                        double eta) {
  if (!(weight_norm_total > 0.0)) {
    throw ScheduleError(ErrorCode::kZeroWeightNorm, "");
  }
  const double ratio = grad_norm_total / weight_norm_total;
  ++count_;
  mean_ += (ratio - mean_) / static_cast<double>(count_);
  return awd_global(grad_norm_total, weight_norm_total, eta, mean_);
}

std::set<ModuleKind> default_scheduled_kinds() {
  return {kProjectionKinds.begin(), kProjectionKinds.end()};
}

void SchedulerConfig::validate() const {
  require_eta(eta);
  if (interval < 1) {
    throw ScheduleError(ErrorCode::kInvalidArgument, "interval must be >= 1");
  }
  validate_assign_fn(assign);
}

bool is_recompute_step(std::size_t t, const SchedulerConfig& cfg) {
  return t % cfg.interval == 0;
}

MetricMap collect_metrics(const SchedulerConfig& cfg,
                          std::span<const ModuleId> modules,
                          const std::map<ModuleId, SpectralReport>& reports) {
  MetricMap metrics;
  for (const auto& id : modules) {
    if (!cfg.scheduled_kinds.contains(id.kind)) continue;
    auto it = reports.find(id);
    if (it == reports.end()) {
      throw ScheduleError(ErrorCode::kMissingReport, "'" + id.raw_name + "'");
    }
    const SpectralReport& r = it->second;
    double v = 0.0;
    switch (cfg.metric) {
      case MetricKind::kPlAlphaHill: v = r.alpha.alpha; break;
      case MetricKind::kFrobeniusNorm: v = r.frobenius_norm; break;
      case MetricKind::kSpectralNorm: v = r.spectral_norm; break;
      case MetricKind::kGradNorm:
        if (!r.grad_norm) {
          throw ScheduleError(ErrorCode::kMissingMetric,
                              "no gradient norm for '" + id.raw_name + "'");
        }
        v = *r.grad_norm;
        break;
    }
    if (cfg.invert_metric) {
      if (!(v > 0.0)) {
        throw ScheduleError(ErrorCode::kNonpositiveMetric,
                            "cannot invert metric of '" + id.raw_name + "'");
      }
      v = 1.0 / v;
    }
    metrics[id] = v;
  }
  return metrics;
}

DecayPlan scheduler_step(std::size_t t, const SchedulerConfig& cfg,
                         std::span<const ModuleId> modules,
                         const std::map<ModuleId, SpectralReport>& reports,
                         const DecayPlan& previous, AwdState* awd) {
  if (!is_recompute_step(t, cfg)) return previous;
  cfg.validate();

  std::vector<ModuleId> scheduled;
  for (const auto& id : modules) {
    if (cfg.scheduled_kinds.contains(id.kind)) scheduled.push_back(id);
  }

  DecayPlan plan;
  if (std::holds_alternative<assign::Uniform>(cfg.assign)) {
    plan = uniform_plan(scheduled, cfg.eta);
    // Metrics are still recorded when available, for reporting.
    bool have_all = true;
    for (const auto& id : scheduled) have_all = have_all && reports.contains(id);
    if (have_all && cfg.metric != MetricKind::kGradNorm) {
      plan.metric_values = collect_metrics(cfg, modules, reports);
    }
  } else if (std::holds_alternative<assign::AwdGlobal>(cfg.assign)) {
    if (awd == nullptr) {
      throw ScheduleError(ErrorCode::kInvalidArgument,
                          "awd_global needs scheduler state");
    }
    double g2 = 0.0;
    double w2 = 0.0;
    for (const auto& id : scheduled) {
      auto it = reports.find(id);
      if (it == reports.end()) {
        throw ScheduleError(ErrorCode::kMissingReport, "'" + id.raw_name + "'");
      }
      if (!it->second.grad_norm) {
        throw ScheduleError(ErrorCode::kMissingMetric,
                            "no gradient norm for '" + id.raw_name + "'");
      }
      g2 += *it->second.grad_norm * *it->second.grad_norm;
      w2 += it->second.frobenius_norm * it->second.frobenius_norm;
    }
    const double decay = awd->update(std::sqrt(g2), std::sqrt(w2), cfg.eta);
    plan = uniform_plan(scheduled, decay);
    plan.eta = cfg.eta;
  } else {
    const MetricMap metrics = collect_metrics(cfg, modules, reports);
    if (metrics.empty()) {
      plan = uniform_plan(scheduled, cfg.eta);
    } else {
      plan = std::visit(
          overloaded{
              [&](const assign::Linear& f) {
                return cfg.per_layer_range
                           ? assign_linear_per_layer(metrics, cfg.eta, f.s1, f.s2)
                           : assign_linear(metrics, cfg.eta, f.s1, f.s2);
              },
              [&](const assign::Sqrt&) { return assign_sqrt(metrics, cfg.eta); },
              [&](const assign::Log2&) { return assign_log2(metrics, cfg.eta); },
              [&](const assign::SigmoidLike& f) {
                return assign_sigmoid_like(metrics, cfg.eta, f.beta);
              },
              [&](const auto&) { return uniform_plan(scheduled, cfg.eta); },
          },
          cfg.assign);
    }
  }
  plan.step = t;
  return plan;
}

}  // namespace htsr
