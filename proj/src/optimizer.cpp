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

#include "htsr/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "htsr/error.hpp"

namespace htsr {

std::string_view optimizer_name(OptimizerMode mode) {
  return mode == OptimizerMode::kAdam ? "adam" : "adamw";
}

std::optional<OptimizerMode> parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerMode::kAdam;
  if (name == "adamw") return OptimizerMode::kAdamW;
  return std::nullopt;
}

OptimizerState OptimizerState::zeros_like(
    std::span<const RowMajorMatrix> params, AdamConstants constants) {
  OptimizerState s;
  s.constants = constants;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.push_back(RowMajorMatrix::Zero(p.rows(), p.cols()));
    s.v.push_back(RowMajorMatrix::Zero(p.rows(), p.cols()));
  }
  return s;
}

double global_grad_norm(std::span<const RowMajorMatrix> grads) {
  double sum = 0.0;
  for (const auto& g : grads) sum += g.squaredNorm();
  return std::sqrt(sum);
}

StepStats clip_gradients(std::span<RowMajorMatrix> grads, double clip) {
  StepStats stats;
  stats.grad_norm = global_grad_norm(grads);
  if (clip > 0.0 && stats.grad_norm > clip) {
    stats.clip_scale = clip / stats.grad_norm;
    for (auto& g : grads) g *= stats.clip_scale;
  }
  return stats;
}

StepStats optimizer_step(std::span<RowMajorMatrix> params,
                         std::span<const ModuleId> ids,
                         std::span<RowMajorMatrix> grads, OptimizerState& state,
                         double lr, const DecayPlan& plan, OptimizerMode mode,
                         double clip) {
  const std::size_t n = params.size();
  if (ids.size() != n || grads.size() != n || state.m.size() != n ||
      state.v.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "optimizer inputs differ in length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (grads[i].rows() != params[i].rows() ||
        grads[i].cols() != params[i].cols() ||
        state.m[i].rows() != params[i].rows() ||
        state.m[i].cols() != params[i].cols()) {
      throw Error(ErrorCode::kShapeMismatch, "'" + ids[i].raw_name + "'");
    }
  }

  const StepStats stats = clip_gradients(grads, clip);
  const auto& c = state.constants;
  const std::size_t step = ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));

  for (std::size_t i = 0; i < n; ++i) {
    const double decay = plan.decay_for(ids[i]);
    auto& g = grads[i];
    auto& w = params[i];
    if (mode == OptimizerMode::kAdam && decay != 0.0) g += decay * w;

    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g.cwiseAbs2();
    w.array() -= lr * (state.m[i].array() / bc1) /
                 ((state.v[i].array() / bc2).sqrt() + c.eps);
    if (mode == OptimizerMode::kAdamW && decay != 0.0) w *= 1.0 - lr * decay;

    if (!w.allFinite() || !state.m[i].allFinite() || !state.v[i].allFinite()) {
      throw DivergenceError(step - 1,
                            "non-finite update of '" + ids[i].raw_name + "'");
    }
  }
  return stats;
}

double lr_at(std::size_t t, std::size_t total, double warmup_fraction,
             double lr_peak, double floor_ratio) {
  const auto warmup = static_cast<std::size_t>(
      std::ceil(warmup_fraction * static_cast<double>(total)));
  if (t < warmup) {
    return lr_peak * static_cast<double>(t) / static_cast<double>(warmup);
  }
  if (total <= warmup) return lr_peak;
  const double progress = std::min(
      1.0, static_cast<double>(t - warmup) / static_cast<double>(total - warmup));
  const double lr_min = floor_ratio * lr_peak;
  return lr_min +
         (lr_peak - lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace htsr
