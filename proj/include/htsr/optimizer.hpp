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

#ifndef HTSR_OPTIMIZER_HPP_
#define HTSR_OPTIMIZER_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "htsr/schedule.hpp"
#include "htsr/tensor_io.hpp"

namespace htsr {

// kAdam couples decay as L2 (g += lambda * w before the moments); kAdamW
// decouples it (w -= lr * lambda * w after the Adam update).
enum class OptimizerMode { kAdam, kAdamW };

std::string_view optimizer_name(OptimizerMode mode);
std::optional<OptimizerMode> parse_optimizer(std::string_view name);

struct AdamConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<RowMajorMatrix> m;
  std::vector<RowMajorMatrix> v;
  std::size_t step = 0;
  AdamConstants constants;

  static OptimizerState zeros_like(std::span<const RowMajorMatrix> params,
                                   AdamConstants constants = {});
};

struct StepStats {
  double grad_norm = 0.0;   // global L2 norm before clipping
  double clip_scale = 1.0;  // factor applied to the gradients
};

double global_grad_norm(std::span<const RowMajorMatrix> grads);

// Clips `grads` in place to global norm `clip` (no-op when clip <= 0 or the
// norm is already within bounds). Returns the pre-clip norm and scale.
StepStats clip_gradients(std::span<RowMajorMatrix> grads, double clip);

// One update of every parameter. `grads` is consumed as scratch. The decay of
// parameter i is plan.decay_for(ids[i]). Throws DivergenceError (with
// state.step) on a non-finite update and Error on shape mismatch.
StepStats optimizer_step(std::span<RowMajorMatrix> params,
                         std::span<const ModuleId> ids,
                         std::span<RowMajorMatrix> grads, OptimizerState& state,
                         double lr, const DecayPlan& plan, OptimizerMode mode,
                         double clip);

// Linear warmup from 0 over ceil(warmup_fraction * total) steps, then cosine
// from lr_peak down to floor_ratio * lr_peak at t = total.
double lr_at(std::size_t t, std::size_t total, double warmup_fraction,
             double lr_peak, double floor_ratio = 0.1);

}  // namespace htsr

#endif  // HTSR_OPTIMIZER_HPP_
