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

#include "htsr/train.hpp"

#include <cmath>
#include <string>

#include "htsr/error.hpp"

namespace htsr {

namespace {

bool needs_gradients(const SchedulerConfig& cfg) {
  return cfg.metric == MetricKind::kGradNorm ||
         std::holds_alternative<assign::AwdGlobal>(cfg.assign);
}

}  // namespace

void TrainConfig::validate(const ModelConfig& model) const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kConfig, what);
  };
  model.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
  if (steps == 0) fail("steps must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    fail("warmup_fraction must lie in [0, 1]");
  }
  if (warmup_fraction > 0.0 &&
      warmup_fraction * static_cast<double>(steps) < 1.0) {
    fail("warmup_fraction * steps must be >= 1 when warmup is enabled");
  }
  if (batch == 0) fail("batch must be positive");
  if (seq_len == 0 || seq_len > model.context) {
    fail("seq_len must lie in [1, context]");
  }
  if (!(clip > 0.0)) fail("clip must be > 0");
  if (!(lr_floor_ratio >= 0.0 && lr_floor_ratio <= 1.0)) {
    fail("lr_floor_ratio must lie in [0, 1]");
  }
  if (scheduler.scheduled_kinds.contains(ModuleKind::kOther)) {
    fail("only projection kinds can be scheduled");
  }
  try {
    scheduler.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
}

EvalResult evaluate(const Parameters& params,
                    std::span<const std::uint8_t> held_out,
                    std::size_t max_tokens) {
  if (held_out.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "empty held-out set");
  }
  const std::size_t window =
      std::min(params.config.context, held_out.size() - 1);
  std::size_t windows = (held_out.size() - 1) / window;
  if (max_tokens > 0) {
    windows = std::max<std::size_t>(1, std::min(windows, max_tokens / window));
  }

  constexpr std::size_t kWindowsPerBatch = 16;
  LossSum sum;
  for (std::size_t first = 0; first < windows; first += kWindowsPerBatch) {
    const std::size_t count = std::min(kWindowsPerBatch, windows - first);
    Batch b;
    b.sequences = count;
    b.length = window;
    for (std::size_t i = 0; i < count; ++i) {
      const auto begin = held_out.begin() + (first + i) * window;
      b.tokens.insert(b.tokens.end(), begin, begin + window + 1);
    }
    const LossSum part = forward_loss_sum(params, b);
    sum.total += part.total;
    sum.tokens += part.tokens;
  }
  EvalResult r;
  r.tokens = sum.tokens;
  r.cross_entropy = sum.total / static_cast<double>(sum.tokens);
  r.perplexity = std::exp(r.cross_entropy);
  return r;
}

TrainResult train_run(const ModelConfig& model, const TrainConfig& config,
                      const Corpus& corpus, const StepObserver& observer) {
  config.validate(model);
  if (corpus.train.size() < config.seq_len + 1) {
    throw Error(ErrorCode::kConfig, "training split shorter than one sequence");
  }
  if (corpus.validation.size() < 2) {
    throw Error(ErrorCode::kConfig, "validation split is empty");
  }

  const SchedulerConfig& sched = config.scheduler;
  TrainResult result{RunLog{}, build_model(model, config.seed)};
  Parameters& params = result.params;
  RunLog& log = result.log;
  log.steps.reserve(config.steps);

  OptimizerState state = OptimizerState::zeros_like(params.values);
  const std::vector<std::size_t> projections = params.projection_indices();
  std::vector<ModuleId> scheduled;
  for (std::size_t i : projections) {
    if (sched.scheduled_kinds.contains(params.ids[i].kind)) {
      scheduled.push_back(params.ids[i]);
    }
  }

  DecayPlan plan = uniform_plan(scheduled, sched.eta);
  AwdState awd;
  const bool want_grads = needs_gradients(sched);
  Gradients last_grads;  // pre-clip, from the previous step

  for (std::size_t t = 0; t <= config.steps; ++t) {
    if (is_recompute_step(t, sched)) {
      std::vector<ModuleInput> inputs;
      inputs.reserve(projections.size());
      for (std::size_t i : projections) {
        inputs.push_back({params.ids[i], &params.values[i],
                          last_grads.empty() ? nullptr : &last_grads[i]});
      }
      RecomputeRecord rec;
      rec.step = t;
      rec.reports = analyze_modules(inputs, sched.fit, sched.fit_options,
                                    config.analysis_threads);
      std::map<ModuleId, SpectralReport> by_id;
      for (const auto& r : rec.reports) by_id.emplace(r.module, r);
      if (want_grads && last_grads.empty()) {
        plan = uniform_plan(scheduled, sched.eta, t);
      } else {
        plan = scheduler_step(t, sched, params.ids, by_id, plan, &awd);
      }
      rec.plan = plan;
      log.recomputes.push_back(std::move(rec));
    }
    if (t == config.steps) break;

    const Batch batch = sample_batch(corpus.train, config.batch, config.seq_len,
                                     config.seed, t);
    LossAndGrads fb = forward_backward(params, batch);
    if (!std::isfinite(fb.loss)) {
      throw DivergenceError(t, "non-finite training loss");
    }
    if (want_grads) last_grads = fb.grads;

    const double lr = lr_at(t, config.steps, config.warmup_fraction, config.lr,
                            config.lr_floor_ratio);
    const StepStats stats = optimizer_step(params.values, params.ids, fb.grads,
                                           state, lr, plan, config.optimizer,
                                           config.clip);
    log.steps.push_back({t, fb.loss, lr, stats.grad_norm});
    if (observer) observer(log.steps.back());
  }

  const EvalResult eval =
      evaluate(params, corpus.validation, config.eval_tokens);
  if (!std::isfinite(eval.cross_entropy)) {
    throw DivergenceError(config.steps, "non-finite validation loss");
  }
  log.final_val_loss = eval.cross_entropy;
  log.perplexity = eval.perplexity;
  return result;
}

}  // namespace htsr
