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

#ifndef HTSR_TRAIN_HPP_
#define HTSR_TRAIN_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "htsr/model.hpp"
#include "htsr/optimizer.hpp"
#include "htsr/schedule.hpp"
#include "htsr/spectral.hpp"

namespace htsr {

// Byte-level corpus split at a fixed offset: [0, offset) trains,
// [offset, end) validates.
struct Corpus {
  std::vector<std::uint8_t> train;
  std::vector<std::uint8_t> validation;
};

Corpus split_corpus(std::span<const std::uint8_t> bytes,
                    std::size_t split_offset);
std::vector<std::uint8_t> read_corpus_file(const std::filesystem::path& path);

// Deterministic English-like text: Zipf-distributed pseudo-words with sticky
// successor preferences, sentences, and paragraphs.
std::vector<std::uint8_t> synthetic_corpus(std::size_t bytes,
                                           std::uint64_t seed);

// `sequences` windows of length + 1 bytes at offsets drawn from a generator
// seeded by (seed, step).
Batch sample_batch(std::span<const std::uint8_t> data, std::size_t sequences,
                   std::size_t length, std::uint64_t seed, std::size_t step);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t steps = 2000;
  double warmup_fraction = 0.1;
  std::size_t batch = 8;
  std::size_t seq_len = 64;
  double clip = 1.0;
  std::uint64_t seed = 0;
  OptimizerMode optimizer = OptimizerMode::kAdam;
  double lr_floor_ratio = 0.1;
  // Cap on predicted validation tokens; 0 evaluates the whole split.
  std::size_t eval_tokens = 0;
  unsigned analysis_threads = 1;
  SchedulerConfig scheduler;

  // Throws Error(kConfig).
  void validate(const ModelConfig& model) const;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // global, before clipping
};

// Plan and analyses produced at one recompute step. The last one sits at
// t = steps (the trained weights) when steps is a multiple of the interval.
struct RecomputeRecord {
  std::size_t step = 0;
  DecayPlan plan;
  std::vector<SpectralReport> reports;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<RecomputeRecord> recomputes;
  double final_val_loss = 0.0;
  double perplexity = 0.0;
};

struct EvalResult {
  double cross_entropy = 0.0;
  double perplexity = 0.0;
  std::size_t tokens = 0;
};

// Mean cross-entropy over non-overlapping context windows of `held_out`.
EvalResult evaluate(const Parameters& params,
                    std::span<const std::uint8_t> held_out,
                    std::size_t max_tokens = 0);

struct TrainResult {
  RunLog log;
  Parameters params;
};

using StepObserver = std::function<void(const StepRecord&)>;

// Periodic schedule loop over t = 0..steps: at every t with t % interval == 0
// the projection matrices are analyzed and the plan recomputed; for t < steps
// one optimizer step follows. Throws DivergenceError on a non-finite loss.
TrainResult train_run(const ModelConfig& model, const TrainConfig& config,
                      const Corpus& corpus, const StepObserver& observer = {});

}  // namespace htsr

#endif  // HTSR_TRAIN_HPP_
