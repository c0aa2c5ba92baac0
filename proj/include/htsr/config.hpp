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

#ifndef HTSR_CONFIG_HPP_
#define HTSR_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "htsr/model.hpp"
#include "htsr/train.hpp"

namespace htsr {

// Either a byte file (`path`, resolved against the config's directory) or a
// generated corpus of `synthetic_bytes`. split_offset = 0 picks 90%.
struct CorpusSpec {
  std::string path;
  std::size_t split_offset = 0;
  std::size_t synthetic_bytes = 0;
  std::uint64_t synthetic_seed = 0;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  CorpusSpec corpus;
};

// Document layout:
//   {"model": {hidden, intermediate, heads, layers, vocab, context},
//    "train": {lr, steps, warmup_fraction, batch, seq_len, clip, seed,
//              optimizer, lr_floor_ratio, eval_tokens},
//    "scheduler": {eta, assign: {kind, s1, s2, beta}, metric, fit, interval,
//                  scheduled_kinds, invert_metric, per_layer_range,
//                  fix_finger_bins, gof_max_candidates},
//    "corpus": {path | synthetic_bytes, synthetic_seed, split_offset}}
// Missing fields take defaults; unknown fields are rejected. Throws
// Error(kConfig).
ExperimentConfig parse_experiment_config(const nlohmann::json& doc,
                                         const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

Corpus load_corpus(const CorpusSpec& spec);

}  // namespace htsr

#endif  // HTSR_CONFIG_HPP_
