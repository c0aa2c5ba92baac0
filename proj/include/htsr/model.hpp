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

#ifndef HTSR_MODEL_HPP_
#define HTSR_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "htsr/tensor_io.hpp"

namespace htsr {

struct ModelConfig {
  std::size_t hidden = 64;
  std::size_t intermediate = 172;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t vocab = 256;
  std::size_t context = 64;

  std::size_t head_dim() const { return hidden / heads; }
  // Throws Error(kConfig) on invalid values.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Flat parameter list of a pre-norm decoder-only transformer. Order:
//   embed.tokens [vocab x hidden], embed.positions [context x hidden],
//   per layer: layers.i.attn_norm [1 x hidden], att.q, att.k, att.v, att.o
//   [hidden x hidden], layers.i.mlp_norm [1 x hidden], mlp.gate, mlp.up
//   [hidden x intermediate], mlp.down [intermediate x hidden],
//   final_norm [1 x hidden], lm_head [hidden x vocab].
// Projections act on row vectors: y = x W.
struct Parameters {
  ModelConfig config;
  std::vector<ModuleId> ids;
  std::vector<RowMajorMatrix> values;

  std::size_t size() const { return values.size(); }
  std::size_t index_of(const ModuleId& id) const;  // throws if absent

  // Indices of the seven projection kinds across all layers, layer-major.
  std::vector<std::size_t> projection_indices() const;

  std::vector<WeightMatrix> to_weight_matrices() const;
  // Inverse of to_weight_matrices; throws FormatError on missing/misshapen
  // entries.
  static Parameters from_checkpoint(const ModelConfig& config,
                                    const Checkpoint& ckpt);
};

using Gradients = std::vector<RowMajorMatrix>;

inline constexpr double kInitStd = 0.02;
inline constexpr double kRmsNormEps = 1e-5;

// Projections ~ N(0, (0.02 / sqrt(2 * layers))^2), embeddings and head
// ~ N(0, 0.02^2), norm gains 1.
Parameters build_model(const ModelConfig& config, std::uint64_t seed);

// `sequences` rows of `length + 1` token ids; position t predicts t + 1.
struct Batch {
  std::size_t sequences = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> tokens;

  std::uint8_t at(std::size_t s, std::size_t t) const {
    return tokens[s * (length + 1) + t];
  }
};

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

// Mean next-token cross-entropy and its gradient for every parameter.
LossAndGrads forward_backward(const Parameters& params, const Batch& batch);
double forward_loss(const Parameters& params, const Batch& batch);

// Sum of per-token cross-entropies (nats) and the token count.
struct LossSum {
  double total = 0.0;
  std::size_t tokens = 0;
};
LossSum forward_loss_sum(const Parameters& params, const Batch& batch);

}  // namespace htsr

#endif  // HTSR_MODEL_HPP_
