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

#include "htsr/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "htsr/error.hpp"

namespace htsr {

namespace {

using Mat = RowMajorMatrix;

// Slots within one transformer layer, in parameter order.
enum Slot : std::size_t {
  kAttnNorm = 0,
  kQ,
  kK,
  kV,
  kO,
  kMlpNorm,
  kGate,
  kUp,
  kDown,
  kSlotsPerLayer,
};

constexpr std::size_t kTokenEmbedding = 0;
constexpr std::size_t kPositionEmbedding = 1;
constexpr std::size_t kFirstLayer = 2;

std::size_t layer_param(std::size_t layer, Slot slot) {
  return kFirstLayer + layer * kSlotsPerLayer + slot;
}
std::size_t final_norm_index(const ModelConfig& c) {
  return kFirstLayer + c.layers * kSlotsPerLayer;
}
std::size_t head_index(const ModelConfig& c) { return final_norm_index(c) + 1; }

struct NormCache {
  Mat xhat;
  Eigen::VectorXd inv_rms;
};

Mat rms_norm(const Mat& x, const Mat& gain, NormCache& cache) {
  const double h = static_cast<double>(x.cols());
  cache.inv_rms =
      ((x.array().square().rowwise().sum() / h) + kRmsNormEps).rsqrt();
  cache.xhat = x.array().colwise() * cache.inv_rms.array();
  return cache.xhat.array().rowwise() * gain.row(0).array();
}

// Returns dL/dx and accumulates dL/dgain.
Mat rms_norm_backward(const Mat& dy, const Mat& gain, const NormCache& cache,
                      Mat& dgain) {
  const double h = static_cast<double>(dy.cols());
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  const Eigen::VectorXd proj =
      (dxhat.array() * cache.xhat.array()).rowwise().sum() / h;
  return (dxhat.array() - cache.xhat.array().colwise() * proj.array())
             .colwise() *
         cache.inv_rms.array();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LayerCache {
  NormCache attn_norm;
  Mat a;  // normalized attention input
  Mat q, k, v;
  std::vector<Mat> probs;  // per (sequence, head), T x T causal softmax
  Mat attn_out;            // concatenated heads, before att.o
  Mat mid;                 // residual after attention
  NormCache mlp_norm;
  Mat b;  // normalized MLP input
  Mat gate_pre, up, gate_act, hidden_act;
};

class Transformer {
 public:
  Transformer(const Parameters& params, const Batch& batch)
      : p_(params),
        c_(params.config),
        seqs_(batch.sequences),
        len_(batch.length),
        rows_(batch.sequences * batch.length),
        batch_(batch) {
    if (batch.sequences == 0 || batch.length == 0) {
      throw Error(ErrorCode::kInvalidArgument, "empty batch");
    }
    if (batch.length > c_.context) {
      throw Error(ErrorCode::kInvalidArgument,
                  "sequence length exceeds model context");
    }
    if (batch.tokens.size() != batch.sequences * (batch.length + 1)) {
      throw Error(ErrorCode::kInvalidArgument, "batch token count mismatch");
    }
    for (auto tok : batch.tokens) {
      if (tok >= c_.vocab) {
        throw Error(ErrorCode::kInvalidArgument, "token id outside vocabulary");
      }
    }
  }

  LossSum forward(bool keep_cache) {
    keep_ = keep_cache;
    const std::size_t h = c_.hidden;
    Mat x(rows_, h);
    const Mat& emb = w(kTokenEmbedding);
    const Mat& pos = w(kPositionEmbedding);
    for (std::size_t s = 0; s < seqs_; ++s) {
      for (std::size_t t = 0; t < len_; ++t) {
        x.row(s * len_ + t) = emb.row(batch_.at(s, t)) + pos.row(t);
      }
    }
    if (keep_) layers_.resize(c_.layers);
    for (std::size_t l = 0; l < c_.layers; ++l) {
      LayerCache scratch;
      LayerCache& lc = keep_ ? layers_[l] : scratch;
      x = layer_forward(l, std::move(x), lc);
    }

    final_in_ = std::move(x);
    final_out_ = rms_norm(final_in_, w(final_norm_index(c_)), final_norm_);
    Mat logits;
    logits.noalias() = final_out_ * w(head_index(c_));

    LossSum out;
    out.tokens = rows_;
    if (keep_) dlogits_.resize(rows_, c_.vocab);
    for (std::size_t s = 0; s < seqs_; ++s) {
      for (std::size_t t = 0; t < len_; ++t) {
        const std::size_t r = s * len_ + t;
        const auto row = logits.row(r);
        const double m = row.maxCoeff();
        const double z = (row.array() - m).exp().sum();
        const std::size_t target = batch_.at(s, t + 1);
        out.total += (m + std::log(z)) - row(target);
        if (keep_) {
          dlogits_.row(r) = (row.array() - m).exp() / z;
          dlogits_(r, target) -= 1.0;
        }
      }
    }
    return out;
  }

  Gradients backward() {
    Gradients g(p_.size());
    for (std::size_t i = 0; i < p_.size(); ++i) {
      g[i] = Mat::Zero(p_.values[i].rows(), p_.values[i].cols());
    }
    dlogits_ /= static_cast<double>(rows_);
    const Mat& head = w(head_index(c_));
    g[head_index(c_)].noalias() = final_out_.transpose() * dlogits_;
    Mat dfinal;
    dfinal.noalias() = dlogits_ * head.transpose();
    Mat dx = rms_norm_backward(dfinal, w(final_norm_index(c_)), final_norm_,
                               g[final_norm_index(c_)]);

    for (std::size_t l = c_.layers; l-- > 0;) {
      dx = layer_backward(l, std::move(dx), g);
    }

    for (std::size_t s = 0; s < seqs_; ++s) {
      for (std::size_t t = 0; t < len_; ++t) {
        const std::size_t r = s * len_ + t;
        g[kTokenEmbedding].row(batch_.at(s, t)) += dx.row(r);
        g[kPositionEmbedding].row(t) += dx.row(r);
      }
    }
    return g;
  }

 private:
  const Mat& w(std::size_t i) const { return p_.values[i]; }

  Mat layer_forward(std::size_t l, Mat x, LayerCache& lc) {
    const std::size_t d = c_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    lc.a = rms_norm(x, w(layer_param(l, kAttnNorm)), lc.attn_norm);
    lc.q.noalias() = lc.a * w(layer_param(l, kQ));
    lc.k.noalias() = lc.a * w(layer_param(l, kK));
    lc.v.noalias() = lc.a * w(layer_param(l, kV));
    lc.attn_out.resize(rows_, c_.hidden);
    lc.probs.assign(keep_ ? seqs_ * c_.heads : 0, Mat());

    Mat scores(len_, len_);
    for (std::size_t s = 0; s < seqs_; ++s) {
      for (std::size_t hd = 0; hd < c_.heads; ++hd) {
        const auto qb = lc.q.block(s * len_, hd * d, len_, d);
        const auto kb = lc.k.block(s * len_, hd * d, len_, d);
        const auto vb = lc.v.block(s * len_, hd * d, len_, d);
        scores.noalias() = qb * kb.transpose();
        for (std::size_t i = 0; i < len_; ++i) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j <= i; ++j) {
            scores(i, j) *= scale;
            m = std::max(m, scores(i, j));
          }
          double z = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            scores(i, j) = std::exp(scores(i, j) - m);
            z += scores(i, j);
          }
          for (std::size_t j = 0; j <= i; ++j) scores(i, j) /= z;
          for (std::size_t j = i + 1; j < len_; ++j) scores(i, j) = 0.0;
        }
        lc.attn_out.block(s * len_, hd * d, len_, d).noalias() = scores * vb;
        if (keep_) lc.probs[s * c_.heads + hd] = scores;
      }
    }

    Mat attn_proj;
    attn_proj.noalias() = lc.attn_out * w(layer_param(l, kO));
    lc.mid = x + attn_proj;

    lc.b = rms_norm(lc.mid, w(layer_param(l, kMlpNorm)), lc.mlp_norm);
    lc.gate_pre.noalias() = lc.b * w(layer_param(l, kGate));
    lc.up.noalias() = lc.b * w(layer_param(l, kUp));
    lc.gate_act = lc.gate_pre.unaryExpr([](double g) { return g * sigmoid(g); });
    lc.hidden_act = lc.gate_act.cwiseProduct(lc.up);
    Mat out = lc.mid;
    out.noalias() += lc.hidden_act * w(layer_param(l, kDown));
    return out;
  }

  Mat layer_backward(std::size_t l, Mat dout, Gradients& g) {
    LayerCache& lc = layers_[l];
    const std::size_t d = c_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    // MLP branch.
    g[layer_param(l, kDown)].noalias() = lc.hidden_act.transpose() * dout;
    Mat dh;
    dh.noalias() = dout * w(layer_param(l, kDown)).transpose();
    const Mat dup = dh.cwiseProduct(lc.gate_act);
    const Mat dgate_act = dh.cwiseProduct(lc.up);
    const Mat dgate = dgate_act.binaryExpr(lc.gate_pre, [](double dy, double x) {
      const double s = sigmoid(x);
      return dy * s * (1.0 + x * (1.0 - s));
    });
    g[layer_param(l, kGate)].noalias() = lc.b.transpose() * dgate;
    g[layer_param(l, kUp)].noalias() = lc.b.transpose() * dup;
    Mat db;
    db.noalias() = dgate * w(layer_param(l, kGate)).transpose();
    db.noalias() += dup * w(layer_param(l, kUp)).transpose();
    Mat dmid = dout + rms_norm_backward(db, w(layer_param(l, kMlpNorm)),
                                        lc.mlp_norm, g[layer_param(l, kMlpNorm)]);

    // Attention branch.
    g[layer_param(l, kO)].noalias() = lc.attn_out.transpose() * dmid;
    Mat dattn;
    dattn.noalias() = dmid * w(layer_param(l, kO)).transpose();
    Mat dq(rows_, c_.hidden), dk(rows_, c_.hidden), dv(rows_, c_.hidden);
    Mat dprob(len_, len_);
    for (std::size_t s = 0; s < seqs_; ++s) {
      for (std::size_t hd = 0; hd < c_.heads; ++hd) {
        const Mat& prob = lc.probs[s * c_.heads + hd];
        const auto qb = lc.q.block(s * len_, hd * d, len_, d);
        const auto kb = lc.k.block(s * len_, hd * d, len_, d);
        const auto vb = lc.v.block(s * len_, hd * d, len_, d);
        const auto dob = dattn.block(s * len_, hd * d, len_, d);
        dprob.noalias() = dob * vb.transpose();
        dv.block(s * len_, hd * d, len_, d).noalias() = prob.transpose() * dob;
        const Eigen::VectorXd row_dot =
            (dprob.array() * prob.array()).rowwise().sum();
        const Mat dscore =
            (prob.array() * (dprob.array().colwise() - row_dot.array())) * scale;
        dq.block(s * len_, hd * d, len_, d).noalias() = dscore * kb;
        dk.block(s * len_, hd * d, len_, d).noalias() =
            dscore.transpose() * qb;
      }
    }
    g[layer_param(l, kQ)].noalias() = lc.a.transpose() * dq;
    g[layer_param(l, kK)].noalias() = lc.a.transpose() * dk;
    g[layer_param(l, kV)].noalias() = lc.a.transpose() * dv;
    Mat da;
    da.noalias() = dq * w(layer_param(l, kQ)).transpose();
    da.noalias() += dk * w(layer_param(l, kK)).transpose();
    da.noalias() += dv * w(layer_param(l, kV)).transpose();
    return dmid + rms_norm_backward(da, w(layer_param(l, kAttnNorm)),
                                    lc.attn_norm, g[layer_param(l, kAttnNorm)]);
  }

  const Parameters& p_;
  const ModelConfig& c_;
  std::size_t seqs_;
  std::size_t len_;
  std::size_t rows_;
  const Batch& batch_;
  bool keep_ = false;

  std::vector<LayerCache> layers_;
  Mat final_in_;
  Mat final_out_;
  NormCache final_norm_;
  Mat dlogits_;
};

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kConfig, what);
  };
  if (hidden == 0 || intermediate == 0 || heads == 0 || layers == 0 ||
      vocab == 0 || context == 0) {
    fail("model dimensions must be positive");
  }
  if (hidden % heads != 0) fail("hidden must be divisible by heads");
  if (intermediate < hidden) fail("intermediate must be >= hidden");
  if (vocab > 256) fail("byte-level tokens need vocab <= 256");
}

std::size_t Parameters::index_of(const ModuleId& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) return i;
  }
  throw Error(ErrorCode::kInvalidArgument, "no parameter '" + id.raw_name + "'");
}

std::vector<std::size_t> Parameters::projection_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].is_projection()) out.push_back(i);
  }
  return out;
}

std::vector<WeightMatrix> Parameters::to_weight_matrices() const {
  std::vector<WeightMatrix> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.push_back(WeightMatrix::from_matrix(ids[i], values[i]));
  }
  return out;
}

Parameters build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Parameters p;
  p.config = config;
  const std::size_t h = config.hidden;
  const std::size_t f = config.intermediate;
  const double proj_std =
      kInitStd / std::sqrt(2.0 * static_cast<double>(config.layers));

  std::mt19937_64 rng(seed);
  auto normal = [&](std::size_t r, std::size_t c, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
  };
  auto add = [&](ModuleId id, Mat value) {
    p.ids.push_back(std::move(id));
    p.values.push_back(std::move(value));
  };
  auto other = [](std::string name) { return parse_module_name(name); };

  add(other("embed.tokens"), normal(config.vocab, h, kInitStd));
  add(other("embed.positions"), normal(config.context, h, kInitStd));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    add(other(prefix + "attn_norm"), Mat::Ones(1, h));
    add(projection_id(l, ModuleKind::kAttQ), normal(h, h, proj_std));
    add(projection_id(l, ModuleKind::kAttK), normal(h, h, proj_std));
    add(projection_id(l, ModuleKind::kAttV), normal(h, h, proj_std));
    add(projection_id(l, ModuleKind::kAttO), normal(h, h, proj_std));
    add(other(prefix + "mlp_norm"), Mat::Ones(1, h));
    add(projection_id(l, ModuleKind::kMlpGate), normal(h, f, proj_std));
    add(projection_id(l, ModuleKind::kMlpUp), normal(h, f, proj_std));
    add(projection_id(l, ModuleKind::kMlpDown), normal(f, h, proj_std));
  }
  add(other("final_norm"), Mat::Ones(1, h));
  add(other("lm_head"), normal(h, config.vocab, kInitStd));
  return p;
}

Parameters Parameters::from_checkpoint(const ModelConfig& config,
                                       const Checkpoint& ckpt) {
  Parameters p = build_model(config, 0);
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    const WeightMatrix* w = ckpt.find(p.ids[i].raw_name);
    if (w == nullptr) {
      throw FormatError(ErrorCode::kShapeMismatch,
                        "checkpoint lacks '" + p.ids[i].raw_name + "'");
    }
    if (w->rows != static_cast<std::size_t>(p.values[i].rows()) ||
        w->cols != static_cast<std::size_t>(p.values[i].cols())) {
      throw FormatError(ErrorCode::kShapeMismatch,
                        "'" + w->id.raw_name + "' has the wrong shape");
    }
    p.values[i] = w->to_matrix();
  }
  return p;
}

LossAndGrads forward_backward(const Parameters& params, const Batch& batch) {
  Transformer net(params, batch);
  const LossSum sum = net.forward(/*keep_cache=*/true);
  LossAndGrads out;
  out.loss = sum.total / static_cast<double>(sum.tokens);
  out.grads = net.backward();
  return out;
}

LossSum forward_loss_sum(const Parameters& params, const Batch& batch) {
  Transformer net(params, batch);
  return net.forward(/*keep_cache=*/false);
}

double forward_loss(const Parameters& params, const Batch& batch) {
  const LossSum sum = forward_loss_sum(params, batch);
  return sum.total / static_cast<double>(sum.tokens);
}

}  // namespace htsr
