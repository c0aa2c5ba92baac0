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

#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "htsr/error.hpp"
#include "htsr/optimizer.hpp"
#include "oracles.hpp"

using namespace htsr;

namespace {

RowMajorMatrix scalar(double v) {
  RowMajorMatrix m(1, 1);
  m(0, 0) = v;
  return m;
}

DecayPlan plan_with(const std::vector<ModuleId>& ids, std::vector<double> decays,
                    double eta) {
  DecayPlan p;
  p.eta = eta;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].is_projection()) p.assignments[ids[i]] = decays[i];
  }
  return p;
}

}  // namespace

TEST_CASE("learning-rate schedule endpoints") {
  const double peak = 3e-3;
  CHECK(lr_at(0, 2000, 0.1, peak) == 0.0);
  CHECK(lr_at(100, 2000, 0.1, peak) == doctest::Approx(peak / 2).epsilon(1e-15));
  CHECK(lr_at(200, 2000, 0.1, peak) == doctest::Approx(peak).epsilon(1e-15));
  CHECK(lr_at(2000, 2000, 0.1, peak) == doctest::Approx(0.1 * peak).epsilon(1e-14));
  CHECK(lr_at(1100, 2000, 0.1, peak) == doctest::Approx(0.55 * peak).epsilon(1e-14));
  // ceil(0.1 * 15) = 2 warmup steps.
  CHECK(lr_at(2, 15, 0.1, peak) == doctest::Approx(peak).epsilon(1e-15));
  CHECK(lr_at(0, 10, 0.0, peak) == doctest::Approx(peak).epsilon(1e-15));
  double prev = peak;
  for (std::size_t t = 200; t <= 2000; ++t) {
    const double lr = lr_at(t, 2000, 0.1, peak);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("clipping halves gradients with global norm 2") {
  std::vector<RowMajorMatrix> g = {scalar(1.2), scalar(-1.6)};
  CHECK(global_grad_norm(g) == doctest::Approx(2.0).epsilon(1e-15));
  const StepStats s = clip_gradients(g, 1.0);
  CHECK(s.grad_norm == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(s.clip_scale == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g[0](0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(g[1](0, 0) == doctest::Approx(-0.8).epsilon(1e-15));
  std::vector<RowMajorMatrix> small = {scalar(0.3)};
  CHECK(clip_gradients(small, 1.0).clip_scale == 1.0);
  CHECK(small[0](0, 0) == 0.3);
}

TEST_CASE("decoupled decay closed form") {
  std::vector<RowMajorMatrix> w = {scalar(1.0)};
  std::vector<RowMajorMatrix> g = {scalar(0.0)};
  const std::vector<ModuleId> ids = {projection_id(0, ModuleKind::kAttQ)};
  OptimizerState state = OptimizerState::zeros_like(w);
  optimizer_step(w, ids, g, state, 0.01, plan_with(ids, {0.1}, 0.0),
                 OptimizerMode::kAdamW, 1.0);
  CHECK(w[0](0, 0) == doctest::Approx(0.999).epsilon(1e-15));
  CHECK(state.step == 1);
}

TEST_CASE("with zero decay both modes follow the same trajectory") {
  std::vector<RowMajorMatrix> a = {oracle::random_matrix(3, 4, 1), oracle::random_matrix(2, 2, 2)};
  std::vector<RowMajorMatrix> b = a;
  const std::vector<ModuleId> ids = {projection_id(0, ModuleKind::kAttQ),
                                     parse_module_name("lm_head")};
  const DecayPlan zero = plan_with(ids, {0.0, 0.0}, 0.0);
  OptimizerState sa = OptimizerState::zeros_like(a), sb = OptimizerState::zeros_like(b);
  for (int step = 0; step < 20; ++step) {
    std::vector<RowMajorMatrix> ga = {oracle::random_matrix(3, 4, 100 + step),
                                      oracle::random_matrix(2, 2, 200 + step)};
    std::vector<RowMajorMatrix> gb = ga;
    optimizer_step(a, ids, ga, sa, 1e-2, zero, OptimizerMode::kAdam, 1.0);
    optimizer_step(b, ids, gb, sb, 1e-2, zero, OptimizerMode::kAdamW, 1.0);
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
  }
}

TEST_CASE("decay locality: each matrix contracts by its own factor") {
  std::vector<RowMajorMatrix> w = {oracle::random_matrix(3, 3, 1), oracle::random_matrix(3, 3, 2),
                                   oracle::random_matrix(2, 5, 3)};
  const std::vector<ModuleId> ids = {projection_id(0, ModuleKind::kAttQ),
                                     projection_id(1, ModuleKind::kMlpUp),
                                     parse_module_name("embed.tokens")};
  const double eta = 0.05;
  const DecayPlan plan = plan_with(ids, {0.2, 0.7, 0.0}, eta);
  OptimizerState state = OptimizerState::zeros_like(w);
  for (std::size_t t = 0; t < 10; ++t) {
    const double lr = 0.01 * (1 + t);
    std::vector<RowMajorMatrix> before = w;
    std::vector<RowMajorMatrix> g;
    for (const auto& m : w) g.push_back(RowMajorMatrix::Zero(m.rows(), m.cols()));
    optimizer_step(w, ids, g, state, lr, plan, OptimizerMode::kAdamW, 1.0);
    const double lambdas[] = {0.2, 0.7, eta};
    for (std::size_t i = 0; i < w.size(); ++i) {
      const RowMajorMatrix expect = before[i] * (1.0 - lr * lambdas[i]);
      CHECK((w[i] - expect).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
}

TEST_CASE("coupled decay enters the gradient") {
  // One Adam step from zero moments moves each entry by -lr * sign(g + lambda w)
  // up to the epsilon term.
  std::vector<RowMajorMatrix> w = {scalar(2.0)};
  std::vector<RowMajorMatrix> g = {scalar(-0.1)};
  const std::vector<ModuleId> ids = {projection_id(0, ModuleKind::kAttK)};
  OptimizerState state = OptimizerState::zeros_like(w);
  optimizer_step(w, ids, g, state, 0.01, plan_with(ids, {0.5}, 0.0),
                 OptimizerMode::kAdam, 0.0);
  CHECK(w[0](0, 0) == doctest::Approx(1.99).epsilon(1e-9));
}

TEST_CASE("clipping makes the update invariant to gradient scale") {
  std::vector<RowMajorMatrix> a = {oracle::random_matrix(4, 4, 9)};
  std::vector<RowMajorMatrix> b = a;
  const std::vector<ModuleId> ids = {projection_id(0, ModuleKind::kAttO)};
  const DecayPlan plan = plan_with(ids, {0.0}, 0.0);
  OptimizerState sa = OptimizerState::zeros_like(a), sb = OptimizerState::zeros_like(b);
  RowMajorMatrix g = oracle::random_matrix(4, 4, 10);
  g *= 3.0 / g.norm();
  std::vector<RowMajorMatrix> ga = {g}, gb = {RowMajorMatrix(g * 1000.0)};
  const StepStats s = optimizer_step(b, ids, gb, sb, 1e-3, plan, OptimizerMode::kAdam, 1.0);
  optimizer_step(a, ids, ga, sa, 1e-3, plan, OptimizerMode::kAdam, 1.0);
  CHECK(s.grad_norm == doctest::Approx(3000.0).epsilon(1e-12));
  CHECK((a[0] - b[0]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("moments stay finite and shaped; bad inputs are rejected") {
  std::vector<RowMajorMatrix> w = {oracle::random_matrix(3, 2, 1)};
  const std::vector<ModuleId> ids = {projection_id(0, ModuleKind::kAttQ)};
  OptimizerState state = OptimizerState::zeros_like(w);
  std::vector<RowMajorMatrix> g = {oracle::random_matrix(3, 2, 2)};
  optimizer_step(w, ids, g, state, 1e-3, plan_with(ids, {0.1}, 0.1), OptimizerMode::kAdamW, 1.0);
  CHECK(state.m[0].rows() == 3);
  CHECK(state.v[0].cols() == 2);
  CHECK(state.m[0].allFinite());
  CHECK(state.v[0].allFinite());

  std::vector<RowMajorMatrix> bad = {oracle::random_matrix(2, 2, 3)};
  CHECK_THROWS_AS(optimizer_step(w, ids, bad, state, 1e-3, {}, OptimizerMode::kAdam, 1.0), Error);

  std::vector<RowMajorMatrix> nan = {RowMajorMatrix::Constant(3, 2, std::nan(""))};
  CHECK_THROWS_AS(optimizer_step(w, ids, nan, state, 1e-3, {}, OptimizerMode::kAdam, 0.0),
                  DivergenceError);
}

TEST_CASE("optimizer names") {
  CHECK(parse_optimizer("adamw") == OptimizerMode::kAdamW);
  CHECK(parse_optimizer(optimizer_name(OptimizerMode::kAdam)) == OptimizerMode::kAdam);
  CHECK_FALSE(parse_optimizer("sgd").has_value());
}
