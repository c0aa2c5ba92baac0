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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "htsr/cli.hpp"
#include "htsr/error.hpp"
#include "htsr/model.hpp"
#include "htsr/run_artifacts.hpp"
#include "htsr/schedule.hpp"
#include "htsr/spectral.hpp"
#include "htsr/tensor_io.hpp"
#include "htsr/train.hpp"
#include "oracles.hpp"

using namespace htsr;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome hill_consistency() {
  const auto start = Clock::now();
  double worst = 0.0;
  for (double alpha : {1.5, 2.5, 3.5}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto xs = oracle::pareto_samples(10000, alpha, 1.0, 7000 + seed);
      const HillFit fit = fit_power_law(make_esd(xs), FitMethod::kMedian);
      worst = std::max(worst, std::abs(fit.alpha - alpha));
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 0.1 && secs < 5.0,
          fmt("max |alpha - truth| = %.4f over 60 fits, %.2f s", worst, secs)};
}

Outcome scale_invariance() {
  std::mt19937_64 rng(2);
  std::lognormal_distribution<double> dist(0.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> ev(20 + trial * 3);
    for (auto& x : ev) x = dist(rng);
    const Esd esd = make_esd(ev);
    const std::size_t k = select_k(esd, FitMethod::kMedian);
    const double base = hill_alpha(esd, k).alpha;
    for (double c : {1e-6, 1.0, 1e6}) {
      std::vector<double> scaled = esd.eigenvalues;
      for (auto& x : scaled) x *= c;
      const double a = hill_alpha(make_esd(scaled), k).alpha;
      worst = std::max(worst, std::abs(a - base) / base);
    }
  }
  return {worst <= 1e-12, fmt("max relative deviation %.3g over 300 rescalings", worst)};
}

Outcome linear_exactness() {
  const ModuleId a = projection_id(0, ModuleKind::kAttQ);
  const ModuleId b = projection_id(0, ModuleKind::kAttK);
  const ModuleId c = projection_id(0, ModuleKind::kAttV);
  const double eta = 5e-6, s1 = 0.67, s2 = 5.0;
  const DecayPlan plan = assign_linear({{a, 2.0}, {b, 3.0}, {c, 4.0}}, eta, s1, s2);
  const double lo = plan.assignments.at(a), mid = plan.assignments.at(b),
               hi = plan.assignments.at(c);
  // The endpoint equals the product s1 * eta exactly; the decimal literal
  // 3.35e-6 is one ulp away from that product.
  bool ok = lo == s1 * eta && hi == s2 * eta && hi == 2.5e-5 &&
            std::abs(lo - 3.35e-6) <= 1e-15 * 3.35e-6 &&
            std::abs(mid - eta * (s1 + s2) / 2) <= 1e-15 * mid;

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> metric(0.5, 12.0), scale(0.1, 4.0);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    MetricMap m;
    const std::size_t layers = 1 + rng() % 6;
    for (std::size_t l = 0; l < layers; ++l) {
      for (auto k : kProjectionKinds) m[projection_id(l, k)] = metric(rng);
    }
    const double r1 = scale(rng), r2 = r1 + scale(rng), e = 1e-4 * scale(rng);
    for (const auto& [id, d] : assign_linear(m, e, r1, r2).assignments) {
      if (d < r1 * e || d > r2 * e) ++violations;
    }
  }
  ok = ok && violations == 0;
  return {ok, fmt("endpoints %.17g / %.17g, midpoint %.17g, %zu bound violations in 1000 maps",
                  lo, hi, mid, violations)};
}

Outcome cadence() {
  SchedulerConfig cfg;
  cfg.eta = 5e-6;
  cfg.interval = 500;
  std::vector<ModuleId> ids;
  for (std::size_t l = 0; l < 2; ++l) {
    for (auto k : kProjectionKinds) ids.push_back(projection_id(l, k));
  }
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> alpha(2.0, 6.0);
  DecayPlan plan = uniform_plan(ids, cfg.eta);
  std::vector<std::size_t> steps;
  bool idle_ok = true;
  for (std::size_t t = 0; t <= 2000; ++t) {
    std::map<ModuleId, SpectralReport> reports;
    if (t % 500 == 0) {
      for (const auto& id : ids) {
        SpectralReport r;
        r.module = id;
        r.alpha.alpha = alpha(rng);
        reports[id] = r;
      }
    }
    const DecayPlan next = scheduler_step(t, cfg, ids, reports, plan);
    if (t % 500 == 0) {
      steps.push_back(next.step);
    } else {
      idle_ok = idle_ok && next == plan;
    }
    plan = next;
  }

  // Same count from the training loop on a small model.
  ModelConfig model;
  model.hidden = 16;
  model.intermediate = 32;
  model.heads = 2;
  model.context = 16;
  TrainConfig train;
  train.steps = 2000;
  train.batch = 1;
  train.seq_len = 8;
  train.eval_tokens = 64;
  train.scheduler.eta = 5e-6;
  train.scheduler.interval = 500;
  const Corpus corpus = split_corpus(synthetic_corpus(20000, 3), 18000);
  const RunLog log = train_run(model, train, corpus).log;
  std::vector<std::size_t> loop_steps;
  for (const auto& r : log.recomputes) loop_steps.push_back(r.step);

  const std::vector<std::size_t> want = {0, 500, 1000, 1500, 2000};
  return {steps == want && loop_steps == want && idle_ok && log.steps.size() == 2000,
          fmt("scheduler recomputes %zu, training loop recomputes %zu, idle steps %s",
              steps.size(), loop_steps.size(), idle_ok ? "unchanged" : "CHANGED")};
}

Outcome gradient_check() {
  const auto start = Clock::now();
  ModelConfig cfg;
  cfg.hidden = 16;
  cfg.intermediate = 24;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.context = 8;
  Parameters p = build_model(cfg, 21);
  std::mt19937_64 rng(22);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& v : p.values) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] += jitter(rng);
  }
  Batch batch{2, 8, std::vector<std::uint8_t>(2 * 9)};
  for (auto& t : batch.tokens) t = static_cast<std::uint8_t>(rng() % 256);
  const LossAndGrads g = forward_backward(p, batch);

  std::size_t sampled = 0;
  double worst = 0.0;
  std::set<ModuleKind> kinds;
  for (std::size_t i : p.projection_indices()) {
    for (int rep = 0; rep < 2; ++rep) {
      const auto idx = static_cast<Eigen::Index>(rng() % p.values[i].size());
      const double orig = p.values[i].data()[idx];
      p.values[i].data()[idx] = orig + 1e-3;
      const double up = forward_loss(p, batch);
      p.values[i].data()[idx] = orig - 1e-3;
      const double down = forward_loss(p, batch);
      p.values[i].data()[idx] = orig;
      const double fd = (up - down) / 2e-3;
      const double an = g.grads[i].data()[idx];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
      kinds.insert(p.ids[i].kind);
      ++sampled;
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-4 && sampled >= 20 && kinds.size() == 7 && secs < 60.0,
          fmt("%zu parameters over %zu kinds, max relative error %.3g, %.2f s", sampled,
              kinds.size(), worst, secs)};
}

Outcome uniform_collapse() {
  ModelConfig model;
  model.hidden = 32;
  model.intermediate = 64;
  model.heads = 2;
  model.context = 32;
  TrainConfig u;
  u.steps = 200;
  u.lr = 3e-3;
  u.batch = 4;
  u.seq_len = 32;
  u.seed = 6;
  u.eval_tokens = 4096;
  u.scheduler.eta = 1e-2;
  u.scheduler.interval = 50;
  u.scheduler.assign = assign::Uniform{};
  TrainConfig l = u;
  l.scheduler.assign = assign::Linear{1.0, 1.0};
  const Corpus corpus = split_corpus(synthetic_corpus(100000, 6), 90000);
  const TrainResult a = train_run(model, u, corpus);
  const TrainResult b = train_run(model, l, corpus);
  bool same = a.log.steps.size() == b.log.steps.size() &&
              a.log.final_val_loss == b.log.final_val_loss;
  for (std::size_t i = 0; same && i < a.log.steps.size(); ++i) {
    same = a.log.steps[i].loss == b.log.steps[i].loss &&
           a.log.steps[i].grad_norm == b.log.steps[i].grad_norm;
  }
  for (std::size_t i = 0; same && i < a.params.size(); ++i) {
    same = a.params.values[i] == b.params.values[i];
  }
  return {same, fmt("200 steps, final validation loss %.17g vs %.17g",
                    a.log.final_val_loss, b.log.final_val_loss)};
}

Outcome directional_balance() {
  const auto start = Clock::now();
  const ModelConfig model;  // 2 layers, hidden 64
  const Corpus corpus = split_corpus(synthetic_corpus(1 << 20, 2024), 0.9 * (1 << 20));
  const unsigned threads = cli::analysis_threads_from_env();

  int spread_wins = 0;
  int loss_wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : {5, 6, 7}) {
    TrainConfig cfg;
    cfg.steps = 2000;
    cfg.lr = 3e-3;
    cfg.batch = 8;
    cfg.seq_len = 64;
    cfg.seed = seed;
    cfg.optimizer = OptimizerMode::kAdam;
    cfg.eval_tokens = 65536;
    cfg.analysis_threads = threads;
    cfg.scheduler.eta = 1e-4;
    cfg.scheduler.interval = 100;
    cfg.scheduler.assign = assign::Linear{0.67, 5.0};
    TrainConfig uni = cfg;
    uni.scheduler.assign = assign::Uniform{};

    const RunLog ad = train_run(model, cfg, corpus).log;
    const RunLog un = train_run(model, uni, corpus).log;
    const std::size_t last = ad.recomputes.back().step;
    const double sa = alpha_group_spread(alpha_group_table(report_rows(ad.recomputes)), last);
    const double su = alpha_group_spread(alpha_group_table(report_rows(un.recomputes)), last);
    spread_wins += sa < su ? 1 : 0;
    loss_wins += ad.final_val_loss <= un.final_val_loss + 0.02 ? 1 : 0;
    detail << fmt("seed %d: spread %.4f vs %.4f, val loss %.4f vs %.4f; ",
                  static_cast<int>(seed), sa, su, ad.final_val_loss, un.final_val_loss);
  }
  const double secs = seconds_since(start);
  detail << fmt("spread wins %d/3, loss wins %d/3, %.0f s", spread_wins, loss_wins, secs);
  return {spread_wins >= 2 && loss_wins >= 2, detail.str()};
}

Outcome fit_agreement() {
  double worst_gap = 0.0;
  double t_median = 1e300, t_ff = 1e300, t_gof = 1e300;
  for (double alpha : {1.5, 2.5, 3.5}) {
    const Esd esd = make_esd(oracle::pareto_quantiles(10000, alpha, 1.0));
    double fits[3];
    const FitMethod methods[3] = {FitMethod::kMedian, FitMethod::kFixFinger,
                                  FitMethod::kGoodnessOfFit};
    double* times[3] = {&t_median, &t_ff, &t_gof};
    for (int m = 0; m < 3; ++m) {
      // Best of several repetitions, so scheduling noise does not decide.
      for (int rep = 0; rep < 15; ++rep) {
        const auto start = Clock::now();
        fits[m] = fit_power_law(esd, methods[m]).alpha;
        *times[m] = std::min(*times[m], seconds_since(start));
      }
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) worst_gap = std::max(worst_gap, std::abs(fits[i] - fits[j]));
    }
  }
  const bool fastest = t_median < t_ff && t_median < t_gof;
  return {worst_gap <= 0.2 && fastest,
          fmt("max pairwise gap %.3e; best times median %.2e s, fixfinger %.2e s, gof %.2e s",
              worst_gap, t_median, t_ff, t_gof)};
}

Outcome roundtrip_determinism() {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> dist(0.0f, 3.0f);
  std::size_t mismatches = 0;
  for (int set = 0; set < 100; ++set) {
    std::vector<WeightMatrix> in;
    const std::size_t count = 1 + rng() % 6;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t r = 1 + rng() % 33, c = 1 + rng() % 33;
      std::vector<float> v(r * c);
      for (auto& x : v) x = dist(rng);
      in.push_back({projection_id(i / 7, kProjectionKinds[i % 7]), r, c, std::move(v)});
    }
    Metadata meta = {{"set", std::to_string(set)}};
    const Checkpoint out = decode_checkpoint(encode_checkpoint(in, meta));
    if (out.entries != in || out.metadata != meta) ++mismatches;
  }

  const auto dir = oracle::scratch_dir("acceptance_cli");
  const nlohmann::json cfg = {
      {"model", {{"hidden", 32}, {"intermediate", 64}, {"heads", 2}, {"context", 32}}},
      {"train", {{"steps", 60}, {"batch", 4}, {"seq_len", 32}, {"seed", 11},
                 {"lr", 3e-3}, {"eval_tokens", 4096}}},
      {"scheduler", {{"eta", 1e-3}, {"interval", 20}}},
      {"corpus", {{"synthetic_bytes", 100000}, {"synthetic_seed", 1}}},
  };
  std::ofstream(dir / "config.json") << cfg.dump(2);
  std::ostringstream err;
  const int a = cli::cmd_train(dir / "config.json", dir / "a", err);
  const int b = cli::cmd_train(dir / "config.json", dir / "b", err);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string sa = slurp(dir / "a" / "summary.json");
  const bool same = a == 0 && b == 0 && !sa.empty() && sa == slurp(dir / "b" / "summary.json");
  return {mismatches == 0 && same,
          fmt("%zu/100 checkpoint mismatches; summaries %s", mismatches,
              same ? "byte-identical" : "DIFFER")};
}

Outcome assignment_algebra() {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> metric(1.0001, 40.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    MetricMap m;
    const std::size_t n = 1 + rng() % 40;
    for (std::size_t i = 0; i < n; ++i) {
      m[projection_id(i / 7, kProjectionKinds[i % 7])] = metric(rng);
    }
    const double eta = 1e-5 * (1 + trial % 13);
    for (const DecayPlan& plan : {assign_sqrt(m, eta), assign_log2(m, eta)}) {
      double sum = 0.0;
      for (const auto& [id, d] : plan.assignments) sum += d;
      worst = std::max(worst, std::abs(sum / static_cast<double>(n) - eta) / eta);
    }
  }

  const ModuleId x = projection_id(0, ModuleKind::kAttQ);
  const ModuleId y = projection_id(0, ModuleKind::kAttK);
  const ModuleId z = projection_id(0, ModuleKind::kAttV);
  const double eta = 1e-4;
  const DecayPlan centered = assign_sigmoid_like({{x, 1.0}, {y, 3.0}, {z, 2.0}}, eta, 4.0);
  bool sigmoid_ok = centered.assignments.at(z) == eta;
  std::uniform_real_distribution<double> g(0.0, 1e3);
  for (int trial = 0; trial < 1000 && sigmoid_ok; ++trial) {
    MetricMap m;
    const std::size_t layers = 1 + rng() % 3;
    for (std::size_t l = 0; l < layers; ++l) {
      for (auto k : kProjectionKinds) m[projection_id(l, k)] = g(rng);
    }
    for (const auto& [id, d] : assign_sigmoid_like(m, eta, 4.0).assignments) {
      sigmoid_ok = sigmoid_ok && d > 0.0 && d < 2 * eta;
    }
  }
  return {worst <= 1e-12 && sigmoid_ok,
          fmt("max relative mean error %.3g; sigmoid centre %s, range %s", worst,
              centered.assignments.at(z) == eta ? "exact" : "off",
              sigmoid_ok ? "inside (0, 2 eta)" : "VIOLATED")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"Hill estimator consistency", hill_consistency},
      {"Scale invariance", scale_invariance},
      {"Linear assignment exactness", linear_exactness},
      {"Recompute cadence", cadence},
      {"Gradient correctness", gradient_check},
      {"Uniform-collapse equivalence", uniform_collapse},
      {"Directional balance", directional_balance},
      {"Fit-method agreement", fit_agreement},
      {"Round-trip and determinism", roundtrip_determinism},
      {"Assignment-function algebra", assignment_algebra},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
