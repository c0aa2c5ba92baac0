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

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <doctest.h>
#include <json.hpp>

#include "htsr/cli.hpp"
#include "htsr/config.hpp"
#include "htsr/error.hpp"
#include "htsr/model.hpp"
#include "htsr/run_artifacts.hpp"
#include "htsr/spectral.hpp"
#include "htsr/tensor_io.hpp"
#include "oracles.hpp"

using namespace htsr;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

// Runs the built executable; returns its exit status.
int run_tool(const std::string& args, const fs::path& stderr_file = {}) {
  const char* tool = std::getenv("HTSR_CLI");
  REQUIRE(tool != nullptr);
  std::string cmd = std::string(tool) + " " + args;
  cmd += stderr_file.empty() ? " 2>/dev/null" : " 2>" + stderr_file.string();
  cmd += " >/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

json small_config(const std::string& assign_kind) {
  json assign = {{"kind", assign_kind}};
  if (assign_kind == "linear") {
    assign["s1"] = 0.67;
    assign["s2"] = 5.0;
  }
  return json{
      {"model", {{"hidden", 16}, {"intermediate", 32}, {"heads", 2}, {"layers", 2},
                 {"context", 16}}},
      {"train", {{"lr", 3e-3}, {"steps", 20}, {"batch", 2}, {"seq_len", 16},
                 {"seed", 4}, {"eval_tokens", 128}}},
      {"scheduler", {{"eta", 1e-3}, {"interval", 5},
                     {"assign", assign}}},
      {"corpus", {{"synthetic_bytes", 20000}, {"synthetic_seed", 2}}},
  };
}

fs::path write_config(const fs::path& dir, const json& cfg, const std::string& name) {
  const fs::path p = dir / name;
  std::ofstream(p) << cfg.dump(2);
  return p;
}

}  // namespace

TEST_CASE("analyze writes one row per projection, matching the library") {
  const fs::path dir = oracle::scratch_dir("cli_analyze");
  ModelConfig cfg;
  cfg.hidden = 32;
  cfg.intermediate = 48;
  const Parameters p = build_model(cfg, 1);
  write_checkpoint(p.to_weight_matrices(), {}, dir / "m.htsr");

  std::ostringstream err;
  REQUIRE(cli::cmd_analyze(dir / "m.htsr", FitMethod::kMedian, dir / "a.csv", err, 2) ==
          cli::kExitOk);
  const auto rows = lines(slurp(dir / "a.csv"));
  REQUIRE(rows.size() == 15);
  CHECK(rows[0] == "raw_name,layer,kind,n,m,alpha,k,xmin,spectral_norm,frobenius_norm");

  const Checkpoint ckpt = read_checkpoint(dir / "m.htsr");
  std::size_t row = 1;
  for (const auto& w : ckpt.entries) {
    if (!w.id.is_projection()) continue;
    const SpectralReport r = analyze_module(w, nullptr, FitMethod::kMedian);
    std::ostringstream want;
    want << w.id.raw_name << ',' << w.id.layer_index << ',' << kind_name(w.id.kind) << ','
         << w.rows << ',' << w.cols << ',' << format_double(r.alpha.alpha) << ','
         << r.alpha.k << ',' << format_double(r.alpha.xmin) << ','
         << format_double(r.spectral_norm) << ',' << format_double(r.frobenius_norm);
    CHECK(rows[row++] == want.str());
    // 17 significant digits survive the text round trip.
    CHECK(std::strtod(format_double(r.alpha.alpha).c_str(), nullptr) == r.alpha.alpha);
  }

  REQUIRE(cli::cmd_analyze(dir / "m.htsr", FitMethod::kMedian, dir / "b.csv", err, 1) ==
          cli::kExitOk);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(run_tool("analyze --ckpt " + (dir / "m.htsr").string() + " --out " +
                 (dir / "c.csv").string()) == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "c.csv"));
  CHECK(run_tool("analyze --fit gof --ckpt " + (dir / "m.htsr").string() + " --out " +
                 (dir / "d.csv").string()) == 0);
  CHECK(lines(slurp(dir / "d.csv")).size() == 15);
}

TEST_CASE("analyze exits 3 naming a degenerate module") {
  const fs::path dir = oracle::scratch_dir("cli_degenerate");
  std::vector<float> eye(64, 0.0f);
  for (int i = 0; i < 8; ++i) eye[i * 9] = 1.0f;
  const RowMajorMatrix r = oracle::random_matrix(8, 8, 3);
  WeightMatrix good = WeightMatrix::from_matrix(parse_module_name("layers.0.att.q"), r);
  WeightMatrix bad{parse_module_name("layers.0.att.k"), 8, 8, eye};
  write_checkpoint(std::vector<WeightMatrix>{good, bad}, {}, dir / "eye.htsr");
  CHECK(run_tool("analyze --ckpt " + (dir / "eye.htsr").string() + " --out " +
                     (dir / "x.csv").string(),
                 dir / "err.txt") == 3);
  const std::string err = slurp(dir / "err.txt");
  CHECK(err.find("layers.0.att.k") != std::string::npos);
  CHECK(err.find("degenerate tail") != std::string::npos);
}

TEST_CASE("usage and format errors exit 2") {
  const fs::path dir = oracle::scratch_dir("cli_usage");
  CHECK(run_tool("") == 2);
  CHECK(run_tool("analyze --bogus") == 2);
  CHECK(run_tool("analyze --ckpt /nonexistent.htsr --out x.csv") == 2);
  std::ofstream(dir / "junk.htsr") << "not a checkpoint";
  CHECK(run_tool("analyze --ckpt " + (dir / "junk.htsr").string() + " --out " +
                 (dir / "o.csv").string()) == 2);
  CHECK(run_tool("analyze --fit ols --ckpt " + (dir / "junk.htsr").string() +
                 " --out o.csv") == 2);

  json cfg = small_config("linear");
  cfg["train"]["momentum"] = 0.9;
  CHECK(run_tool("train --config " + write_config(dir, cfg, "bad.json").string() +
                 " --out " + (dir / "run").string()) == 2);
  CHECK(run_tool("report --run " + dir.string()) == 2);
}

TEST_CASE("train then report") {
  const fs::path dir = oracle::scratch_dir("cli_train");
  const fs::path cfg = write_config(dir, small_config("linear"), "linear.json");
  std::ostringstream err;
  REQUIRE(cli::cmd_train(cfg, dir / "a", err) == cli::kExitOk);
  for (const char* f : {"runlog.jsonl", "plans.csv", "reports.csv", "checkpoint.htsr",
                        "summary.json", "timing.json", "config.json"}) {
    CHECK(fs::exists(dir / "a" / f));
  }
  CHECK(lines(slurp(dir / "a" / "runlog.jsonl")).size() == 20);
  const json summary = json::parse(slurp(dir / "a" / "summary.json"));
  CHECK(summary.contains("final_val_loss"));
  CHECK(summary.contains("perplexity"));

  // Five recomputes (t = 0, 5, 10, 15, 20) of 14 modules each.
  const auto plan_rows = lines(slurp(dir / "a" / "plans.csv"));
  CHECK(plan_rows.size() == 1 + 5 * 14);
  std::ifstream pin(dir / "a" / "plans.csv");
  for (const auto& p : read_plans_csv(pin)) {
    CHECK(p.decay >= 0.67 * 1e-3);
    CHECK(p.decay <= 5.0 * 1e-3);
  }

  REQUIRE(cli::cmd_train(cfg, dir / "b", err) == cli::kExitOk);
  CHECK(slurp(dir / "a" / "summary.json") == slurp(dir / "b" / "summary.json"));
  CHECK(slurp(dir / "a" / "plans.csv") == slurp(dir / "b" / "plans.csv"));

  std::ostringstream out;
  REQUIRE(cli::cmd_report(dir / "a", cli::ReportFormat::kCsv, out, err) == cli::kExitOk);
  CHECK(lines(slurp(dir / "a" / "report_alpha.csv")).size() == 1 + 15);
  CHECK(lines(slurp(dir / "a" / "report_decay.csv")).size() == 1 + 5 * 14);
  REQUIRE(cli::cmd_report(dir / "a", cli::ReportFormat::kJson, out, err) == cli::kExitOk);
  const json report = json::parse(slurp(dir / "a" / "report.json"));
  CHECK(report["alpha"].size() == 15);
  CHECK(report["decay"].size() == 70);
  CHECK(run_tool("report --format json --run " + (dir / "a").string()) == 0);

  // The final checkpoint loads back into the model.
  const Checkpoint ckpt = read_checkpoint(dir / "a" / "checkpoint.htsr");
  const ExperimentConfig ec = load_experiment_config(cfg);
  CHECK_NOTHROW(Parameters::from_checkpoint(ec.model, ckpt));
}

TEST_CASE("uniform run has constant decay") {
  const fs::path dir = oracle::scratch_dir("cli_uniform");
  const fs::path cfg = write_config(dir, small_config("uniform"), "u.json");
  CHECK(run_tool("train --config " + cfg.string() + " --out " + (dir / "u").string()) == 0);
  std::ifstream pin(dir / "u" / "plans.csv");
  const auto plans = read_plans_csv(pin);
  CHECK(plans.size() == 70);
  for (const auto& p : plans) CHECK(p.decay == 1e-3);
}

TEST_CASE("divergence exits 4 and records the step") {
  const fs::path dir = oracle::scratch_dir("cli_diverge");
  json cfg = small_config("linear");
  cfg["train"]["lr"] = 1e300;
  cfg["train"]["warmup_fraction"] = 0.0;
  const fs::path path = write_config(dir, cfg, "d.json");
  CHECK(run_tool("train --config " + path.string() + " --out " + (dir / "d").string()) == 4);
  const json summary = json::parse(slurp(dir / "d" / "summary.json"));
  CHECK(summary.contains("aborted_at_step"));
}

TEST_CASE("config parsing") {
  const json cfg = small_config("sigmoid_like");
  const ExperimentConfig ec = parse_experiment_config(cfg, ".");
  CHECK(ec.model.hidden == 16);
  CHECK(ec.train.steps == 20);
  CHECK(std::holds_alternative<assign::SigmoidLike>(ec.train.scheduler.assign));
  const ExperimentConfig again = parse_experiment_config(to_json(ec), ".");
  CHECK(to_json(again) == to_json(ec));
  json bad = cfg;
  bad["scheduler"]["assign"]["kind"] = "cubic";
  CHECK_THROWS_AS(parse_experiment_config(bad, "."), Error);
  bad = cfg;
  bad["scheduler"]["metric"] = "entropy";
  CHECK_THROWS_AS(parse_experiment_config(bad, "."), Error);
  bad = cfg;
  bad["extra"] = 1;
  CHECK_THROWS_AS(parse_experiment_config(bad, "."), Error);
}
