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

#include "htsr/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "htsr/config.hpp"
#include "htsr/error.hpp"
#include "htsr/run_artifacts.hpp"
#include "htsr/tensor_io.hpp"
#include "htsr/train.hpp"

namespace htsr::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Writes `text` to `path`; false on failure.
bool write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  return static_cast<bool>(out);
}

int fail(std::ostream& err, int code, const std::string& message) {
  err << "htsr: " << message << '\n';
  return code;
}

}  // namespace

unsigned analysis_threads_from_env() {
  if (const char* env = std::getenv("HTSR_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

int cmd_analyze(const fs::path& checkpoint, FitMethod fit,
                const fs::path& output, std::ostream& err, unsigned threads) {
  Checkpoint ckpt;
  try {
    ckpt = read_checkpoint(checkpoint);
  } catch (const Error& e) {
    return fail(err, kExitFormat, checkpoint.string() + ": " + e.what());
  }

  std::vector<RowMajorMatrix> matrices;
  std::vector<const WeightMatrix*> sources;
  for (const auto& w : ckpt.entries) {
    if (!w.id.is_projection()) continue;
    sources.push_back(&w);
    matrices.push_back(w.to_matrix());
  }
  std::vector<ModuleInput> inputs;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    inputs.push_back({sources[i]->id, &matrices[i], nullptr});
  }

  std::vector<SpectralReport> reports;
  try {
    reports = analyze_modules(inputs, fit, FitOptions{}, threads);
  } catch (const SpectralError& e) {
    return fail(err, kExitSpectral, e.what());
  }

  std::ostringstream csv;
  csv << "raw_name,layer,kind,n,m,alpha,k,xmin,spectral_norm,frobenius_norm\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    csv << r.module.raw_name << ',' << r.module.layer_index << ','
        << kind_name(r.module.kind) << ',' << sources[i]->rows << ','
        << sources[i]->cols << ',' << format_double(r.alpha.alpha) << ','
        << r.alpha.k << ',' << format_double(r.alpha.xmin) << ','
        << format_double(r.spectral_norm) << ','
        << format_double(r.frobenius_norm) << '\n';
  }
  if (!write_text(output, csv.str())) {
    return fail(err, kExitFormat, "cannot write " + output.string());
  }
  return kExitOk;
}

int cmd_train(const fs::path& config_path, const fs::path& out_dir,
              std::ostream& err, std::ostream* progress) {
  ExperimentConfig cfg;
  Corpus corpus;
  try {
    cfg = load_experiment_config(config_path);
    cfg.train.analysis_threads = analysis_threads_from_env();
    corpus = load_corpus(cfg.corpus);
    fs::create_directories(out_dir);
  } catch (const Error& e) {
    return fail(err, kExitFormat, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(err, kExitFormat, e.what());
  }
  if (!write_text(out_dir / kConfigFile, to_json(cfg).dump(2) + "\n")) {
    return fail(err, kExitFormat, "cannot write into " + out_dir.string());
  }

  StepObserver observer;
  const std::size_t every = std::max<std::size_t>(1, cfg.train.steps / 20);
  if (progress != nullptr) {
    observer = [&](const StepRecord& s) {
      if (s.step % every == 0 || s.step + 1 == cfg.train.steps) {
        *progress << "step " << s.step << " loss " << s.loss << " lr " << s.lr
                  << '\n';
      }
    };
  }

  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  try {
    result = train_run(cfg.model, cfg.train, corpus, observer);
  } catch (const DivergenceError& e) {
    const json summary = {{"aborted_at_step", e.step()}, {"error", e.what()}};
    write_text(out_dir / kSummaryFile, summary.dump(2) + "\n");
    return fail(err, kExitDivergence, e.what());
  } catch (const SpectralError& e) {
    return fail(err, kExitSpectral, e.what());
  } catch (const Error& e) {
    return fail(err, kExitFormat, e.what());
  }
  const double wall = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start)
                          .count();

  const RunLog& log = result.log;
  std::ostringstream runlog, plans, reports;
  write_runlog_jsonl(runlog, log);
  write_plans_csv(plans, log.recomputes);
  write_reports_csv(reports, log.recomputes);
  const json summary = {{"final_val_loss", log.final_val_loss},
                        {"perplexity", log.perplexity},
                        {"steps", cfg.train.steps},
                        {"seed", cfg.train.seed}};
  const json timing = {{"wall_seconds", wall}};
  bool ok = write_text(out_dir / kRunLogFile, runlog.str()) &&
            write_text(out_dir / kPlansFile, plans.str()) &&
            write_text(out_dir / kReportsFile, reports.str()) &&
            write_text(out_dir / kSummaryFile, summary.dump(2) + "\n") &&
            write_text(out_dir / kTimingFile, timing.dump(2) + "\n");
  try {
    write_checkpoint(result.params.to_weight_matrices(),
                     {{"steps", std::to_string(cfg.train.steps)},
                      {"seed", std::to_string(cfg.train.seed)}},
                     out_dir / kCheckpointFile);
  } catch (const Error& e) {
    ok = false;
    err << "htsr: " << e.what() << '\n';
  }
  if (!ok) return fail(err, kExitFormat, "cannot write run artifacts");
  return kExitOk;
}

int cmd_report(const fs::path& run_dir, ReportFormat format, std::ostream& out,
               std::ostream& err) {
  std::vector<ReportRow> reports;
  std::vector<PlanRow> plans;
  try {
    std::ifstream rin(run_dir / kReportsFile);
    std::ifstream pin(run_dir / kPlansFile);
    if (!rin || !pin) {
      return fail(err, kExitFormat,
                  "missing reports.csv or plans.csv in " + run_dir.string());
    }
    reports = read_reports_csv(rin);
    plans = read_plans_csv(pin);
  } catch (const Error& e) {
    return fail(err, kExitFormat, e.what());
  }
  const auto alpha = alpha_group_table(reports);

  std::vector<fs::path> written;
  bool ok = true;
  if (format == ReportFormat::kCsv) {
    std::ostringstream a, d;
    a << "step,module_kind,mean_alpha,min_alpha,max_alpha\n";
    for (const auto& r : alpha) {
      a << r.step << ',' << r.group << ',' << format_double(r.mean_alpha) << ','
        << format_double(r.min_alpha) << ',' << format_double(r.max_alpha)
        << '\n';
    }
    d << "step,module,decay\n";
    for (const auto& p : plans) {
      d << p.step << ',' << p.module << ',' << format_double(p.decay) << '\n';
    }
    written = {run_dir / "report_alpha.csv", run_dir / "report_decay.csv"};
    ok = write_text(written[0], a.str()) && write_text(written[1], d.str());
  } else {
    json a = json::array();
    for (const auto& r : alpha) {
      a.push_back({{"step", r.step},
                   {"module_kind", r.group},
                   {"mean_alpha", r.mean_alpha},
                   {"min_alpha", r.min_alpha},
                   {"max_alpha", r.max_alpha}});
    }
    json d = json::array();
    for (const auto& p : plans) {
      d.push_back({{"step", p.step}, {"module", p.module}, {"decay", p.decay}});
    }
    written = {run_dir / "report.json"};
    ok = write_text(written[0], json{{"alpha", a}, {"decay", d}}.dump(2) + "\n");
  }
  if (!ok) return fail(err, kExitFormat, "cannot write report");
  for (const auto& p : written) out << p.string() << '\n';
  return kExitOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Heavy-tailed spectral analysis and module-wise weight decay"};
  app.require_subcommand(1);

  std::string ckpt, fit = "median", analyze_out;
  auto* analyze = app.add_subcommand(
      "analyze", "Fit PL_Alpha_Hill and norms for every projection module");
  analyze->add_option("--ckpt", ckpt, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  analyze->add_option("--fit", fit, "Tail fitting method")
      ->check(CLI::IsMember({"median", "fixfinger", "gof"}));
  analyze->add_option("--out", analyze_out, "Output CSV")->required();

  std::string config, train_out;
  auto* train = app.add_subcommand("train", "Run one training experiment");
  train->add_option("--config", config, "Experiment JSON")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Run directory")->required();

  std::string run_dir, format = "csv";
  auto* report = app.add_subcommand(
      "report", "Export alpha-group and decay tables from a run directory");
  report->add_option("--run", run_dir, "Run directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--format", format, "Output format")
      ->check(CLI::IsMember({"csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitFormat;
  }

  if (analyze->parsed()) {
    const fs::path out(analyze_out);
    if (out.has_parent_path() && !fs::is_directory(out.parent_path())) {
      return fail(std::cerr, kExitFormat,
                  "output directory does not exist: " + out.parent_path().string());
    }
    return cmd_analyze(ckpt, *parse_fit_method(fit), out, std::cerr,
                       analysis_threads_from_env());
  }
  if (train->parsed()) {
    return cmd_train(config, train_out, std::cerr, &std::cerr);
  }
  return cmd_report(run_dir,
                    format == "json" ? ReportFormat::kJson : ReportFormat::kCsv,
                    std::cout, std::cerr);
}

}  // namespace htsr::cli
