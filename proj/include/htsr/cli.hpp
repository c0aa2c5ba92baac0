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

#ifndef HTSR_CLI_HPP_
#define HTSR_CLI_HPP_

#include <filesystem>
#include <iosfwd>

#include "htsr/spectral.hpp"

namespace htsr::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFormat = 2,      // bad flags, config, checkpoint or run artifacts
  kExitSpectral = 3,    // spectral analysis failed for some module
  kExitDivergence = 4,  // training diverged
};

enum class ReportFormat { kCsv, kJson };

// Analysis parallelism from HTSR_THREADS, else the hardware concurrency.
unsigned analysis_threads_from_env();

// One CSV row per projection module of the checkpoint:
// raw_name,layer,kind,n,m,alpha,k,xmin,spectral_norm,frobenius_norm.
int cmd_analyze(const std::filesystem::path& checkpoint, FitMethod fit,
                const std::filesystem::path& output, std::ostream& err,
                unsigned threads);

// Writes runlog.jsonl, plans.csv, reports.csv, checkpoint.htsr, config.json,
// summary.json and timing.json into `out_dir` (created if missing).
int cmd_train(const std::filesystem::path& config,
              const std::filesystem::path& out_dir, std::ostream& err,
              std::ostream* progress = nullptr);

// Writes alpha_groups + decay tables into the run directory:
// report_alpha.csv and report_decay.csv, or report.json.
int cmd_report(const std::filesystem::path& run_dir, ReportFormat format,
               std::ostream& out, std::ostream& err);

// Parses argv and dispatches; returns the process exit code.
int run(int argc, char** argv);

}  // namespace htsr::cli

#endif  // HTSR_CLI_HPP_
