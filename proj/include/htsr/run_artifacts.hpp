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

#ifndef HTSR_RUN_ARTIFACTS_HPP_
#define HTSR_RUN_ARTIFACTS_HPP_

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "htsr/schedule.hpp"
#include "htsr/spectral.hpp"
#include "htsr/train.hpp"

namespace htsr {

// Shortest round-trip-safe decimal: 17 significant digits.
std::string format_double(double v);

// Files written into a training run directory.
inline constexpr std::string_view kRunLogFile = "runlog.jsonl";
inline constexpr std::string_view kPlansFile = "plans.csv";
inline constexpr std::string_view kReportsFile = "reports.csv";
inline constexpr std::string_view kCheckpointFile = "checkpoint.htsr";
inline constexpr std::string_view kSummaryFile = "summary.json";
inline constexpr std::string_view kTimingFile = "timing.json";
inline constexpr std::string_view kConfigFile = "config.json";

// One JSON object per training step: {"step","loss","lr","grad_norm"}.
void write_runlog_jsonl(std::ostream& out, const RunLog& log);

// step,module,metric_value,decay -- one row per scheduled module per plan.
void write_plans_csv(std::ostream& out,
                     const std::vector<RecomputeRecord>& recomputes);
void write_plan_csv_rows(std::ostream& out, const DecayPlan& plan);
nlohmann::json plan_to_json(const DecayPlan& plan);

// step,raw_name,layer,kind,alpha,k,xmin,spectral_norm,frobenius_norm,
// grad_norm (empty when absent).
void write_reports_csv(std::ostream& out,
                       const std::vector<RecomputeRecord>& recomputes);

// Parsed rows of reports.csv and plans.csv.
struct ReportRow {
  std::size_t step = 0;
  ModuleId module;
  double alpha = 0.0;
  std::size_t k = 0;
  double xmin = 0.0;
  double spectral_norm = 0.0;
  double frobenius_norm = 0.0;
  std::optional<double> grad_norm;
};
struct PlanRow {
  std::size_t step = 0;
  std::string module;
  double metric_value = 0.0;
  double decay = 0.0;
};

// Throw FormatError(kCorruptManifest) on malformed input.
std::vector<ReportRow> read_reports_csv(std::istream& in);
std::vector<PlanRow> read_plans_csv(std::istream& in);

// Figure-style grouping: "att.q/k", "att.v/o", "mlp"; nullopt for kOther.
std::optional<std::string_view> alpha_group(ModuleKind kind);

struct AlphaGroupRow {
  std::size_t step = 0;
  std::string group;
  double mean_alpha = 0.0;
  double min_alpha = 0.0;
  double max_alpha = 0.0;
};

// Group statistics per recompute step, steps ascending, groups in the order
// att.q/k, att.v/o, mlp. Means are summed in module order.
std::vector<AlphaGroupRow> alpha_group_table(const std::vector<ReportRow>& rows);

// max group mean - min group mean over the three groups at `step`.
double alpha_group_spread(const std::vector<AlphaGroupRow>& table,
                          std::size_t step);

std::vector<ReportRow> report_rows(const std::vector<RecomputeRecord>& recomputes);

}  // namespace htsr

#endif  // HTSR_RUN_ARTIFACTS_HPP_
