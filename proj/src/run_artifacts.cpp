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

#include "htsr/run_artifacts.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "htsr/error.hpp"

namespace htsr {

using json = nlohmann::json;

namespace {

constexpr std::string_view kReportsHeader =
    "step,raw_name,layer,kind,alpha,k,xmin,spectral_norm,frobenius_norm,"
    "grad_norm";
constexpr std::string_view kPlansHeader = "step,module,metric_value,decay";
constexpr std::array<std::string_view, 3> kGroups = {"att.q/k", "att.v/o",
                                                     "mlp"};

[[noreturn]] void corrupt(const std::string& what) {
  throw FormatError(ErrorCode::kCorruptManifest, what);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    corrupt("bad number '" + s + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    corrupt("bad integer '" + s + "'");
  }
  return v;
}

template <typename Row, typename Parse>
std::vector<Row> read_csv(std::istream& in, std::string_view header,
                          std::size_t columns, Parse parse) {
  std::string line;
  if (!std::getline(in, line) || line != header) {
    corrupt("unexpected header, want '" + std::string(header) + "'");
  }
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != columns) corrupt("wrong column count: " + line);
    rows.push_back(parse(cells));
  }
  return rows;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_runlog_jsonl(std::ostream& out, const RunLog& log) {
  for (const auto& s : log.steps) {
    out << "{\"step\":" << s.step << ",\"loss\":" << format_double(s.loss)
        << ",\"lr\":" << format_double(s.lr)
        << ",\"grad_norm\":" << format_double(s.grad_norm) << "}\n";
  }
}

void write_plan_csv_rows(std::ostream& out, const DecayPlan& plan) {
  for (const auto& [id, decay] : plan.assignments) {
    auto m = plan.metric_values.find(id);
    const double metric =
        m == plan.metric_values.end() ? std::nan("") : m->second;
    out << plan.step << ',' << id.raw_name << ',' << format_double(metric)
        << ',' << format_double(decay) << '\n';
  }
}

void write_plans_csv(std::ostream& out,
                     const std::vector<RecomputeRecord>& recomputes) {
  out << kPlansHeader << '\n';
  for (const auto& r : recomputes) write_plan_csv_rows(out, r.plan);
}

json plan_to_json(const DecayPlan& plan) {
  json modules = json::array();
  for (const auto& [id, decay] : plan.assignments) {
    json entry = {{"module", id.raw_name}, {"decay", decay}};
    auto m = plan.metric_values.find(id);
    if (m != plan.metric_values.end()) entry["metric_value"] = m->second;
    modules.push_back(std::move(entry));
  }
  return {{"step", plan.step}, {"eta", plan.eta}, {"modules", modules}};
}

void write_reports_csv(std::ostream& out,
                       const std::vector<RecomputeRecord>& recomputes) {
  out << kReportsHeader << '\n';
  for (const auto& rec : recomputes) {
    for (const auto& r : rec.reports) {
      out << rec.step << ',' << r.module.raw_name << ',' << r.module.layer_index
          << ',' << kind_name(r.module.kind) << ','
          << format_double(r.alpha.alpha) << ',' << r.alpha.k << ','
          << format_double(r.alpha.xmin) << ','
          << format_double(r.spectral_norm) << ','
          << format_double(r.frobenius_norm) << ','
          << (r.grad_norm ? format_double(*r.grad_norm) : std::string()) << '\n';
    }
  }
}

std::vector<ReportRow> read_reports_csv(std::istream& in) {
  return read_csv<ReportRow>(
      in, kReportsHeader, 10, [](const std::vector<std::string>& c) {
        ReportRow r;
        r.step = parse_size(c[0]);
        r.module = parse_module_name(c[1]);
        if (std::to_string(r.module.layer_index) != c[2] ||
            kind_name(r.module.kind) != c[3]) {
          corrupt("layer/kind columns disagree with '" + c[1] + "'");
        }
        r.alpha = parse_double(c[4]);
        r.k = parse_size(c[5]);
        r.xmin = parse_double(c[6]);
        r.spectral_norm = parse_double(c[7]);
        r.frobenius_norm = parse_double(c[8]);
        if (!c[9].empty()) r.grad_norm = parse_double(c[9]);
        return r;
      });
}

std::vector<PlanRow> read_plans_csv(std::istream& in) {
  return read_csv<PlanRow>(in, kPlansHeader, 4,
                           [](const std::vector<std::string>& c) {
                             return PlanRow{parse_size(c[0]), c[1],
                                            parse_double(c[2]),
                                            parse_double(c[3])};
                           });
}

std::optional<std::string_view> alpha_group(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::kAttQ:
    case ModuleKind::kAttK:
      return kGroups[0];
    case ModuleKind::kAttV:
    case ModuleKind::kAttO:
      return kGroups[1];
    case ModuleKind::kMlpGate:
    case ModuleKind::kMlpUp:
    case ModuleKind::kMlpDown:
      return kGroups[2];
    case ModuleKind::kOther:
      return std::nullopt;
  }
  return std::nullopt;
}

std::vector<AlphaGroupRow> alpha_group_table(const std::vector<ReportRow>& rows) {
  struct Acc {
    double sum = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
  };
  std::map<std::size_t, std::array<Acc, 3>> steps;
  for (const auto& r : rows) {
    auto group = alpha_group(r.module.kind);
    if (!group) continue;
    const auto g = static_cast<std::size_t>(
        std::find(kGroups.begin(), kGroups.end(), *group) - kGroups.begin());
    Acc& a = steps[r.step][g];
    a.sum += r.alpha;
    a.lo = a.count == 0 ? r.alpha : std::min(a.lo, r.alpha);
    a.hi = a.count == 0 ? r.alpha : std::max(a.hi, r.alpha);
    ++a.count;
  }
  std::vector<AlphaGroupRow> out;
  for (const auto& [step, groups] : steps) {
    for (std::size_t g = 0; g < kGroups.size(); ++g) {
      if (groups[g].count == 0) continue;
      out.push_back({step, std::string(kGroups[g]),
                     groups[g].sum / static_cast<double>(groups[g].count),
                     groups[g].lo, groups[g].hi});
    }
  }
  return out;
}

double alpha_group_spread(const std::vector<AlphaGroupRow>& table,
                          std::size_t step) {
  bool any = false;
  double lo = 0.0;
  double hi = 0.0;
  for (const auto& r : table) {
    if (r.step != step) continue;
    lo = any ? std::min(lo, r.mean_alpha) : r.mean_alpha;
    hi = any ? std::max(hi, r.mean_alpha) : r.mean_alpha;
    any = true;
  }
  if (!any) {
    throw Error(ErrorCode::kInvalidArgument,
                "no alpha rows at step " + std::to_string(step));
  }
  return hi - lo;
}

std::vector<ReportRow> report_rows(
    const std::vector<RecomputeRecord>& recomputes) {
  std::vector<ReportRow> out;
  for (const auto& rec : recomputes) {
    for (const auto& r : rec.reports) {
      out.push_back({rec.step, r.module, r.alpha.alpha, r.alpha.k, r.alpha.xmin,
                     r.spectral_norm, r.frobenius_norm, r.grad_norm});
    }
  }
  return out;
}

}  // namespace htsr
