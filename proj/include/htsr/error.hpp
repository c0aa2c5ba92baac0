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

#ifndef HTSR_ERROR_HPP_
#define HTSR_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace htsr {

enum class ErrorCode {
  kInvalidArgument,
  // Checkpoint container.
  kIo,
  kDuplicateName,
  kNonFinite,
  kBadMagic,
  kCorruptManifest,
  kTruncatedPayload,
  kOverlappingRegions,
  kUnsupportedDtype,
  kUnsupportedVersion,
  kShapeMismatch,
  // Spectral analysis.
  kSvdFailure,
  kDegenerateTail,
  kNonpositiveThreshold,
  kTailTooSmall,
  // Scheduling.
  kLogDomain,
  kNonpositiveMetric,
  kMissingReport,
  kMissingMetric,
  kZeroWeightNorm,
  // Training and configuration.
  kConfig,
  kDivergence,
};

// Human-readable name, e.g. "degenerate tail".
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }

 protected:
  // `prefix` leads the what() string, e.g. a module name.
  Error(ErrorCode code, const std::string& detail, const std::string& prefix);

 private:
  ErrorCode code_;
};

// Raised by the checkpoint reader/writer and by config/run-artifact parsing.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Raised by spectral analysis. `module()` is empty until the error is tagged
// by analyze_module.
class SpectralError : public Error {
 public:
  SpectralError(ErrorCode code, const std::string& detail,
                std::string module = {});

  const std::string& module() const noexcept { return module_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string module_;
  std::string detail_;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss or update) at `step()`.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& detail);

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace htsr

#endif  // HTSR_ERROR_HPP_
