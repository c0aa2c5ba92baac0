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

#include "htsr/error.hpp"

#include <utility>

namespace htsr {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kIo: return "I/O failure";
    case ErrorCode::kDuplicateName: return "duplicate name";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kCorruptManifest: return "corrupt manifest";
    case ErrorCode::kTruncatedPayload: return "truncated payload";
    case ErrorCode::kOverlappingRegions: return "overlapping regions";
    case ErrorCode::kUnsupportedDtype: return "unsupported dtype";
    case ErrorCode::kUnsupportedVersion: return "unsupported version";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kSvdFailure: return "SVD non-convergence";
    case ErrorCode::kDegenerateTail: return "degenerate tail";
    case ErrorCode::kNonpositiveThreshold: return "nonpositive threshold";
    case ErrorCode::kTailTooSmall: return "tail too small";
    case ErrorCode::kLogDomain: return "log-domain";
    case ErrorCode::kNonpositiveMetric: return "nonpositive metric";
    case ErrorCode::kMissingReport: return "missing report";
    case ErrorCode::kMissingMetric: return "missing metric";
    case ErrorCode::kZeroWeightNorm: return "zero weight norm";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kDivergence: return "divergence";
  }
  return "unknown error";
}

namespace {

std::string compose(ErrorCode code, const std::string& detail) {
  std::string out(error_code_name(code));
  if (!detail.empty()) {
    out += ": ";
    out += detail;
  }
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(compose(code, detail)), code_(code) {}

Error::Error(ErrorCode code, const std::string& detail,
             const std::string& prefix)
    : std::runtime_error(prefix.empty() ? compose(code, detail)
                                        : prefix + ": " + compose(code, detail)),
      code_(code) {}

SpectralError::SpectralError(ErrorCode code, const std::string& detail,
                             std::string module)
    : Error(code, detail, module), module_(std::move(module)), detail_(detail) {}

DivergenceError::DivergenceError(std::size_t step, const std::string& detail)
    : Error(ErrorCode::kDivergence,
            "step " + std::to_string(step) + (detail.empty() ? "" : ", ") +
                detail),
      step_(step) {}

}  // namespace htsr
