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

#ifndef HTSR_SPECTRAL_HPP_
#define HTSR_SPECTRAL_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "htsr/tensor_io.hpp"

namespace htsr {

// Empirical spectral density: eigenvalues of W^T W restricted to the smaller
// dimension, i.e. the squared singular values of W. Sorted ascending, >= 0.
struct Esd {
  std::vector<double> eigenvalues;

  std::size_t size() const { return eigenvalues.size(); }
  double min() const { return eigenvalues.front(); }
  double max() const { return eigenvalues.back(); }
};

// Relative cutoff below which eigenvalues are treated as exact zeros.
inline constexpr double kZeroEigenvalueTolerance = 1e-12;

enum class FitMethod { kMedian, kFixFinger, kGoodnessOfFit };

// "median", "fixfinger", "gof".
std::string_view fit_method_name(FitMethod method);
std::optional<FitMethod> parse_fit_method(std::string_view name);

struct FitOptions {
  std::size_t fix_finger_bins = 100;
  std::size_t gof_max_candidates = 100;
};

struct HillFit {
  double alpha = 0.0;
  std::size_t k = 0;   // tail sample count
  double xmin = 0.0;   // threshold eigenvalue, the (n-k)-th smallest
  FitMethod method = FitMethod::kMedian;
};

struct SpectralReport {
  ModuleId module;
  HillFit alpha;
  double spectral_norm = 0.0;
  double frobenius_norm = 0.0;
  std::optional<double> grad_norm;
};

// Sorts, validates (finite, >= 0) and zeroes values below the relative
// cutoff. Used for synthetic spectra; compute_esd goes through it too.
Esd make_esd(std::vector<double> eigenvalues);

Esd compute_esd(const Eigen::Ref<const RowMajorMatrix>& w);
Esd compute_esd(const WeightMatrix& w);

// PL_Alpha_Hill over the k largest eigenvalues:
//   alpha = 1 + k / sum_{i=1..k} ln(lambda_{n-i+1} / lambda_{n-k}).
// Requires 1 <= k <= n-1.
HillFit hill_alpha(const Esd& esd, std::size_t k,
                   FitMethod method = FitMethod::kMedian);

// Tail size chosen by `method`:
//   Median        k = floor(n/2).
//   FixFinger     xmin is the largest eigenvalue in the modal bin of a
//                 log-spaced histogram of the positive spectrum.
//   GoodnessOfFit xmin minimizes the KS distance between the empirical tail
//                 and the fitted Pareto law over up to gof_max_candidates
//                 evenly spaced order statistics; ties go to larger k.
std::size_t select_k(const Esd& esd, FitMethod method,
                     const FitOptions& options = {});

// hill_alpha(esd, select_k(esd, method)).
HillFit fit_power_law(const Esd& esd, FitMethod method,
                      const FitOptions& options = {});

// KS distance between the k largest eigenvalues and the Pareto CDF
// 1 - (x / xmin)^(1 - alpha).
double pareto_ks_distance(const Esd& esd, const HillFit& fit);

double frobenius_norm(const Eigen::Ref<const RowMajorMatrix>& w);
double frobenius_norm(const WeightMatrix& w);
double spectral_norm(const Eigen::Ref<const RowMajorMatrix>& w);
double spectral_norm(const WeightMatrix& w);

// Errors from the component computations are rethrown as SpectralError
// tagged with the module's raw name.
SpectralReport analyze_module(const ModuleId& id,
                              const Eigen::Ref<const RowMajorMatrix>& w,
                              const RowMajorMatrix* grad, FitMethod method,
                              const FitOptions& options = {});
SpectralReport analyze_module(const WeightMatrix& w, const WeightMatrix* grad,
                              FitMethod method,
                              const FitOptions& options = {});

struct ModuleInput {
  ModuleId id;
  const RowMajorMatrix* weight = nullptr;
  const RowMajorMatrix* grad = nullptr;
};

// Analyzes modules on up to `threads` workers. Results come back in input
// order; if any module fails, the first failure in input order is rethrown.
std::vector<SpectralReport> analyze_modules(std::span<const ModuleInput> inputs,
                                            FitMethod method,
                                            const FitOptions& options,
                                            unsigned threads);

}  // namespace htsr

#endif  // HTSR_SPECTRAL_HPP_
