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

#include "htsr/spectral.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <string>
#include <thread>

#include <Eigen/SVD>

#include "htsr/error.hpp"

namespace htsr {

namespace {

constexpr std::array<std::string_view, 3> kFitMethodNames = {"median",
                                                             "fixfinger", "gof"};

std::size_t first_positive(const Esd& esd) {
  const auto& ev = esd.eigenvalues;
  return static_cast<std::size_t>(
      std::upper_bound(ev.begin(), ev.end(), 0.0) - ev.begin());
}

void require_fit_domain(const Esd& esd) {
  if (esd.size() < 4) {
    throw SpectralError(ErrorCode::kTailTooSmall,
                        "need at least 4 eigenvalues, have " +
                            std::to_string(esd.size()));
  }
  if (esd.max() == esd.min()) {
    throw SpectralError(ErrorCode::kDegenerateTail, "all eigenvalues equal");
  }
}

std::size_t fix_finger_k(const Esd& esd, std::size_t bins) {
  const auto& ev = esd.eigenvalues;
  const std::size_t n = ev.size();
  const std::size_t p = first_positive(esd);
  if (n - p < 2) {
    throw SpectralError(ErrorCode::kTailTooSmall,
                        "fewer than 2 positive eigenvalues");
  }
  bins = std::max<std::size_t>(bins, 1);
  const double lo = std::log10(ev[p]);
  const double hi = std::log10(ev[n - 1]);
  const double width = hi - lo;

  auto bin_of = [&](double x) -> std::size_t {
    if (width <= 0.0) return 0;
    const double pos = (std::log10(x) - lo) / width * static_cast<double>(bins);
    return std::min(static_cast<std::size_t>(std::max(pos, 0.0)), bins - 1);
  };

  std::vector<std::size_t> counts(bins, 0);
  for (std::size_t i = p; i < n; ++i) ++counts[bin_of(ev[i])];
  const std::size_t peak = static_cast<std::size_t>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());

  // Largest eigenvalue that falls in the modal bin.
  std::size_t last = p;
  for (std::size_t i = p; i < n; ++i) {
    if (bin_of(ev[i]) == peak) last = i;
  }
  const double xmin = ev[last];
  const std::size_t above = static_cast<std::size_t>(
      ev.end() - std::upper_bound(ev.begin(), ev.end(), xmin));
  return std::clamp<std::size_t>(above, 2, n - 1);
}

std::size_t goodness_of_fit_k(const Esd& esd, std::size_t max_candidates) {
  const auto& ev = esd.eigenvalues;
  const std::size_t n = ev.size();
  const std::size_t p = first_positive(esd);
  // Threshold index j leaves k = n - 1 - j tail samples; k >= 2.
  if (p + 3 > n) {
    throw SpectralError(ErrorCode::kTailTooSmall,
                        "fewer than 2 samples above any positive threshold");
  }
  const std::size_t last = n - 3;
  const std::size_t span = last - p + 1;
  max_candidates = std::max<std::size_t>(max_candidates, 2);

  std::vector<std::size_t> candidates;
  if (span <= max_candidates) {
    for (std::size_t j = p; j <= last; ++j) candidates.push_back(j);
  } else {
    const std::size_t steps = max_candidates - 1;
    for (std::size_t c = 0; c < max_candidates; ++c) {
      const std::size_t j = p + (c * (last - p) + steps / 2) / steps;
      if (candidates.empty() || candidates.back() != j) candidates.push_back(j);
    }
  }

  std::size_t best_k = 0;
  double best_d = 0.0;
  for (std::size_t j : candidates) {
    if (ev[j] == ev[n - 1]) continue;
    const std::size_t k = n - 1 - j;
    const HillFit fit = hill_alpha(esd, k, FitMethod::kGoodnessOfFit);
    const double d = pareto_ks_distance(esd, fit);
    if (best_k == 0 || d < best_d || (d == best_d && k > best_k)) {
      best_k = k;
      best_d = d;
    }
  }
  if (best_k == 0) {
    throw SpectralError(ErrorCode::kDegenerateTail,
                        "no candidate threshold has a non-flat tail");
  }
  return best_k;
}

template <typename Fn>
auto tagged(const ModuleId& id, Fn&& fn) {
  try {
    return fn();
  } catch (const SpectralError& e) {
    if (!e.module().empty()) throw;
    throw SpectralError(e.code(), e.detail(), id.raw_name);
  } catch (const Error& e) {
    throw SpectralError(e.code(), e.what(), id.raw_name);
  }
}

}  // namespace

std::string_view fit_method_name(FitMethod method) {
  return kFitMethodNames[static_cast<std::size_t>(method)];
}

std::optional<FitMethod> parse_fit_method(std::string_view name) {
  for (std::size_t i = 0; i < kFitMethodNames.size(); ++i) {
    if (kFitMethodNames[i] == name) return static_cast<FitMethod>(i);
  }
  return std::nullopt;
}

Esd make_esd(std::vector<double> eigenvalues) {
  if (eigenvalues.empty()) {
    throw SpectralError(ErrorCode::kInvalidArgument, "empty spectrum");
  }
  for (double v : eigenvalues) {
    if (!std::isfinite(v) || v < 0.0) {
      throw SpectralError(ErrorCode::kInvalidArgument,
                          "eigenvalues must be finite and nonnegative");
    }
  }
  std::sort(eigenvalues.begin(), eigenvalues.end());
  const double cutoff = kZeroEigenvalueTolerance * eigenvalues.back();
  for (double& v : eigenvalues) {
    if (v < cutoff) v = 0.0;
  }
  return Esd{std::move(eigenvalues)};
}

Esd compute_esd(const Eigen::Ref<const RowMajorMatrix>& w) {
  if (w.size() == 0) {
    throw SpectralError(ErrorCode::kInvalidArgument, "empty matrix");
  }
  if (!w.allFinite()) {
    throw SpectralError(ErrorCode::kNonFinite, "matrix has non-finite entries");
  }
  // Keep rows <= cols; singular values are unchanged by the transpose.
  Eigen::MatrixXd a = w.rows() > w.cols() ? Eigen::MatrixXd(w.transpose())
                                          : Eigen::MatrixXd(w);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
  if (svd.info() != Eigen::Success) {
    throw SpectralError(ErrorCode::kSvdFailure, "BDCSVD did not converge");
  }
  const auto& sv = svd.singularValues();
  std::vector<double> ev(static_cast<std::size_t>(sv.size()));
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    ev[static_cast<std::size_t>(i)] = sv[i] * sv[i];
  }
  return make_esd(std::move(ev));
}

Esd compute_esd(const WeightMatrix& w) {
  w.validate();
  return compute_esd(w.to_matrix());
}

HillFit hill_alpha(const Esd& esd, std::size_t k, FitMethod method) {
  const auto& ev = esd.eigenvalues;
  const std::size_t n = ev.size();
  if (k < 1 || k + 1 > n) {
    throw SpectralError(ErrorCode::kInvalidArgument,
                        "k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(n == 0 ? 0 : n - 1) + "]");
  }
  const double threshold = ev[n - k - 1];
  if (!(threshold > 0.0)) {
    throw SpectralError(ErrorCode::kNonpositiveThreshold,
                        "lambda_{n-k} = " + std::to_string(threshold));
  }
  double log_sum = 0.0;
  for (std::size_t i = n - k; i < n; ++i) {
    log_sum += std::log(ev[i] / threshold);
  }
  if (!(log_sum > 0.0)) {
    throw SpectralError(ErrorCode::kDegenerateTail,
                        "top " + std::to_string(k) +
                            " eigenvalues equal the threshold");
  }
  return HillFit{1.0 + static_cast<double>(k) / log_sum, k, threshold, method};
}

std::size_t select_k(const Esd& esd, FitMethod method,
                     const FitOptions& options) {
  require_fit_domain(esd);
  switch (method) {
    case FitMethod::kMedian:
      return esd.size() / 2;
    case FitMethod::kFixFinger:
      return fix_finger_k(esd, options.fix_finger_bins);
    case FitMethod::kGoodnessOfFit:
      return goodness_of_fit_k(esd, options.gof_max_candidates);
  }
  throw SpectralError(ErrorCode::kInvalidArgument, "unknown fit method");
}

HillFit fit_power_law(const Esd& esd, FitMethod method,
                      const FitOptions& options) {
  return hill_alpha(esd, select_k(esd, method, options), method);
}

double pareto_ks_distance(const Esd& esd, const HillFit& fit) {
  const auto& ev = esd.eigenvalues;
  const std::size_t n = ev.size();
  const double kd = static_cast<double>(fit.k);
  double d = 0.0;
  for (std::size_t i = 0; i < fit.k; ++i) {
    const double x = ev[n - fit.k + i];
    const double cdf = 1.0 - std::pow(x / fit.xmin, 1.0 - fit.alpha);
    const double upper = static_cast<double>(i + 1) / kd - cdf;
    const double lower = cdf - static_cast<double>(i) / kd;
    d = std::max({d, upper, lower});
  }
  return d;
}

double frobenius_norm(const Eigen::Ref<const RowMajorMatrix>& w) {
  double sum = 0.0;
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) sum += w(r, c) * w(r, c);
  }
  return std::sqrt(sum);
}

double frobenius_norm(const WeightMatrix& w) {
  return frobenius_norm(w.to_matrix());
}

double spectral_norm(const Eigen::Ref<const RowMajorMatrix>& w) {
  const Esd esd = compute_esd(w);
  // sqrt(lambda_max) can exceed ||W||_F by an ulp for rank-one W.
  return std::min(std::sqrt(esd.max()), frobenius_norm(w));
}

double spectral_norm(const WeightMatrix& w) {
  w.validate();
  return spectral_norm(w.to_matrix());
}

SpectralReport analyze_module(const ModuleId& id,
                              const Eigen::Ref<const RowMajorMatrix>& w,
                              const RowMajorMatrix* grad, FitMethod method,
                              const FitOptions& options) {
  return tagged(id, [&] {
    SpectralReport report;
    report.module = id;
    const Esd esd = compute_esd(w);
    report.alpha = fit_power_law(esd, method, options);
    report.frobenius_norm = frobenius_norm(w);
    report.spectral_norm =
        std::min(std::sqrt(esd.max()), report.frobenius_norm);
    if (grad != nullptr) {
      if (grad->rows() != w.rows() || grad->cols() != w.cols()) {
        throw SpectralError(ErrorCode::kShapeMismatch,
                            "gradient shape differs from weight shape");
      }
      report.grad_norm = frobenius_norm(*grad);
    }
    return report;
  });
}

SpectralReport analyze_module(const WeightMatrix& w, const WeightMatrix* grad,
                              FitMethod method, const FitOptions& options) {
  return tagged(w.id, [&] {
    w.validate();
    const RowMajorMatrix wm = w.to_matrix();
    if (grad == nullptr) {
      return analyze_module(w.id, wm, nullptr, method, options);
    }
    grad->validate();
    const RowMajorMatrix gm = grad->to_matrix();
    return analyze_module(w.id, wm, &gm, method, options);
  });
}

std::vector<SpectralReport> analyze_modules(std::span<const ModuleInput> inputs,
                                            FitMethod method,
                                            const FitOptions& options,
                                            unsigned threads) {
  std::vector<std::optional<SpectralReport>> results(inputs.size());
  std::vector<std::exception_ptr> errors(inputs.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      try {
        results[i] = analyze_module(inputs[i].id, *inputs[i].weight,
                                    inputs[i].grad, method, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(std::max(threads, 1u), inputs.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  }

  std::vector<SpectralReport> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*results[i]));
  }
  return out;
}

}  // namespace htsr
