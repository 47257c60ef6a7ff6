#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "uwvo/error.hpp"
#include "uwvo/rng.hpp"

namespace uwvo {

struct RansacOptions {
  double threshold = 1.5e-3;  // residual units (radians for bearing kernels)
  double confidence = 0.99;
  int max_iters = 1000;
  std::uint64_t seed = 0;
};

template <typename Model>
struct RansacResult {
  Model model{};
  std::vector<std::size_t> inliers;
  int iterations_run = 0;
  double inlier_ratio = 0.0;
};

/// A minimal solver plus its scoring function.
///
/// `sample_size` indices are drawn per hypothesis; `minimal_size` is the
/// solver's minimal set and sets the success floor (minimal_size + 1
/// inliers). A kernel may draw more than its minimal set to validate
/// candidates, as the P3P kernel does with a fourth point.
template <typename Model>
struct RansacKernel {
  int sample_size = 0;
  int minimal_size = 0;
  std::function<std::vector<Model>(std::span<const std::size_t>)> solve;
  std::function<double(const Model&, std::size_t)> residual;
  /// Optional least-squares refit on the full inlier set.
  std::function<std::optional<Model>(const Model&, std::span<const std::size_t>)> refit;
};

/// Number of hypotheses needed to draw one all-inlier sample with the given
/// confidence.
inline int adaptive_iterations(double inlier_ratio, int sample_size, double confidence,
                               int cap) {
  if (inlier_ratio >= 1.0) return 1;
  if (inlier_ratio <= 0.0) return cap;
  const double p_good = std::pow(inlier_ratio, sample_size);
  if (p_good <= 0.0) return cap;
  const double denom = std::log1p(-p_good);
  if (denom >= 0.0) return cap;
  const double n = std::ceil(std::log1p(-confidence) / denom);
  if (!(n < static_cast<double>(cap))) return cap;
  return std::max(1, static_cast<int>(n));
}

/// Adaptive RANSAC. Hypotheses are generated and scored in a fixed order, so
/// the result is a pure function of (data, kernel, options).
template <typename Model>
RansacResult<Model> ransac(std::size_t data_size, const RansacKernel<Model>& kernel,
                           const RansacOptions& options) {
  if (data_size < static_cast<std::size_t>(kernel.sample_size)) {
    fail(ErrorCode::kInsufficientData, "RANSAC: fewer data than the sample size");
  }
  Rng rng(options.seed);
  std::vector<std::size_t> pool(data_size);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::vector<std::size_t> sample(kernel.sample_size);

  auto score = [&](const Model& m, std::vector<std::size_t>& inliers, double& total) {
    inliers.clear();
    total = 0.0;
    for (std::size_t i = 0; i < data_size; ++i) {
      const double r = kernel.residual(m, i);
      if (r <= options.threshold) {
        inliers.push_back(i);
        total += r;
      }
    }
  };

  RansacResult<Model> best;
  double best_total = 0.0;
  bool have_model = false;
  std::vector<std::size_t> inliers;
  int needed = options.max_iters;
  int it = 0;
  for (; it < needed && it < options.max_iters; ++it) {
    // partial Fisher-Yates draw without replacement
    for (int k = 0; k < kernel.sample_size; ++k) {
      const std::size_t j = k + rng.index(data_size - k);
      std::swap(pool[k], pool[j]);
      sample[k] = pool[k];
    }
    std::vector<Model> models;
    try {
      models = kernel.solve(sample);
    } catch (const Error&) {
      continue;  // degenerate sample
    }
    for (const Model& m : models) {
      double total = 0.0;
      score(m, inliers, total);
      const bool better = !have_model || inliers.size() > best.inliers.size() ||
                          (inliers.size() == best.inliers.size() && total < best_total);
      if (better) {
        best.model = m;
        best.inliers = inliers;
        best_total = total;
        have_model = true;
        const double ratio = static_cast<double>(inliers.size()) / data_size;
        needed = adaptive_iterations(ratio, kernel.sample_size, options.confidence,
                                     options.max_iters);
      }
    }
  }
  best.iterations_run = it;

  if (!have_model || best.inliers.size() < static_cast<std::size_t>(kernel.minimal_size + 1)) {
    fail(ErrorCode::kEstimationFailure, "RANSAC found no model with enough inliers");
  }

  if (kernel.refit) {
    if (auto refined = kernel.refit(best.model, best.inliers)) {
      double total = 0.0;
      score(*refined, inliers, total);
      if (inliers.size() >= best.inliers.size()) {
        best.model = *refined;
        best.inliers = inliers;
      }
    }
  }
  best.inlier_ratio = static_cast<double>(best.inliers.size()) / data_size;
  return best;
}

}  // namespace uwvo
