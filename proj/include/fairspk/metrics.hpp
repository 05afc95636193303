// Copyright 2026 The fairspk Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairspk/data_model.hpp"

namespace fairspk::metrics {

inline constexpr double kDefaultPrior = 0.05;
inline constexpr double kDefaultAlpha = 0.95;

/// Numerically stable log(1 + exp(x)).
double softplus(double x);
/// Logistic function.
double sigmoid(double x);

/// Prior offset ln(pi / (1 - pi)) added to every LLR inside the metric.
double prior_logit(double pi);

/// Prior-weighted Cllr in bits:
///   -pi * mean_tar log2 sigmoid(llr + tau) - (1-pi) * mean_non log2 sigmoid(-llr - tau)
/// with tau = ln(pi / (1 - pi)). Throws DataError when a class is absent.
double weighted_cllr(std::span<const double> llrs,
                     std::span<const std::uint8_t> targets, double pi);

/// Same with per-trial weights; class means become weighted means.
double weighted_cllr(std::span<const double> llrs,
                     std::span<const std::uint8_t> targets,
                     std::span<const double> weights, double pi);

/// Entropy of the prior in bits; the Cllr of an uninformative system.
double prior_entropy_bits(double pi);

struct AffineMap {
  double scale = 1.0;
  double offset = 0.0;

  double operator()(double s) const { return scale * s + offset; }
};

struct AffineFitOptions {
  double gradient_tolerance = 1e-9;  // on the nats objective
  std::size_t max_iterations = 200;
};

/// Minimizes the prior-weighted cross-entropy of scale * s + offset by damped
/// Newton iterations. `weights` may be empty (uniform).
AffineMap fit_affine(std::span<const double> scores,
                     std::span<const std::uint8_t> targets,
                     std::span<const double> weights, double pi,
                     const AffineFitOptions& options = {});

/// Cllr after the best affine transform of the scores (bits).
/// Constant scores give the prior entropy.
double min_cllr_affine(std::span<const double> llrs,
                       std::span<const std::uint8_t> targets, double pi);

/// ln((1 - pi) / pi), in nats.
double bayes_threshold(double pi);

struct ErrorRates {
  double p_fa = 0.0;
  double p_miss = 0.0;
};

/// Accepts when llr >= threshold. A class with no trials yields a zero rate.
ErrorRates error_rates(std::span<const double> llrs,
                       std::span<const std::uint8_t> targets, double threshold);

/// 1 - (alpha * max FA-rate gap + (1 - alpha) * max miss-rate gap).
double fdr(std::span<const ErrorRates> per_group, double alpha);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Statistic evaluated on a weighted replicate of a trial set.
using Statistic = std::function<double(std::span<const double> llrs,
                                       std::span<const std::uint8_t> targets,
                                       std::span<const double> weights)>;

/// Weighted Cllr with per-trial losses computed once up front; bootstrap
/// replicates only change the weights.
class CllrStatistic {
 public:
  CllrStatistic(std::span<const double> llrs,
                std::span<const std::uint8_t> targets, double pi);
  double operator()(std::span<const double> llrs,
                    std::span<const std::uint8_t> targets,
                    std::span<const double> weights) const;

 private:
  std::vector<double> losses_;
  double pi_;
};

struct BootstrapOptions {
  std::size_t n_boot = 1000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
  std::size_t max_retries = 10;
};

/// Speaker-level percentile bootstrap. Each replicate resamples the speakers
/// appearing in `trials` with replacement; a trial enters with multiplicity
/// equal to the product of its two speakers' draw counts. Replicates missing a
/// class are redrawn.
Interval bootstrap_ci(const EmbeddingSet& set, const TrialIndex& trials,
                      std::span<const double> llrs, const Statistic& statistic,
                      const BootstrapOptions& options);

struct GroupMetrics {
  std::string group;
  double cllr_bits = 0.0;
  double min_cllr_bits = 0.0;
  double cal_loss_bits = 0.0;
  double p_fa = 0.0;
  double p_miss = 0.0;
  std::size_t n_tar = 0;
  std::size_t n_non = 0;
  Interval cllr_ci;
};

struct MetricsReport {
  std::vector<GroupMetrics> groups;
  std::optional<double> fdr;  // absent with fewer than two groups
  double threshold_nats = 0.0;
  double pi = kDefaultPrior;
  double alpha = kDefaultAlpha;
};

struct EvaluateOptions {
  double pi = kDefaultPrior;
  double alpha = kDefaultAlpha;
  BootstrapOptions bootstrap;
};

/// Per-group metrics at the shared Bayes threshold plus cross-group FDR.
/// Every trial must have both sides in the same group.
MetricsReport evaluate(const EmbeddingSet& set, const TrialIndex& trials,
                       std::span<const double> llrs,
                       const GroupAssignment& groups,
                       const EvaluateOptions& options = {});

struct Histogram {
  std::vector<double> bin_centers;
  std::vector<double> tar_density;
  std::vector<double> non_density;
};

/// Per-class normalized densities over [lo, hi]; values outside are clamped
/// into the edge bins.
Histogram score_histogram(std::span<const double> llrs,
                          std::span<const std::uint8_t> targets,
                          std::size_t n_bins, double lo, double hi);

/// JSON text of a report. `config_echo` is embedded verbatim when non-empty.
std::string report_to_json(const MetricsReport& report,
                           const std::vector<std::pair<std::string, std::string>>&
                               config_echo = {});

}  // namespace fairspk::metrics
