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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairspk/data_model.hpp"
#include "fairspk/metrics.hpp"

namespace fairspk::generative {

/// w_i = 1 / (G * n_g(i)): every group carries total weight 1/G.
std::vector<double> compute_balancing_weights(const GroupAssignment& groups);

/// Rescales weights to unit mean; all-equal weights become exactly 1 so that
/// uniform weighting and no weighting follow identical arithmetic.
/// Empty input means unweighted and yields `n` ones.
std::vector<double> normalize_weights(std::span<const double> weights,
                                      std::size_t n);

/// Weighted LDA. Rows of the result are the top-`dim` generalized
/// eigenvectors of between- vs within-speaker scatter, scaled to unit
/// within-speaker variance, with the largest-magnitude entry of each row
/// positive. `data` is n x d, centered or not; centering uses `center`.
Eigen::MatrixXd fit_lda(const Eigen::MatrixXd& data,
                        const std::vector<std::string>& speakers,
                        std::span<const double> weights, std::size_t dim);

/// Weighted mean of the rows of `data`.
Eigen::VectorXd weighted_mean(const Eigen::MatrixXd& data,
                              std::span<const double> weights);

/// sqrt(p) * x / ||x||.
Eigen::VectorXd length_normalize(const Eigen::VectorXd& x);

/// Two-covariance model x = mu + u_s + e, u_s ~ N(0, B), e ~ N(0, W).
struct Plda {
  Eigen::VectorXd mu;
  Eigen::MatrixXd between;  // B
  Eigen::MatrixXd within;   // W
};

struct PldaFitOptions {
  std::size_t n_iters = 50;
  /// Stop once the weighted log-likelihood gains less than this per sample.
  double tolerance = 1e-6;
};

struct PldaFitResult {
  Plda model;
  /// Weighted log-likelihood before each M-step; non-decreasing.
  std::vector<double> log_likelihood;
};

/// Weighted EM. Each speaker's marginal log-likelihood is scaled by the mean
/// weight of its samples; posteriors over u_s use the speaker's own
/// statistics. Throws NumericalError if W becomes singular.
PldaFitResult fit_plda(const Eigen::MatrixXd& data,
                       const std::vector<std::string>& speakers,
                       std::span<const double> weights,
                       const PldaFitOptions& options = {});

/// Closed-form two-covariance LLR of centered vectors:
///   ln N([x1;x2]; 0, [[B+W, B], [B, B+W]]) - ln N(x1; 0, B+W) - ln N(x2; 0, B+W)
/// expanded as 0.5 x1'Q x1 + 0.5 x2'Q x2 + x1'P x2 + k.
class TwoCovarianceScorer {
 public:
  TwoCovarianceScorer(const Eigen::MatrixXd& between,
                      const Eigen::MatrixXd& within);

  double operator()(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) const;

  const Eigen::MatrixXd& quadratic() const { return q_; }
  const Eigen::MatrixXd& cross() const { return p_; }
  double constant() const { return k_; }

 private:
  Eigen::MatrixXd q_;
  Eigen::MatrixXd p_;
  double k_ = 0.0;
};

double plda_llr(const Plda& plda, const Eigen::VectorXd& x1,
                const Eigen::VectorXd& x2);

struct GenerativeBackend {
  Eigen::VectorXd mean;    // d
  Eigen::MatrixXd lda;     // p x d
  Plda plda;               // in the p-dim normalized space
  double cal_a = 1.0;
  double cal_b = 0.0;

  /// Center, project, length-normalize, subtract the PLDA mean.
  Eigen::VectorXd embed(const Eigen::VectorXd& x) const;
};

/// Affine calibration minimizing the prior-weighted cross-entropy
/// (gradient norm < 1e-8). `weights` may be empty.
metrics::AffineMap fit_calibration(std::span<const double> raw,
                                   std::span<const std::uint8_t> targets,
                                   std::span<const double> weights, double pi);

ScoreSet score_pipeline(const GenerativeBackend& backend,
                        const EmbeddingSet& set, const TrialIndex& trials);
ScoreSet score_pipeline(const GenerativeBackend& backend,
                        const EmbeddingSet& set, const TrialList& trials);

struct GenerativeOptions {
  /// Defaults to min(d, n_speakers - 1, 150).
  std::optional<std::size_t> lda_dim;
  bool balance = false;
  std::size_t min_speakers = 100;
  PldaFitOptions plda;
  double pi = metrics::kDefaultPrior;
  /// Calibration uses within-group training trials; non-targets are
  /// subsampled uniformly beyond this many trials.
  std::size_t max_calibration_trials = 300000;
  std::uint64_t seed = 0;
};

struct GenerativeTrainInfo {
  std::vector<std::string> groups;
  std::vector<double> plda_log_likelihood;
  std::size_t calibration_trials = 0;
};

/// Full classical recipe on `train`. Calibration trials come from
/// `calibration` when given, otherwise from `train`.
GenerativeBackend train_generative(const EmbeddingSet& train,
                                   const GenerativeOptions& options,
                                   const EmbeddingSet* calibration = nullptr,
                                   GenerativeTrainInfo* info = nullptr);

std::size_t default_lda_dim(std::size_t d, std::size_t n_speakers);

}  // namespace fairspk::generative
