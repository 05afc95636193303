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
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairspk/data_model.hpp"
#include "fairspk/generative.hpp"
#include "fairspk/metrics.hpp"

namespace fairspk::discriminative {

/// PLDA functional form with free parameters:
///   f_i = length_normalize(L (x_i - m))
///   raw = f1' S f2 + f1' G f1 + f2' G f2 + c'(f1 + f2) + k
/// where S and G are the symmetric parts of `cross` and `quadratic`.
struct DiscriminativeBackend {
  Eigen::VectorXd mean;       // m, d
  Eigen::MatrixXd lda;        // L, p x d
  Eigen::MatrixXd cross;      // p x p
  Eigen::MatrixXd quadratic;  // p x p
  Eigen::VectorXd linear;     // c, p
  double constant = 0.0;      // k
  double cal_a = 1.0;
  double cal_b = 0.0;

  std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(lda.rows()); }

  Eigen::VectorXd embed(const Eigen::VectorXd& x) const;
  double raw(const Eigen::VectorXd& f1, const Eigen::VectorXd& f2) const;
};

/// Condition- and duration-dependent calibration:
///   z_i = [tanh(A f_i + a0); ln dur_i]
///   phi = [z_1 + z_2; z_1 .* z_2]
///   alpha = softplus(head_a' phi + bias_a),  beta = head_b' phi + bias_b
struct ConditionCalibrator {
  Eigen::MatrixXd weights;  // q x p
  Eigen::VectorXd bias;     // q
  Eigen::VectorXd head_a;   // 2 (q + 1)
  double bias_a = 0.0;
  Eigen::VectorXd head_b;   // 2 (q + 1)
  double bias_b = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(weights.rows()); }

  /// Zero condition network whose output reproduces the global (cal_a, cal_b).
  static ConditionCalibrator neutral(std::size_t p, std::size_t q, double cal_a,
                                     double cal_b);
  /// Same as neutral() but with small random condition weights so that the
  /// heads receive informative features once training starts.
  static ConditionCalibrator initialize(std::size_t p, std::size_t q,
                                        double cal_a, double cal_b,
                                        double init_scale, std::uint64_t seed);

  Eigen::VectorXd features(const Eigen::VectorXd& f, double duration_s) const;
  struct Affine {
    double alpha = 1.0;
    double beta = 0.0;
  };
  Affine calibrate(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2) const;
};

/// Inverse of softplus, for mapping a positive scale to a head bias.
double inverse_softplus(double y);

/// DPLDA when `condition` is empty, DCAPLDA otherwise.
struct Model {
  DiscriminativeBackend backend;
  std::optional<ConditionCalibrator> condition;

  double score(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
               double dur1_s, double dur2_s) const;
};

/// Closed-form expansion of the two-covariance LLR; scores match the
/// generative pipeline.
DiscriminativeBackend init_from_generative(const generative::GenerativeBackend& gen);

double dplda_score(const DiscriminativeBackend& bk, const Eigen::VectorXd& x1,
                   const Eigen::VectorXd& x2);
double dcaplda_score(const DiscriminativeBackend& bk,
                     const ConditionCalibrator& cond, const Eigen::VectorXd& x1,
                     const Eigen::VectorXd& x2, double dur1_s, double dur2_s);

/// Batch scoring over resolved trials.
ScoreSet score(const Model& model, const EmbeddingSet& set,
               const TrialIndex& trials);

/// Batches with the same number of samples from every group.
///
/// Each epoch has ceil(max_g n_g / (batch_size / G)) batches. Every group is
/// traversed in a fresh shuffled order that keeps a speaker's samples
/// contiguous (so batches contain same-speaker pairs); groups that run out
/// start a reshuffled re-traversal.
class BalancedBatcher {
 public:
  BalancedBatcher(const GroupAssignment& groups,
                  const std::vector<std::string>& speakers,
                  std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  std::size_t per_group() const { return per_group_; }
  /// Batches of sample indices for the next epoch.
  std::vector<std::vector<std::size_t>> next_epoch();

 private:
  std::vector<std::size_t> shuffled(std::size_t group);

  std::vector<std::vector<std::vector<std::size_t>>> by_speaker_;  // group -> speaker -> samples
  std::size_t per_group_ = 0;
  std::size_t batches_per_epoch_ = 0;
  std::mt19937_64 rng_;
};

BalancedBatcher make_balanced_batches(const GroupAssignment& groups,
                                      const std::vector<std::string>& speakers,
                                      std::size_t batch_size,
                                      std::uint64_t seed);

enum class Balance { kNone, kByGroup };

struct TrainConfig {
  double pi = metrics::kDefaultPrior;
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  Balance balance = Balance::kNone;
  std::size_t min_speakers = 100;
  double clip_norm = 10.0;
  /// Scale of the random condition-network weights at initialization.
  double condition_init_scale = 0.5;

  void validate(std::size_t n_groups) const;
};

/// Pairs inside a batch: all positions a < b except pairs sharing a source
/// file (which covers a sample paired with itself).
TrialIndex batch_trials(const EmbeddingSet& set,
                        std::span<const std::size_t> batch);

/// Prior-weighted cross-entropy in nats over the batch's trials; a class
/// with no trials contributes nothing. Fills `gradient` (same layout as the
/// model) when non-null.
double batch_loss(const Model& model, const EmbeddingSet& set,
                  std::span<const std::size_t> batch, double pi,
                  Model* gradient = nullptr);

/// Flat parameter views, in a fixed block order.
Eigen::VectorXd flatten(const Model& model);
void unflatten(const Eigen::VectorXd& flat, Model& model);
std::vector<std::pair<std::string, std::size_t>> parameter_blocks(const Model& model);

/// One SGD step with global-norm clipping. Returns the pre-clipping norm.
double sgd_step(Model& model, const Model& gradient, double learning_rate,
                double clip_norm);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_block;
};

/// Central differences against the analytic gradient for every parameter.
/// Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator, so
/// vanishing gradients are compared in absolute terms.
GradientCheckResult gradient_check(const Model& model, const EmbeddingSet& set,
                                   std::span<const std::size_t> batch, double pi,
                                   double epsilon = 1e-5);

struct EpochRecord {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::optional<double> train_loss;  // absent for the initial evaluation
  double dev_cllr = 0.0;
  /// Per group: min and max sample count over the epoch's batches.
  std::vector<std::size_t> batch_count_min;
  std::vector<std::size_t> batch_count_max;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> log;
  std::vector<std::string> groups;
  std::uint64_t best_seed = 0;
  std::size_t best_epoch = 0;
  double best_dev_cllr = 0.0;
};

/// Dev Cllr of a model over the dev set's within-group trials.
double dev_cllr(const Model& model, const EmbeddingSet& dev,
                const TrialIndex& trials, double pi);

/// SGD on within-batch trials for every seed; returns the parameters with the
/// lowest dev Cllr over all (seed, epoch) pairs, epoch 0 being the
/// initialization. DCAPLDA is trained when `init.condition` is set; its
/// condition weights are re-drawn per seed.
TrainResult train(const Model& init, const EmbeddingSet& train_set,
                  const EmbeddingSet& dev_set, const TrainConfig& config);

/// JSON line for one epoch record.
std::string epoch_record_json(const EpochRecord& record,
                              const std::vector<std::string>& groups);

}  // namespace fairspk::discriminative
