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
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairspk/config.hpp"
#include "fairspk/data_model.hpp"

namespace fairspk::synthetic {

struct GroupSpec {
  std::string name;
  std::size_t speakers = 0;
  Eigen::VectorXd shift;      // mean offset of the group's speaker means
  double within_scale = 1.0;  // multiplier on the within-speaker covariance
};

/// Known two-covariance generator with per-group bias knobs.
///
/// Sample noise covariance is within_scale_g * (reference_duration / dur)^
/// duration_exponent * W, so a positive exponent makes short samples noisier.
struct SynthConfig {
  std::size_t dim = 20;
  std::vector<GroupSpec> groups;
  std::size_t samples_per_speaker = 8;
  std::size_t files_per_speaker = 4;
  Eigen::MatrixXd between;  // B_true
  Eigen::MatrixXd within;   // W_true
  double duration_exponent = 0.0;
  double reference_duration = 16.0;
  double min_duration = 4.0;
  double max_duration = 240.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t group_index(const std::string& name) const;
  std::size_t total_speakers() const;
};

/// Isotropic covariances and unshifted groups.
SynthConfig make_config(std::size_t dim, const std::vector<std::string>& names,
                        const std::vector<std::size_t>& speakers,
                        double between_var = 1.0, double within_var = 1.0,
                        std::uint64_t seed = 0);

/// Speaker ids are "<group>_s<k>", files "<speaker>_f<j>", samples
/// "<file>_c<m>"; samples are dealt round-robin over a speaker's files.
/// Each speaker draws from its own seed derived from (seed, speaker index).
EmbeddingSet generate(const SynthConfig& cfg);

/// Within-covariance multiplier of a sample from `group` with `duration_s`.
double noise_scale(const SynthConfig& cfg, std::size_t group, double duration_s);

/// Exact LLR under the group's true model. B and W are diagonalized jointly
/// once, so each evaluation is O(d) and supports different noise scales on
/// the two sides.
class OracleScorer {
 public:
  explicit OracleScorer(const SynthConfig& cfg);

  double operator()(std::size_t group, const Eigen::VectorXd& x1,
                    const Eigen::VectorXd& x2, double dur1_s,
                    double dur2_s) const;

  /// Scores trials of a generated set; both sides must share a group.
  std::vector<double> score(const EmbeddingSet& set,
                            const TrialIndex& trials) const;

 private:
  SynthConfig cfg_;
  Eigen::MatrixXd basis_;    // columns v with v'Wv = 1, v'Bv = lambda
  Eigen::VectorXd lambda_;
};

/// Single-trial convenience wrapper; durations default to the reference.
double oracle_llr(const SynthConfig& cfg, const std::string& group,
                  const Eigen::VectorXd& x1, const Eigen::VectorXd& x2);

/// Two groups, "majority" and "minority"; the minority holds
/// `minority_fraction` of all speakers and is offset by `shift_magnitude`
/// along a random unit direction drawn from the config seed.
SynthConfig inject_skew(const SynthConfig& cfg, double minority_fraction,
                        double shift_magnitude);

/// Builds a config from flat keys (dim, groups, speakers_per_group,
/// shift_magnitudes, within_scales, between_var, within_var,
/// samples_per_speaker, files_per_speaker, duration_exponent,
/// reference_duration, min_duration, max_duration, seed).
SynthConfig config_from_keys(const KeyValueConfig& kv);

}  // namespace fairspk::synthetic
