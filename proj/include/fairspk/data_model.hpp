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
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace fairspk {

using RowMatrixXf =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Reserved group label that absorbs groups with too few speakers.
inline constexpr std::string_view kOtherGroup = "other";

/// Table of fixed-dimension speaker embeddings with per-sample metadata.
///
/// Vectors are stored as 32-bit floats, row-major, one row per sample; this is
/// the precision of the binary file format, so save/load is lossless.
/// Instances are validated on construction and immutable afterwards.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  EmbeddingSet(std::vector<std::string> ids, RowMatrixXf vectors,
               std::vector<std::string> speakers,
               std::vector<std::string> groups, std::vector<double> durations,
               std::vector<std::string> source_files);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }
  bool empty() const { return ids_.empty(); }

  const std::vector<std::string>& ids() const { return ids_; }
  const RowMatrixXf& vectors() const { return vectors_; }
  const std::vector<std::string>& speakers() const { return speakers_; }
  const std::vector<std::string>& groups() const { return groups_; }
  const std::vector<double>& durations() const { return durations_; }
  const std::vector<std::string>& source_files() const { return source_files_; }

  /// Row `i` promoted to double precision.
  Eigen::VectorXd vector(std::size_t i) const;
  /// All rows promoted to double precision (n x d).
  Eigen::MatrixXd matrix() const;

  std::optional<std::size_t> find(std::string_view id) const;
  /// Throws DataError for unknown ids.
  std::size_t index_of(std::string_view id) const;

  /// Distinct speakers in first-appearance order.
  std::vector<std::string> speaker_list() const;

  EmbeddingSet subset(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<std::string> ids_;
  RowMatrixXf vectors_;
  std::vector<std::string> speakers_;
  std::vector<std::string> groups_;
  std::vector<double> durations_;
  std::vector<std::string> source_files_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Trial {
  std::string enroll;
  std::string test;
  bool target = false;

  bool operator==(const Trial&) const = default;
};

using TrialList = std::vector<Trial>;

/// Trials resolved to row indices of an EmbeddingSet.
struct TrialIndex {
  std::vector<std::size_t> enroll;
  std::vector<std::size_t> test;
  std::vector<std::uint8_t> target;

  std::size_t size() const { return enroll.size(); }
};

/// Resolves ids and checks the trial invariants: distinct sides, and labels
/// consistent with speaker metadata.
TrialIndex resolve_trials(const EmbeddingSet& set, const TrialList& trials);

/// Per-trial raw scores and calibrated natural-log LLRs.
struct ScoreSet {
  std::vector<double> raw;
  std::vector<double> llr;

  std::size_t size() const { return llr.size(); }
};

/// Partition of sample indices into groups.
struct GroupAssignment {
  std::vector<std::string> labels;                 // sorted, unique
  std::vector<std::vector<std::size_t>> members;   // parallel to labels
  std::vector<std::size_t> group_of;               // per sample

  std::size_t num_groups() const { return labels.size(); }
  std::optional<std::size_t> find(std::string_view label) const;
};

/// Groups with at least `min_speakers` distinct speakers keep their label; the
/// rest are merged into kOtherGroup.
GroupAssignment build_group_assignment(const EmbeddingSet& set,
                                       std::size_t min_speakers = 100);

// File I/O. Loading detects the binary magic and falls back to text.
EmbeddingSet load_embeddings(const std::filesystem::path& path);
void save_embeddings_text(const EmbeddingSet& set,
                          const std::filesystem::path& path);
void save_embeddings_binary(const EmbeddingSet& set,
                            const std::filesystem::path& path);

TrialList load_trials(const std::filesystem::path& path);
void save_trials(const TrialList& trials, const std::filesystem::path& path);

struct ScoredTrials {
  TrialList trials;
  ScoreSet scores;
};

ScoredTrials load_scores(const std::filesystem::path& path);
void save_scores(const TrialList& trials, const ScoreSet& scores,
                 const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);
std::string format_float(float value);

}  // namespace fairspk
