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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fairspk/data_model.hpp"

namespace fairspk::trials {

struct SpeechRegion {
  double start_s = 0.0;
  double end_s = 0.0;
};

struct Chunk {
  std::string chunk_id;
  double start_s = 0.0;   // offset in the original file
  double end_s = 0.0;     // where the accumulated speech reaches the target
  double speech_s = 0.0;
};

/// Chunks cut from one original file.
struct FileChunks {
  std::string file_id;
  std::string speaker;  // may be empty when unknown
  std::vector<Chunk> chunks;
};

using ChunkPlan = std::vector<FileChunks>;

/// Plans `n_chunks` chunks of `target_speech_s` seconds of speech for one file.
///
/// Start offsets are evenly spaced, endpoints included, over [0, latest start
/// from which the target is still reachable]. Speech is accumulated by walking
/// the regions forward from the start offset; gaps do not count. Chunks may
/// overlap. Regions must be sorted and non-overlapping.
FileChunks plan_chunks(const std::string& file_id,
                       const std::vector<SpeechRegion>& regions,
                       double target_speech_s, std::size_t n_chunks);

/// Plans every file of a region table (file id -> regions).
ChunkPlan plan_all_chunks(
    const std::map<std::string, std::vector<SpeechRegion>>& regions_by_file,
    double target_speech_s, std::size_t n_chunks);

struct TrialOptions {
  /// Only pair samples carrying the same group label.
  bool within_group = false;
};

/// All unordered pairs (i < j, in set order) except pairs sharing a source
/// file. Labels come from speaker ids.
TrialList build_trials(const EmbeddingSet& set, const TrialOptions& options = {});

/// Index form of build_trials, for callers that score directly.
TrialIndex build_trial_index(const EmbeddingSet& set,
                             const TrialOptions& options = {});

/// Log-uniform durations on [min_s, max_s]. min_s == max_s yields a constant.
std::vector<double> sample_training_durations(std::size_t n, double min_s,
                                              double max_s,
                                              std::uint64_t seed);

// Speech-region TSV: file_id<TAB>start_s<TAB>end_s
std::map<std::string, std::vector<SpeechRegion>> load_speech_regions(
    const std::filesystem::path& path);
// Chunk plan TSV: chunk_id<TAB>file_id<TAB>start_s<TAB>speech_s
void save_chunk_plan(const ChunkPlan& plan, const std::filesystem::path& path);

}  // namespace fairspk::trials
