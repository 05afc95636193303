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

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fairspk/discriminative.hpp"
#include "fairspk/generative.hpp"

namespace fairspk {

enum class ModelKind { kPlda, kDplda, kDcaplda };

std::string to_string(ModelKind kind);
/// Accepts "plda", "dplda", "dcaplda".
ModelKind parse_model_kind(const std::string& text);

/// A trained backend plus the configuration that produced it. Exactly one of
/// `generative` / `discriminative` is set, matching `kind`.
struct StoredModel {
  ModelKind kind = ModelKind::kPlda;
  std::optional<generative::GenerativeBackend> generative;
  std::optional<discriminative::Model> discriminative;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::string> groups;

  /// Scores a trial with whichever backend is stored.
  ScoreSet score(const EmbeddingSet& set, const TrialIndex& trials) const;
};

/// Versioned little-endian binary file: magic "FSMODEL", u32 version, u8 kind,
/// config echo, group labels, then named f64 tensors (row-major). Identical
/// models serialize to identical bytes.
void save_model(const std::filesystem::path& path, const StoredModel& model);
StoredModel load_model(const std::filesystem::path& path);

/// Human-readable dump: kind, config, dimensions and a few statistics.
std::string model_summary(const StoredModel& model);

}  // namespace fairspk
