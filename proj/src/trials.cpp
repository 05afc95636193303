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

#include "fairspk/trials.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fairspk/errors.hpp"

namespace fairspk::trials {

namespace {

double speech_after(const std::vector<SpeechRegion>& regions, double t) {
  double total = 0.0;
  for (const auto& r : regions)
    if (r.end_s > t) total += r.end_s - std::max(r.start_s, t);
  return total;
}

// Latest offset from which `target` seconds of speech remain.
double latest_start(const std::vector<SpeechRegion>& regions, double target) {
  double remaining = target;
  for (auto it = regions.rbegin(); it != regions.rend(); ++it) {
    const double len = it->end_s - it->start_s;
    if (len >= remaining) return it->end_s - remaining;
    remaining -= len;
  }
  return regions.front().start_s;
}

Chunk cut_chunk(const std::vector<SpeechRegion>& regions, double start,
                double target) {
  Chunk c;
  c.start_s = start;
  double remaining = target;
  for (const auto& r : regions) {
    if (r.end_s <= start) continue;
    const double from = std::max(r.start_s, start);
    const double take = std::min(r.end_s - from, remaining);
    c.speech_s += take;
    remaining -= take;
    c.end_s = from + take;
    if (remaining <= 0.0) break;
  }
  return c;
}

}  // namespace

FileChunks plan_chunks(const std::string& file_id,
                       const std::vector<SpeechRegion>& regions,
                       double target_speech_s, std::size_t n_chunks) {
  if (n_chunks == 0) throw ConfigError("n_chunks must be >= 1");
  if (!(target_speech_s > 0.0))
    throw ConfigError("target speech duration must be positive");
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    if (!(r.end_s > r.start_s) || r.start_s < 0.0)
      throw DataError("file " + file_id + ": invalid speech region");
    if (i > 0 && r.start_s < regions[i - 1].end_s)
      throw DataError("file " + file_id +
                      ": speech regions must be sorted and non-overlapping");
  }
  const double total = regions.empty() ? 0.0 : speech_after(regions, 0.0);
  // Relative slack so that a file with exactly the target amount of speech is
  // accepted despite summation rounding.
  if (total < target_speech_s * (1.0 - 1e-12))
    throw DataError("file " + file_id + ": insufficient speech (" +
                    format_double(total) + " s < " +
                    format_double(target_speech_s) + " s)");

  const double last = std::max(0.0, latest_start(regions, target_speech_s));
  FileChunks out;
  out.file_id = file_id;
  out.chunks.reserve(n_chunks);
  for (std::size_t k = 0; k < n_chunks; ++k) {
    const double start =
        n_chunks == 1 ? 0.0
                      : last * static_cast<double>(k) /
                            static_cast<double>(n_chunks - 1);
    auto c = cut_chunk(regions, start, target_speech_s);
    c.chunk_id = file_id + "_c" + std::to_string(k);
    out.chunks.push_back(std::move(c));
  }
  return out;
}

ChunkPlan plan_all_chunks(
    const std::map<std::string, std::vector<SpeechRegion>>& regions_by_file,
    double target_speech_s, std::size_t n_chunks) {
  ChunkPlan plan;
  plan.reserve(regions_by_file.size());
  for (const auto& [file, regions] : regions_by_file)
    plan.push_back(plan_chunks(file, regions, target_speech_s, n_chunks));
  return plan;
}

TrialIndex build_trial_index(const EmbeddingSet& set,
                             const TrialOptions& options) {
  TrialIndex out;
  const auto& files = set.source_files();
  const auto& speakers = set.speakers();
  const auto& groups = set.groups();
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = i + 1; j < set.size(); ++j) {
      if (files[i] == files[j]) continue;
      if (options.within_group && groups[i] != groups[j]) continue;
      out.enroll.push_back(i);
      out.test.push_back(j);
      out.target.push_back(speakers[i] == speakers[j] ? 1 : 0);
    }
  }
  return out;
}

TrialList build_trials(const EmbeddingSet& set, const TrialOptions& options) {
  const auto idx = build_trial_index(set, options);
  TrialList out;
  out.reserve(idx.size());
  for (std::size_t t = 0; t < idx.size(); ++t)
    out.push_back({set.ids()[idx.enroll[t]], set.ids()[idx.test[t]],
                   idx.target[t] != 0});
  return out;
}

std::vector<double> sample_training_durations(std::size_t n, double min_s,
                                              double max_s,
                                              std::uint64_t seed) {
  if (!(min_s > 0.0)) throw ConfigError("min duration must be positive");
  if (max_s < min_s) throw ConfigError("max duration must be >= min duration");
  if (min_s == max_s) return std::vector<double>(n, min_s);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(std::log(min_s), std::log(max_s));
  std::vector<double> out(n);
  for (auto& v : out) v = std::clamp(std::exp(u(rng)), min_s, max_s);
  return out;
}

std::map<std::string, std::vector<SpeechRegion>> load_speech_regions(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file " + path.string());
  std::map<std::string, std::vector<SpeechRegion>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string file, start, end;
    SpeechRegion r;
    if (!std::getline(fields, file, '\t') || !std::getline(fields, start, '\t') ||
        !std::getline(fields, end, '\t') ||
        std::from_chars(start.data(), start.data() + start.size(), r.start_s)
                .ec != std::errc() ||
        std::from_chars(end.data(), end.data() + end.size(), r.end_s).ec !=
            std::errc()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected 'file_id<TAB>start_s<TAB>end_s'");
    }
    out[file].push_back(r);
  }
  return out;
}

void save_chunk_plan(const ChunkPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open output file " + path.string());
  for (const auto& f : plan)
    for (const auto& c : f.chunks)
      out << c.chunk_id << '\t' << f.file_id << '\t' << format_double(c.start_s)
          << '\t' << format_double(c.speech_s) << '\n';
}

}  // namespace fairspk::trials
