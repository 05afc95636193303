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

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fairspk/errors.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace fairspk;
using namespace fairspk::trials;

TEST_CASE("contiguous speech spaces chunk starts evenly") {
  const auto fc = plan_chunks("f", {{0.0, 64.0}}, 16.0, 4);
  REQUIRE(fc.chunks.size() == 4);
  const double starts[] = {0, 16, 32, 48};
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(fc.chunks[k].start_s == doctest::Approx(starts[k]).epsilon(1e-12));
    CHECK(fc.chunks[k].speech_s == doctest::Approx(16.0).epsilon(1e-12));
  }
  CHECK(fc.chunks[0].chunk_id == "f_c0");
}

TEST_CASE("chunks walk over non-speech gaps") {
  const auto fc = plan_chunks("f", {{0.0, 10.0}, {20.0, 30.0}}, 16.0, 1);
  REQUIRE(fc.chunks.size() == 1);
  CHECK(fc.chunks[0].start_s == doctest::Approx(0.0));
  CHECK(fc.chunks[0].end_s == doctest::Approx(26.0));
  CHECK(fc.chunks[0].speech_s == doctest::Approx(16.0));
}

TEST_CASE("insufficient speech names the file") {
  CHECK_THROWS_WITH_AS(plan_chunks("short_file", {{0.0, 10.0}}, 16.0, 4),
                       doctest::Contains("short_file"), DataError);
}

TEST_CASE("chunk speech stays within tolerance on fragmented regions") {
  std::vector<SpeechRegion> regions;
  for (int k = 0; k < 30; ++k) regions.push_back({k * 5.0, k * 5.0 + 3.2});
  const auto fc = plan_chunks("frag", regions, 16.0, 4);
  REQUIRE(fc.chunks.size() == 4);
  for (const auto& c : fc.chunks) CHECK(std::abs(c.speech_s - 16.0) <= 1.6);
  CHECK(plan_chunks("frag", regions, 16.0, 4).chunks.back().start_s ==
        fc.chunks.back().start_s);
}

TEST_CASE("toy trial list has 24 trials") {
  const auto set = testutil::toy_set(2, 2, 2, 3);
  const auto trials = build_trials(set);
  CHECK(trials.size() == 24);
  const auto counts = oracle::combinatorial_counts(set);
  CHECK(counts.total == 24);
  std::size_t s0_targets = 0;
  for (const auto& t : trials)
    if (t.target && set.speakers()[set.index_of(t.enroll)] == "s0") ++s0_targets;
  CHECK(s0_targets == 4);
}

TEST_CASE("single file yields no trials") {
  const auto set = testutil::toy_set(1, 1, 5, 2);
  CHECK(build_trials(set).empty());
}

TEST_CASE("trials match exhaustive enumeration and exclude same-file pairs") {
  const auto set = testutil::toy_set(5, 3, 3, 2, 4);
  const auto trials = build_trials(set);
  const auto expected = oracle::enumerate_pairs(set);
  std::set<std::pair<std::string, std::string>> got;
  for (const auto& t : trials) {
    const auto i = set.index_of(t.enroll), j = set.index_of(t.test);
    CHECK(i < j);
    CHECK(set.source_files()[i] != set.source_files()[j]);
    CHECK(t.target == (set.speakers()[i] == set.speakers()[j]));
    auto a = t.enroll, b = t.test;
    if (b < a) std::swap(a, b);
    got.emplace(a, b);
  }
  CHECK(got == expected);
  CHECK(got.size() == trials.size());
}

TEST_CASE("within-group trials only pair matching labels") {
  const auto set = testutil::toy_set(6, 2, 2, 2, 3, 2);
  const auto trials = build_trials(set, {.within_group = true});
  for (const auto& t : trials)
    CHECK(set.groups()[set.index_of(t.enroll)] == set.groups()[set.index_of(t.test)]);
  const auto index = build_trial_index(set, {.within_group = true});
  CHECK(index.size() == trials.size());
}

TEST_CASE("training durations are log-uniform") {
  const auto d = sample_training_durations(100000, 4.0, 240.0, 3);
  REQUIRE(d.size() == 100000);
  CHECK(*std::min_element(d.begin(), d.end()) >= 4.0);
  CHECK(*std::max_element(d.begin(), d.end()) <= 240.0);
  const double mid = std::sqrt(4.0 * 240.0);
  const auto below = std::count_if(d.begin(), d.end(), [&](double x) { return x < mid; });
  CHECK(static_cast<double>(below) / 1e5 == doctest::Approx(0.5).epsilon(0.02));
  CHECK(sample_training_durations(10, 4.0, 240.0, 3) ==
        sample_training_durations(10, 4.0, 240.0, 3));
}

TEST_CASE("degenerate duration range") {
  const auto d = sample_training_durations(5, 16.0, 16.0, 1);
  CHECK(d == std::vector<double>(5, 16.0));
  CHECK_THROWS_AS(sample_training_durations(5, 0.0, 16.0, 1), ConfigError);
  CHECK_THROWS_AS(sample_training_durations(5, 20.0, 16.0, 1), ConfigError);
}
