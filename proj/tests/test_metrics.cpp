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

#include "fairspk/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include <json.hpp>

#include "fairspk/errors.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace fairspk;
using namespace fairspk::metrics;

namespace {

struct Scores {
  std::vector<double> llr;
  std::vector<std::uint8_t> tgt;
};

Scores random_scores(std::size_t n, std::uint64_t seed, double sep = 2.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Scores s;
  for (std::size_t i = 0; i < n; ++i) {
    const bool t = i % 3 == 0;
    s.tgt.push_back(t);
    s.llr.push_back(normal(rng) * 1.5 + (t ? sep : -sep) + 0.7);
  }
  return s;
}

// Two speakers per group, every trial within a group.
struct GroupToy {
  EmbeddingSet set;
  TrialIndex trials;
};

GroupToy group_toy(std::size_t groups, std::size_t speakers, std::size_t per_speaker) {
  std::vector<std::string> ids, spk, grp, src;
  std::vector<double> durs;
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t s = 0; s < speakers; ++s)
      for (std::size_t k = 0; k < per_speaker; ++k) {
        const auto sid = "g" + std::to_string(g) + "s" + std::to_string(s);
        ids.push_back(sid + "_" + std::to_string(k));
        spk.push_back(sid);
        grp.push_back("g" + std::to_string(g));
        src.push_back(sid + "_" + std::to_string(k));
        durs.push_back(10.0);
      }
  RowMatrixXf v = RowMatrixXf::Ones(static_cast<Eigen::Index>(ids.size()), 1);
  GroupToy toy{EmbeddingSet(ids, v, spk, grp, durs, src), {}};
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j)
      if (grp[i] == grp[j]) {
        toy.trials.enroll.push_back(i);
        toy.trials.test.push_back(j);
        toy.trials.target.push_back(spk[i] == spk[j]);
      }
  return toy;
}

}  // namespace

TEST_CASE("softplus and sigmoid are stable") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(std::isfinite(softplus(-800.0)));
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("uninformative scores cost the prior entropy") {
  const double pi = 0.05;
  const double h = -pi * std::log2(pi) - (1 - pi) * std::log2(1 - pi);
  CHECK(h == doctest::Approx(0.286397).epsilon(1e-6));
  const std::vector<double> zeros(10, 0.0);
  const std::vector<std::uint8_t> tgt = {1, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  CHECK(std::abs(weighted_cllr(zeros, tgt, pi) - h) < 1e-12);
  CHECK(std::abs(prior_entropy_bits(pi) - h) < 1e-12);
}

TEST_CASE("perfect system approaches zero Cllr") {
  const std::vector<double> llr = {1e3, 1e3, -1e3, -1e3};
  const std::vector<std::uint8_t> tgt = {1, 1, 0, 0};
  CHECK(weighted_cllr(llr, tgt, 0.05) < 1e-12);
}

TEST_CASE("Cllr matches a direct summation oracle") {
  const auto s = random_scores(100, 5);
  for (double pi : {0.05, 0.3, 0.5}) {
    const double got = weighted_cllr(s.llr, s.tgt, pi);
    CHECK(std::abs(got - oracle::cllr_bits(s.llr, s.tgt, pi)) < 1e-12);
  }
}

TEST_CASE("Cllr requires both classes") {
  const std::vector<double> llr = {1.0, 2.0};
  CHECK_THROWS_AS(weighted_cllr(llr, std::vector<std::uint8_t>{1, 1}, 0.05), DataError);
  CHECK_THROWS_AS(weighted_cllr(llr, std::vector<std::uint8_t>{1, 0}, 1.0), ConfigError);
}

TEST_CASE("weighted Cllr with unit weights equals the plain form") {
  const auto s = random_scores(60, 8);
  const std::vector<double> ones(s.llr.size(), 1.0);
  CHECK(weighted_cllr(s.llr, s.tgt, ones, 0.05) ==
        doctest::Approx(weighted_cllr(s.llr, s.tgt, 0.05)).epsilon(1e-14));
}

TEST_CASE("Cllr is monotone in single-trial shifts") {
  auto s = random_scores(50, 9);
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    const auto i = rng() % s.llr.size();
    const double before = weighted_cllr(s.llr, s.tgt, 0.05);
    s.llr[i] += 0.3;
    const double after = weighted_cllr(s.llr, s.tgt, 0.05);
    if (s.tgt[i])
      CHECK(after <= before);
    else
      CHECK(after >= before);
  }
}

TEST_CASE("min Cllr bounds, invariance and grid oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = random_scores(80, seed, 0.5 + 0.03 * static_cast<double>(seed));
    CHECK(min_cllr_affine(s.llr, s.tgt, 0.05) <= weighted_cllr(s.llr, s.tgt, 0.05) + 1e-12);
  }
  const auto s = random_scores(300, 42);
  const double base = min_cllr_affine(s.llr, s.tgt, 0.05);
  for (auto [c, d] : {std::pair{2.0, 3.0}, {-0.5, 1.0}, {10.0, -7.0}}) {
    std::vector<double> t(s.llr.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = c * s.llr[i] + d;
    CHECK(std::abs(min_cllr_affine(t, s.tgt, 0.05) - base) < 1e-9);
  }
  CHECK(std::abs(base - oracle::grid_min_cllr(s.llr, s.tgt, 0.05)) < 1e-4);
}

TEST_CASE("constant scores give the prior entropy as min Cllr") {
  const std::vector<double> llr(6, 3.0);
  const std::vector<std::uint8_t> tgt = {1, 0, 1, 0, 0, 0};
  CHECK(min_cllr_affine(llr, tgt, 0.05) == doctest::Approx(prior_entropy_bits(0.05)));
}

TEST_CASE("affine fit recovers inverted maps") {
  const auto s = random_scores(400, 17);
  const auto map = fit_affine(s.llr, s.tgt, {}, 0.05);
  std::vector<double> warped(s.llr.size());
  for (std::size_t i = 0; i < warped.size(); ++i) warped[i] = 2.0 * s.llr[i] + 3.0;
  const auto inv = fit_affine(warped, s.tgt, {}, 0.05);
  CHECK(inv.scale == doctest::Approx(map.scale / 2.0).epsilon(1e-6));
  CHECK(inv.offset == doctest::Approx(map.offset - 1.5 * map.scale).epsilon(1e-6));
}

TEST_CASE("Bayes threshold") {
  CHECK(bayes_threshold(0.05) == doctest::Approx(2.944439).epsilon(1e-6));
  CHECK(std::abs(bayes_threshold(0.05) - 2.94) < 5e-3);
  CHECK(bayes_threshold(0.5) == 0.0);
  CHECK(bayes_threshold(0.1) == doctest::Approx(2.1972).epsilon(1e-4));
  CHECK_THROWS_AS(bayes_threshold(0.0), ConfigError);
  CHECK_THROWS_AS(bayes_threshold(1.0), ConfigError);
}

TEST_CASE("error rates count with the accept-on-tie rule") {
  const std::vector<double> llr = {1, 2, 3, 4, 5, 6};
  const std::vector<std::uint8_t> tgt = {0, 0, 0, 0, 1, 1};
  auto r = error_rates(llr, tgt, 2.5);
  CHECK(r.p_fa == 0.5);
  CHECK(r.p_miss == 0.0);
  r = error_rates(llr, tgt, -std::numeric_limits<double>::infinity());
  CHECK(r.p_fa == 1.0);
  CHECK(r.p_miss == 0.0);
  r = error_rates(llr, tgt, std::numeric_limits<double>::infinity());
  CHECK(r.p_fa == 0.0);
  CHECK(r.p_miss == 1.0);
  r = error_rates(llr, tgt, 4.0);
  CHECK(r.p_fa == 0.25);
  r = error_rates(llr, tgt, 5.0);
  CHECK(r.p_miss == 0.0);
}

TEST_CASE("FDR") {
  const std::vector<ErrorRates> same = {{0.1, 0.2}, {0.1, 0.2}, {0.1, 0.2}};
  CHECK(fdr(same, 0.95) == 1.0);
  const std::vector<ErrorRates> usa_india = {{0.0091, 0.0569}, {0.0863, 0.0558}};
  CHECK(fdr(usa_india, 0.95) == doctest::Approx(0.926605).epsilon(1e-9));
  const std::vector<ErrorRates> fa_only = {{0.0, 0.3}, {0.9, 0.3}};
  CHECK(fdr(fa_only, 0.0) == 1.0);
  const std::vector<ErrorRates> miss_only = {{0.2, 0.0}, {0.2, 0.4}};
  CHECK(fdr(miss_only, 0.0) == doctest::Approx(0.6));
  CHECK_THROWS_AS(fdr(std::vector<ErrorRates>{{0.1, 0.1}}, 0.95), DataError);
  CHECK_THROWS_AS(fdr(usa_india, 1.5), ConfigError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<ErrorRates> r(2 + rng() % 5);
    for (auto& e : r) e = {u(rng), u(rng)};
    const double v = fdr(r, u(rng));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("bootstrap intervals") {
  const auto toy = group_toy(1, 6, 3);
  const Statistic mean_llr = [](std::span<const double> llr, std::span<const std::uint8_t>,
                                std::span<const double> w) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < llr.size(); ++i) {
      a += w[i] * llr[i];
      b += w[i];
    }
    return a / b;
  };
  BootstrapOptions opts;
  opts.n_boot = 200;
  opts.seed = 4;
  const std::vector<double> flat(toy.trials.size(), 1.25);
  const auto zero = bootstrap_ci(toy.set, toy.trials, flat, mean_llr, opts);
  CHECK(zero.lo == doctest::Approx(1.25));
  CHECK(zero.hi == doctest::Approx(1.25));

  std::vector<double> llr(toy.trials.size());
  for (std::size_t t = 0; t < llr.size(); ++t) llr[t] = toy.trials.target[t] ? 3.0 + t % 4 : -2.0 + t % 3;
  const CllrStatistic cllr(llr, toy.trials.target, 0.05);
  const auto ci = bootstrap_ci(toy.set, toy.trials, llr, cllr, opts);
  CHECK(ci.lo <= ci.hi);
  const auto again = bootstrap_ci(toy.set, toy.trials, llr, cllr, opts);
  CHECK(again.lo == ci.lo);
  CHECK(again.hi == ci.hi);

  const std::vector<double> ones(llr.size(), 1.0);
  CHECK(cllr(llr, toy.trials.target, ones) ==
        doctest::Approx(weighted_cllr(llr, toy.trials.target, 0.05)).epsilon(1e-12));
}

TEST_CASE("evaluate composes per-group metrics") {
  auto toy = group_toy(2, 4, 3);
  const auto groups = build_group_assignment(toy.set, 1);
  // Scores depend only on position within the group, so groups match exactly.
  std::vector<double> llr(toy.trials.size());
  const std::size_t per_group = toy.trials.size() / 2;
  for (std::size_t t = 0; t < llr.size(); ++t)
    llr[t] = (toy.trials.target[t] ? 4.0 : -3.0) + 0.37 * static_cast<double>(t % per_group % 5);
  EvaluateOptions opts;
  opts.bootstrap.n_boot = 50;
  const auto report = evaluate(toy.set, toy.trials, llr, groups, opts);
  REQUIRE(report.groups.size() == 2);
  REQUIRE(report.fdr.has_value());
  CHECK(*report.fdr == 1.0);
  CHECK(report.threshold_nats == doctest::Approx(2.9444).epsilon(1e-4));
  for (const auto& g : report.groups) {
    CHECK(g.cal_loss_bits == g.cllr_bits - g.min_cllr_bits);
    CHECK(g.cal_loss_bits >= -1e-10);
    CHECK(g.cllr_ci.lo <= g.cllr_ci.hi);
  }

  const auto json = nlohmann::json::parse(report_to_json(report, {{"pi", "0.05"}}));
  CHECK(json["fdr"].get<double>() == 1.0);
  CHECK(json["config"]["pi"] == "0.05");

  auto one = group_toy(1, 4, 3);
  std::vector<double> l1(one.trials.size());
  for (std::size_t t = 0; t < l1.size(); ++t) l1[t] = one.trials.target[t] ? 2.0 + t % 3 : -1.0 - t % 2;
  const auto single = evaluate(one.set, one.trials, l1, build_group_assignment(one.set, 1), opts);
  CHECK_FALSE(single.fdr.has_value());
  CHECK(nlohmann::json::parse(report_to_json(single))["fdr"].is_null());

  // A trial spanning groups is rejected.
  auto cross = toy.trials;
  cross.enroll.push_back(0);
  cross.test.push_back(toy.set.size() - 1);
  cross.target.push_back(0);
  auto cross_llr = llr;
  cross_llr.push_back(0.0);
  CHECK_THROWS_AS(evaluate(toy.set, cross, cross_llr, groups, opts), DataError);
}

TEST_CASE("histogram densities integrate to one") {
  const auto s = random_scores(500, 2);
  const auto h = score_histogram(s.llr, s.tgt, 40, -8.0, 8.0);
  REQUIRE(h.bin_centers.size() == 40);
  const double width = 16.0 / 40.0;
  double tar = 0.0, non = 0.0;
  for (std::size_t b = 0; b < 40; ++b) {
    tar += h.tar_density[b] * width;
    non += h.non_density[b] * width;
  }
  CHECK(tar == doctest::Approx(1.0));
  CHECK(non == doctest::Approx(1.0));
}
