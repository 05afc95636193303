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

#include "fairspk/generative.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

#include "fairspk/errors.hpp"
#include "fairspk/synthetic.hpp"
#include "fairspk/trials.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace fairspk;
using namespace fairspk::generative;

namespace {

GroupAssignment sized_groups(const std::vector<std::size_t>& sizes) {
  GroupAssignment ga;
  std::size_t next = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    ga.labels.push_back("g" + std::to_string(g));
    ga.members.emplace_back();
    for (std::size_t k = 0; k < sizes[g]; ++k) {
      ga.members.back().push_back(next++);
      ga.group_of.push_back(g);
    }
  }
  return ga;
}

// 1-D two-covariance data: u_s ~ N(0, b), x = u_s + N(0, w).
struct OneDim {
  Eigen::MatrixXd x;
  std::vector<std::string> spk;
};

OneDim one_dim(std::size_t speakers, std::size_t per, double b, double w,
               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  OneDim out;
  out.x.resize(static_cast<Eigen::Index>(speakers * per), 1);
  Eigen::Index r = 0;
  for (std::size_t s = 0; s < speakers; ++s) {
    const double u = std::sqrt(b) * normal(rng);
    for (std::size_t k = 0; k < per; ++k, ++r) {
      out.x(r, 0) = u + std::sqrt(w) * normal(rng);
      out.spk.push_back("s" + std::to_string(s));
    }
  }
  return out;
}

Eigen::MatrixXd random_spd(Eigen::Index d, std::mt19937_64& rng, double ridge) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  return a * a.transpose() / static_cast<double>(d) +
         ridge * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("balancing weights are inverse to group size") {
  const auto w = compute_balancing_weights(sized_groups({90, 10}));
  CHECK(w.front() == doctest::Approx(1.0 / 180));
  CHECK(w.back() == doctest::Approx(1.0 / 20));
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < 90; ++i) a += w[i];
  for (std::size_t i = 90; i < 100; ++i) b += w[i];
  CHECK(a == doctest::Approx(0.5));
  CHECK(b == doctest::Approx(0.5));

  const auto eq = compute_balancing_weights(sized_groups({5, 5, 5}));
  CHECK(std::all_of(eq.begin(), eq.end(), [&](double v) { return v == eq[0]; }));
  const auto one = compute_balancing_weights(sized_groups({8}));
  CHECK(one[3] == doctest::Approx(1.0 / 8));

  auto empty = sized_groups({3});
  empty.labels.push_back("void");
  empty.members.emplace_back();
  CHECK_THROWS_AS(compute_balancing_weights(empty), DataError);
}

TEST_CASE("LDA finds an axis-aligned separation") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(200, 3);
  std::vector<std::string> spk;
  for (Eigen::Index i = 0; i < 200; ++i) {
    const bool second = i >= 100;
    x.row(i) << normal(rng) + (second ? 6.0 : 0.0), normal(rng), normal(rng);
    spk.push_back(second ? "b" : "a");
  }
  const auto lda = fit_lda(x, spk, {}, 1);
  const Eigen::VectorXd row = lda.row(0).transpose();
  CHECK(std::abs(row.normalized()(0)) > 0.99);
  Eigen::Index arg = 0;
  row.cwiseAbs().maxCoeff(&arg);
  CHECK(row(arg) > 0.0);

  const std::vector<double> uniform(200, 0.37);
  CHECK((fit_lda(x, spk, uniform, 1) - lda).cwiseAbs().maxCoeff() < 1e-10);

  CHECK_THROWS_AS(fit_lda(x, std::vector<std::string>(200, "a"), {}, 1), DataError);
  CHECK_THROWS_AS(fit_lda(x, spk, {}, 2), ConfigError);
}

TEST_CASE("2-D LDA matches a hand-built generalized eigenproblem") {
  // Two speakers, three samples each.
  Eigen::MatrixXd x(6, 2);
  x << 0.0, 0.0, 1.0, 0.5, 2.0, -0.5,   //
      3.0, 2.0, 4.0, 3.5, 5.0, 1.0;
  const std::vector<std::string> spk = {"a", "a", "a", "b", "b", "b"};
  // Scatter matrices normalized by the sample count.
  Eigen::Vector2d ma(1.0, 0.0), mb(4.0, 13.0 / 6.0);
  const Eigen::Vector2d m = 0.5 * (ma + mb);
  Eigen::Matrix2d sb = 3.0 * (ma - m) * (ma - m).transpose() +
                       3.0 * (mb - m) * (mb - m).transpose();
  Eigen::Matrix2d sw = Eigen::Matrix2d::Zero();
  for (int i = 0; i < 6; ++i) {
    const Eigen::Vector2d c = x.row(i).transpose() - (i < 3 ? ma : mb);
    sw += c * c.transpose();
  }
  sb /= 6.0;
  sw /= 6.0;
  // det(Sb - l Sw) = 0 as a quadratic in l; take the larger root.
  const double qa = sw.determinant();
  const double qb = -(sb(0, 0) * sw(1, 1) + sb(1, 1) * sw(0, 0) - sb(0, 1) * sw(1, 0) -
                      sb(1, 0) * sw(0, 1));
  const double qc = sb.determinant();
  const double l = (-qb + std::sqrt(qb * qb - 4 * qa * qc)) / (2 * qa);
  const Eigen::Matrix2d m2 = sb - l * sw;
  Eigen::Vector2d v(-m2(0, 1), m2(0, 0));
  if (v.norm() < 1e-12) v = Eigen::Vector2d(-m2(1, 1), m2(1, 0));
  v /= std::sqrt(v.dot(sw * v));
  if (std::abs(v(1)) > std::abs(v(0)) ? v(1) < 0 : v(0) < 0) v = -v;

  const auto lda = fit_lda(x, spk, {}, 1);
  CHECK(std::abs(lda(0, 0) - v(0)) < 1e-8);
  CHECK(std::abs(lda(0, 1) - v(1)) < 1e-8);
}

TEST_CASE("length normalization") {
  const auto y = length_normalize(Eigen::Vector2d(3.0, 4.0));
  CHECK(y(0) == doctest::Approx(0.848528).epsilon(1e-6));
  CHECK(y(1) == doctest::Approx(1.131371).epsilon(1e-6));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd v(7);
    for (auto& e : v) e = normal(rng);
    CHECK(length_normalize(v).norm() == doctest::Approx(std::sqrt(7.0)));
  }
  CHECK_THROWS_AS(length_normalize(Eigen::VectorXd::Zero(3)), DataError);
}

TEST_CASE("PLDA recovers 1-D covariances") {
  const auto data = one_dim(500, 8, 1.0, 1.0, 12);
  const auto fit = fit_plda(data.x, data.spk, {});
  CHECK(std::abs(fit.model.between(0, 0) - 1.0) < 0.1);
  CHECK(std::abs(fit.model.within(0, 0) - 1.0) < 0.1);
  for (std::size_t k = 1; k < fit.log_likelihood.size(); ++k)
    CHECK(fit.log_likelihood[k] >= fit.log_likelihood[k - 1] - 1e-9 * std::abs(fit.log_likelihood[k - 1]));
}

TEST_CASE("PLDA with no between-speaker variance drives B to zero") {
  const auto data = one_dim(300, 8, 0.0, 1.0, 5);
  const auto fit = fit_plda(data.x, data.spk, {}, {.n_iters = 200, .tolerance = 1e-12});
  CHECK(fit.model.between.norm() < 0.05 * fit.model.within.norm());
}

TEST_CASE("uniform weights reproduce the unweighted EM exactly") {
  const auto data = one_dim(60, 5, 1.0, 0.5, 3);
  const auto plain = fit_plda(data.x, data.spk, {});
  const std::vector<double> uniform(data.spk.size(), 0.25);
  const auto weighted = fit_plda(data.x, data.spk, uniform);
  CHECK(plain.log_likelihood == weighted.log_likelihood);
  CHECK(plain.model.between == weighted.model.between);
  CHECK(plain.model.within == weighted.model.within);
  CHECK(plain.model.mu == weighted.model.mu);
}

TEST_CASE("scaling all weights leaves the fit unchanged") {
  const auto set = testutil::toy_set(30, 2, 3, 4, 9, 10);
  const Eigen::MatrixXd x = set.matrix();
  std::vector<double> w(set.size()), w7(set.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = set.groups()[i] == "g0" ? 3.0 : 1.0;
    w7[i] = 7.0 * w[i];
  }
  const auto a = fit_plda(x, set.speakers(), w);
  const auto b = fit_plda(x, set.speakers(), w7);
  CHECK((a.model.between - b.model.between).norm() <= 1e-10 * a.model.between.norm());
  CHECK((a.model.within - b.model.within).norm() <= 1e-10 * a.model.within.norm());
  const auto la = fit_lda(x, set.speakers(), w, 3);
  const auto lb = fit_lda(x, set.speakers(), w7, 3);
  CHECK((la - lb).norm() <= 1e-10 * la.norm());
  for (std::size_t k = 1; k < a.log_likelihood.size(); ++k)
    CHECK(a.log_likelihood[k] >= a.log_likelihood[k - 1] - 1e-9 * std::abs(a.log_likelihood[k - 1]));
}

TEST_CASE("PLDA input checks") {
  Eigen::MatrixXd x(3, 1);
  x << 1, 2, 3;
  CHECK_THROWS_AS(fit_plda(x, {"a", "a", "a"}, {}), DataError);
  CHECK_THROWS_AS(fit_plda(x, {"a", "b", "c"}, {}), DataError);
}

TEST_CASE("two-covariance LLR against density oracles") {
  Plda p;
  p.mu = Eigen::VectorXd::Zero(1);
  p.between = Eigen::MatrixXd::Ones(1, 1);
  p.within = Eigen::MatrixXd::Ones(1, 1);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1), zero = Eigen::VectorXd::Zero(1);
  const double at_one = plda_llr(p, one, one);
  CHECK(std::abs(at_one - oracle::plda_llr_1d_quadrature(1, 1, 1, 1)) < 1e-6);
  CHECK(at_one == doctest::Approx(0.3105078).epsilon(1e-7));
  CHECK(std::abs(plda_llr(p, zero, zero) - 0.5 * std::log(4.0 / 3.0)) < 1e-12);

  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal;
  const Eigen::MatrixXd b = random_spd(5, rng, 0.1), w = random_spd(5, rng, 0.5);
  const TwoCovarianceScorer scorer(b, w);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd x1(5), x2(5);
    for (auto& e : x1) e = normal(rng);
    for (auto& e : x2) e = normal(rng);
    const double s = scorer(x1, x2);
    CHECK(std::abs(s - oracle::plda_llr_joint(b, w, Eigen::VectorXd::Zero(5), x1, x2)) < 1e-9);
    CHECK(std::abs(s - scorer(x2, x1)) < 1e-10);
  }
  CHECK_THROWS_AS(TwoCovarianceScorer(-Eigen::MatrixXd::Identity(2, 2) * 3,
                                      Eigen::MatrixXd::Identity(2, 2)),
                  NumericalError);
}

TEST_CASE("calibration of oracle scores") {
  auto cfg = synthetic::make_config(8, {"g"}, {150}, 1.0, 1.0, 3);
  const auto set = synthetic::generate(cfg);
  const auto trials = trials::build_trial_index(set);
  const synthetic::OracleScorer oracle_scorer(cfg);
  const auto llr = oracle_scorer.score(set, trials);
  const auto map = fit_calibration(llr, trials.target, {}, 0.05);
  CHECK(std::abs(map.scale - 1.0) < 0.05);
  CHECK(std::abs(map.offset) < 0.05);

  std::vector<double> warped(llr.size());
  for (std::size_t i = 0; i < llr.size(); ++i) warped[i] = 2.0 * llr[i] + 3.0;
  const auto inv = fit_calibration(warped, trials.target, {}, 0.05);
  CHECK(std::abs(inv.scale - 0.5) < 0.05);
  CHECK(std::abs(inv.offset + 1.5) < 0.1);

  // Optimum beats random affine maps of the same scores.
  auto objective = [&](double a, double b) {
    std::vector<double> t(warped.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = a * warped[i] + b;
    return metrics::weighted_cllr(t, trials.target, 0.05);
  };
  const double best = objective(inv.scale, inv.offset);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ua(0.01, 3.0), ub(-6.0, 6.0);
  for (int rep = 0; rep < 20; ++rep) CHECK(best <= objective(ua(rng), ub(rng)));

  const std::vector<std::uint8_t> one_class(4, 1);
  CHECK_THROWS_AS(fit_calibration(std::vector<double>{1, 2, 3, 4}, one_class, {}, 0.05),
                  DataError);
}

TEST_CASE("pipeline equals manual composition and is symmetric") {
  auto cfg = synthetic::make_config(10, {"a", "b"}, {40, 40}, 1.0, 1.0, 8);
  const auto set = synthetic::generate(cfg);
  GenerativeOptions opts;
  opts.min_speakers = 10;
  GenerativeTrainInfo info;
  const auto bk = train_generative(set, opts, nullptr, &info);
  CHECK(info.groups == std::vector<std::string>{"a", "b"});
  CHECK(bk.lda.rows() == 10);

  const auto trials = trials::build_trial_index(set, {.within_group = true});
  const auto scores = score_pipeline(bk, set, trials);
  for (std::size_t t = 0; t < trials.size(); t += 97) {
    const auto x1 = set.vector(trials.enroll[t]);
    const auto x2 = set.vector(trials.test[t]);
    const Eigen::VectorXd f1 = length_normalize(bk.lda * (x1 - bk.mean)) - bk.plda.mu;
    const Eigen::VectorXd f2 = length_normalize(bk.lda * (x2 - bk.mean)) - bk.plda.mu;
    const double raw = oracle::plda_llr_joint(bk.plda.between, bk.plda.within,
                                              Eigen::VectorXd::Zero(10), f1, f2);
    CHECK(std::abs(scores.raw[t] - raw) < 1e-9);
    CHECK(std::abs(scores.llr[t] - (bk.cal_a * scores.raw[t] + bk.cal_b)) < 1e-12);
  }
  TrialIndex swapped = trials;
  std::swap(swapped.enroll, swapped.test);
  const auto back = score_pipeline(bk, set, swapped);
  for (std::size_t t = 0; t < trials.size(); ++t)
    CHECK(std::abs(back.llr[t] - scores.llr[t]) < 1e-10);

  const auto again = train_generative(set, opts);
  CHECK(again.plda.between == bk.plda.between);
  CHECK(again.cal_a == bk.cal_a);

  CHECK_THROWS_AS(score_pipeline(bk, set, TrialList{{"nope", set.ids()[0], false}}),
                  DataError);
}

TEST_CASE("balanced training treats groups symmetrically") {
  auto cfg = synthetic::make_config(6, {"big", "small"}, {60, 12}, 1.0, 1.0, 2);
  const auto set = synthetic::generate(cfg);
  GenerativeOptions opts;
  opts.min_speakers = 5;
  opts.balance = true;
  const auto bk = train_generative(set, opts);
  CHECK(std::isfinite(bk.cal_a));
  CHECK(bk.cal_a > 0.0);
  CHECK(default_lda_dim(512, 1000) == 150);
  CHECK(default_lda_dim(20, 8) == 7);
}
