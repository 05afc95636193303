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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "fairspk/errors.hpp"

namespace fairspk::metrics {

namespace {

void check_prior(double pi) {
  if (!(pi > 0.0 && pi < 1.0))
    throw ConfigError("prior must lie strictly between 0 and 1");
}

void check_aligned(std::size_t a, std::size_t b) {
  if (a != b) throw DataError("scores and labels have different lengths");
}

// Cross-entropy terms in nats for one trial at effective LLR z (offset
// already applied).
double target_loss(double z) { return softplus(-z); }
double nontarget_loss(double z) { return softplus(z); }

struct ClassTotals {
  double tar = 0.0;
  double non = 0.0;
};

ClassTotals class_weight_totals(std::span<const std::uint8_t> targets,
                                std::span<const double> weights) {
  ClassTotals t;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    (targets[i] ? t.tar : t.non) += w;
  }
  return t;
}

// Objective, gradient and Hessian of the prior-weighted cross-entropy (nats)
// of a*s + b, for standardized scores.
struct AffineObjective {
  std::span<const double> scores;
  std::span<const std::uint8_t> targets;
  std::span<const double> weights;
  double tau;
  double c_tar;
  double c_non;

  double value(double a, double b) const {
    double f = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      const double z = a * scores[i] + b + tau;
      f += targets[i] ? c_tar * w * target_loss(z) : c_non * w * nontarget_loss(z);
    }
    return f;
  }

  void derivatives(double a, double b, Eigen::Vector2d& g,
                   Eigen::Matrix2d& h) const {
    g.setZero();
    h.setZero();
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      const double s = scores[i];
      const double z = a * s + b + tau;
      const double p = sigmoid(z);
      const double q = sigmoid(-z);
      const double dz = targets[i] ? -c_tar * w * q : c_non * w * p;
      const double d2 = (targets[i] ? c_tar : c_non) * w * p * q;
      g(0) += dz * s;
      g(1) += dz;
      h(0, 0) += d2 * s * s;
      h(0, 1) += d2 * s;
      h(1, 1) += d2;
    }
    h(1, 0) = h(0, 1);
  }
};

double percentile(std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double prior_logit(double pi) {
  check_prior(pi);
  return std::log(pi) - std::log1p(-pi);
}

double prior_entropy_bits(double pi) {
  check_prior(pi);
  return -(pi * std::log2(pi) + (1.0 - pi) * std::log2(1.0 - pi));
}

double weighted_cllr(std::span<const double> llrs,
                     std::span<const std::uint8_t> targets, double pi) {
  return weighted_cllr(llrs, targets, {}, pi);
}

double weighted_cllr(std::span<const double> llrs,
                     std::span<const std::uint8_t> targets,
                     std::span<const double> weights, double pi) {
  check_aligned(llrs.size(), targets.size());
  if (!weights.empty()) check_aligned(llrs.size(), weights.size());
  const double tau = prior_logit(pi);
  const auto totals = class_weight_totals(targets, weights);
  if (!(totals.tar > 0.0) || !(totals.non > 0.0))
    throw DataError("Cllr needs both target and non-target trials");
  double tar = 0.0, non = 0.0;
  for (std::size_t i = 0; i < llrs.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (w == 0.0) continue;
    if (targets[i])
      tar += w * target_loss(llrs[i] + tau);
    else
      non += w * nontarget_loss(llrs[i] + tau);
  }
  const double nats = pi * tar / totals.tar + (1.0 - pi) * non / totals.non;
  return nats / std::numbers::ln2;
}

AffineMap fit_affine(std::span<const double> scores,
                     std::span<const std::uint8_t> targets,
                     std::span<const double> weights, double pi,
                     const AffineFitOptions& options) {
  check_aligned(scores.size(), targets.size());
  if (!weights.empty()) check_aligned(scores.size(), weights.size());
  const double tau = prior_logit(pi);
  const auto totals = class_weight_totals(targets, weights);
  if (!(totals.tar > 0.0) || !(totals.non > 0.0))
    throw DataError("affine calibration needs both target and non-target trials");

  // Work on standardized scores; the map is converted back at the end.
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / static_cast<double>(scores.size()));
  if (!(sd > 0.0) || !std::isfinite(sd)) {
    // Only the offset matters, and offset 0 reproduces the prior.
    return AffineMap{0.0, 0.0};
  }
  std::vector<double> z(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) z[i] = (scores[i] - mean) / sd;

  const AffineObjective obj{z, targets, weights, tau, pi / totals.tar,
                            (1.0 - pi) / totals.non};
  Eigen::Vector2d x(0.0, 0.0);
  double f = obj.value(x(0), x(1));
  Eigen::Vector2d g;
  Eigen::Matrix2d h;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    obj.derivatives(x(0), x(1), g, h);
    // Gradient with respect to the original (scale, offset).
    const Eigen::Vector2d g_orig(g(0) * sd + g(1) * mean, g(1));
    if (g_orig.norm() < options.gradient_tolerance &&
        g.norm() < options.gradient_tolerance)
      break;
    Eigen::Vector2d step;
    Eigen::LLT<Eigen::Matrix2d> llt(h);
    if (llt.info() == Eigen::Success && h.determinant() > 1e-300) {
      step = llt.solve(-g);
    } else {
      step = -g;
    }
    double t = 1.0;
    const double slope = g.dot(step);
    bool moved = false;
    while (t > 1e-14) {
      const Eigen::Vector2d cand = x + t * step;
      const double fc = obj.value(cand(0), cand(1));
      if (std::isfinite(fc) && fc <= f + 1e-4 * t * slope) {
        x = cand;
        f = fc;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  AffineMap out;
  out.scale = x(0) / sd;
  out.offset = x(1) - out.scale * mean;
  return out;
}

double min_cllr_affine(std::span<const double> llrs,
                       std::span<const std::uint8_t> targets, double pi) {
  const double actual = weighted_cllr(llrs, targets, pi);
  const auto [lo, hi] = std::minmax_element(llrs.begin(), llrs.end());
  if (*lo == *hi) return prior_entropy_bits(pi);
  const auto map = fit_affine(llrs, targets, {}, pi);
  std::vector<double> mapped(llrs.size());
  for (std::size_t i = 0; i < llrs.size(); ++i) mapped[i] = map(llrs[i]);
  return std::min(actual, weighted_cllr(mapped, targets, pi));
}

double bayes_threshold(double pi) {
  check_prior(pi);
  return std::log1p(-pi) - std::log(pi);
}

ErrorRates error_rates(std::span<const double> llrs,
                       std::span<const std::uint8_t> targets, double threshold) {
  check_aligned(llrs.size(), targets.size());
  std::size_t n_tar = 0, n_non = 0, miss = 0, fa = 0;
  for (std::size_t i = 0; i < llrs.size(); ++i) {
    const bool accept = llrs[i] >= threshold;
    if (targets[i]) {
      ++n_tar;
      if (!accept) ++miss;
    } else {
      ++n_non;
      if (accept) ++fa;
    }
  }
  ErrorRates r;
  r.p_fa = n_non ? static_cast<double>(fa) / static_cast<double>(n_non) : 0.0;
  r.p_miss = n_tar ? static_cast<double>(miss) / static_cast<double>(n_tar) : 0.0;
  return r;
}

double fdr(std::span<const ErrorRates> per_group, double alpha) {
  if (per_group.size() < 2) throw DataError("FDR needs at least two groups");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("alpha must lie in [0, 1]");
  double fa_lo = per_group[0].p_fa, fa_hi = fa_lo;
  double miss_lo = per_group[0].p_miss, miss_hi = miss_lo;
  for (const auto& r : per_group) {
    fa_lo = std::min(fa_lo, r.p_fa);
    fa_hi = std::max(fa_hi, r.p_fa);
    miss_lo = std::min(miss_lo, r.p_miss);
    miss_hi = std::max(miss_hi, r.p_miss);
  }
  return 1.0 - (alpha * (fa_hi - fa_lo) + (1.0 - alpha) * (miss_hi - miss_lo));
}

CllrStatistic::CllrStatistic(std::span<const double> llrs,
                             std::span<const std::uint8_t> targets, double pi)
    : losses_(llrs.size()), pi_(pi) {
  check_aligned(llrs.size(), targets.size());
  const double tau = prior_logit(pi);
  for (std::size_t i = 0; i < llrs.size(); ++i)
    losses_[i] = targets[i] ? target_loss(llrs[i] + tau)
                            : nontarget_loss(llrs[i] + tau);
}

double CllrStatistic::operator()(std::span<const double> llrs,
                                 std::span<const std::uint8_t> targets,
                                 std::span<const double> weights) const {
  check_aligned(llrs.size(), losses_.size());
  double tar = 0.0, non = 0.0, w_tar = 0.0, w_non = 0.0;
  for (std::size_t i = 0; i < losses_.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (targets[i]) {
      tar += w * losses_[i];
      w_tar += w;
    } else {
      non += w * losses_[i];
      w_non += w;
    }
  }
  if (!(w_tar > 0.0) || !(w_non > 0.0))
    throw DataError("Cllr needs both target and non-target trials");
  return (pi_ * tar / w_tar + (1.0 - pi_) * non / w_non) / std::numbers::ln2;
}

Interval bootstrap_ci(const EmbeddingSet& set, const TrialIndex& trials,
                      std::span<const double> llrs, const Statistic& statistic,
                      const BootstrapOptions& options) {
  if (options.n_boot < 2) throw ConfigError("n_boot must be >= 2");
  if (!(options.confidence > 0.0 && options.confidence < 1.0))
    throw ConfigError("confidence must lie strictly between 0 and 1");
  check_aligned(llrs.size(), trials.size());

  // Dense speaker indices over the speakers that occur in the trials.
  std::unordered_map<std::string, std::size_t> speaker_index;
  std::vector<std::size_t> spk_e(trials.size()), spk_t(trials.size());
  auto lookup = [&](std::size_t sample) {
    const auto& name = set.speakers()[sample];
    return speaker_index.emplace(name, speaker_index.size()).first->second;
  };
  for (std::size_t t = 0; t < trials.size(); ++t) {
    spk_e[t] = lookup(trials.enroll[t]);
    spk_t[t] = lookup(trials.test[t]);
  }
  const std::size_t n_spk = speaker_index.size();
  if (n_spk == 0) throw DataError("bootstrap needs at least one trial");

  std::vector<double> values;
  values.reserve(options.n_boot);
  std::vector<double> counts(n_spk);
  std::vector<double> weights(trials.size());
  for (std::size_t r = 0; r < options.n_boot; ++r) {
    std::mt19937_64 rng(splitmix64(options.seed ^ splitmix64(r)));
    std::uniform_int_distribution<std::size_t> pick(0, n_spk - 1);
    bool ok = false;
    for (std::size_t attempt = 0; attempt <= options.max_retries; ++attempt) {
      std::fill(counts.begin(), counts.end(), 0.0);
      for (std::size_t k = 0; k < n_spk; ++k) counts[pick(rng)] += 1.0;
      double w_tar = 0.0, w_non = 0.0;
      for (std::size_t t = 0; t < trials.size(); ++t) {
        weights[t] = counts[spk_e[t]] * counts[spk_t[t]];
        (trials.target[t] ? w_tar : w_non) += weights[t];
      }
      if (w_tar > 0.0 && w_non > 0.0) {
        ok = true;
        break;
      }
    }
    if (!ok)
      throw DataError("bootstrap replicate " + std::to_string(r) +
                      " lacks a trial class after " +
                      std::to_string(options.max_retries) + " redraws");
    values.push_back(statistic(llrs, trials.target, weights));
  }
  std::sort(values.begin(), values.end());
  const double tail = 0.5 * (1.0 - options.confidence);
  return {percentile(values, tail), percentile(values, 1.0 - tail)};
}

MetricsReport evaluate(const EmbeddingSet& set, const TrialIndex& trials,
                       std::span<const double> llrs,
                       const GroupAssignment& groups,
                       const EvaluateOptions& options) {
  check_aligned(llrs.size(), trials.size());
  if (groups.group_of.size() != set.size())
    throw DataError("group assignment does not match the embedding set");
  MetricsReport report;
  report.pi = options.pi;
  report.alpha = options.alpha;
  report.threshold_nats = bayes_threshold(options.pi);

  std::vector<std::vector<std::size_t>> by_group(groups.num_groups());
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const auto ge = groups.group_of[trials.enroll[t]];
    const auto gt = groups.group_of[trials.test[t]];
    if (ge != gt)
      throw DataError("trial " + set.ids()[trials.enroll[t]] + "/" +
                      set.ids()[trials.test[t]] + " spans groups '" +
                      groups.labels[ge] + "' and '" + groups.labels[gt] + "'");
    by_group[ge].push_back(t);
  }

  std::vector<ErrorRates> rates;
  for (std::size_t g = 0; g < by_group.size(); ++g) {
    const auto& idx = by_group[g];
    if (idx.empty()) continue;
    TrialIndex sub;
    std::vector<double> sub_llr;
    for (auto t : idx) {
      sub.enroll.push_back(trials.enroll[t]);
      sub.test.push_back(trials.test[t]);
      sub.target.push_back(trials.target[t]);
      sub_llr.push_back(llrs[t]);
    }
    GroupMetrics m;
    m.group = groups.labels[g];
    for (auto v : sub.target) (v ? m.n_tar : m.n_non) += 1;
    if (m.n_tar == 0 || m.n_non == 0)
      throw DataError("group '" + m.group + "' lacks target or non-target trials");
    m.cllr_bits = weighted_cllr(sub_llr, sub.target, options.pi);
    m.min_cllr_bits = min_cllr_affine(sub_llr, sub.target, options.pi);
    m.cal_loss_bits = m.cllr_bits - m.min_cllr_bits;
    const auto r = error_rates(sub_llr, sub.target, report.threshold_nats);
    m.p_fa = r.p_fa;
    m.p_miss = r.p_miss;
    auto boot = options.bootstrap;
    boot.seed = splitmix64(options.bootstrap.seed + g);
    m.cllr_ci = bootstrap_ci(set, sub, sub_llr,
                             CllrStatistic(sub_llr, sub.target, options.pi), boot);
    rates.push_back(r);
    report.groups.push_back(std::move(m));
  }
  if (rates.size() >= 2) report.fdr = fdr(rates, options.alpha);
  return report;
}

Histogram score_histogram(std::span<const double> llrs,
                          std::span<const std::uint8_t> targets,
                          std::size_t n_bins, double lo, double hi) {
  check_aligned(llrs.size(), targets.size());
  if (n_bins == 0 || !(hi > lo)) throw ConfigError("invalid histogram range");
  Histogram h;
  const double width = (hi - lo) / static_cast<double>(n_bins);
  h.bin_centers.resize(n_bins);
  h.tar_density.assign(n_bins, 0.0);
  h.non_density.assign(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b)
    h.bin_centers[b] = lo + (static_cast<double>(b) + 0.5) * width;
  double n_tar = 0.0, n_non = 0.0;
  for (std::size_t i = 0; i < llrs.size(); ++i) {
    const double pos = std::floor((llrs[i] - lo) / width);
    const auto b = static_cast<std::size_t>(
        std::clamp(pos, 0.0, static_cast<double>(n_bins - 1)));
    if (targets[i]) {
      h.tar_density[b] += 1.0;
      n_tar += 1.0;
    } else {
      h.non_density[b] += 1.0;
      n_non += 1.0;
    }
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (n_tar > 0) h.tar_density[b] /= n_tar * width;
    if (n_non > 0) h.non_density[b] /= n_non * width;
  }
  return h;
}

std::string report_to_json(
    const MetricsReport& report,
    const std::vector<std::pair<std::string, std::string>>& config_echo) {
  nlohmann::ordered_json j;
  j["pi"] = report.pi;
  j["alpha"] = report.alpha;
  j["threshold_nats"] = report.threshold_nats;
  j["fdr"] = report.fdr ? nlohmann::ordered_json(*report.fdr)
                        : nlohmann::ordered_json(nullptr);
  auto& groups = j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : report.groups) {
    nlohmann::ordered_json r;
    r["group"] = g.group;
    r["cllr_bits"] = g.cllr_bits;
    r["min_cllr_bits"] = g.min_cllr_bits;
    r["cal_loss_bits"] = g.cal_loss_bits;
    r["p_fa"] = g.p_fa;
    r["p_miss"] = g.p_miss;
    r["n_tar"] = g.n_tar;
    r["n_non"] = g.n_non;
    r["cllr_ci"] = {g.cllr_ci.lo, g.cllr_ci.hi};
    groups.push_back(std::move(r));
  }
  if (!config_echo.empty()) {
    auto& cfg = j["config"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : config_echo) cfg[k] = v;
  }
  return j.dump(2);
}

}  // namespace fairspk::metrics
