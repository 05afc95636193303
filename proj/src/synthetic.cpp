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

#include "fairspk/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "fairspk/errors.hpp"
#include "fairspk/trials.hpp"

namespace fairspk::synthetic {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& m, const char* what) {
  // B may be singular, so factor through the eigen-decomposition.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < -1e-12)
    throw ConfigError(std::string(what) + " must be positive semidefinite");
  return es.eigenvectors() *
         es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Eigen::VectorXd random_unit(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  do {
    for (auto& x : v) x = normal(rng);
  } while (v.norm() < 1e-12);
  return v / v.norm();
}

}  // namespace

void SynthConfig::validate() const {
  const auto d = static_cast<Eigen::Index>(dim);
  if (dim == 0) throw ConfigError("synthetic dim must be >= 1");
  if (groups.empty()) throw ConfigError("synthetic config needs at least one group");
  if (between.rows() != d || between.cols() != d || within.rows() != d ||
      within.cols() != d)
    throw ConfigError("synthetic covariances must be dim x dim");
  if (samples_per_speaker < 1 || files_per_speaker < 1)
    throw ConfigError("samples and files per speaker must be >= 1");
  cholesky_factor(between, "B_true");
  Eigen::LLT<Eigen::MatrixXd> llt(within);
  if (llt.info() != Eigen::Success)
    throw ConfigError("W_true must be positive definite");
  for (const auto& g : groups) {
    if (g.name.empty()) throw ConfigError("group names must be non-empty");
    if (g.shift.size() != d) throw ConfigError("group shift must have length dim");
    if (!(g.within_scale > 0.0)) throw ConfigError("group_scale must be positive");
  }
  if (!(min_duration > 0.0) || max_duration < min_duration ||
      !(reference_duration > 0.0))
    throw ConfigError("invalid duration range");
}

std::size_t SynthConfig::group_index(const std::string& name) const {
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (groups[g].name == name) return g;
  throw DataError("unknown synthetic group '" + name + "'");
}

std::size_t SynthConfig::total_speakers() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.speakers;
  return n;
}

SynthConfig make_config(std::size_t dim, const std::vector<std::string>& names,
                        const std::vector<std::size_t>& speakers,
                        double between_var, double within_var,
                        std::uint64_t seed) {
  if (names.size() != speakers.size())
    throw ConfigError("group names and speaker counts differ in length");
  SynthConfig cfg;
  cfg.dim = dim;
  const auto d = static_cast<Eigen::Index>(dim);
  cfg.between = between_var * Eigen::MatrixXd::Identity(d, d);
  cfg.within = within_var * Eigen::MatrixXd::Identity(d, d);
  cfg.seed = seed;
  for (std::size_t g = 0; g < names.size(); ++g)
    cfg.groups.push_back({names[g], speakers[g], Eigen::VectorXd::Zero(d), 1.0});
  return cfg;
}

double noise_scale(const SynthConfig& cfg, std::size_t group, double duration_s) {
  double s = cfg.groups.at(group).within_scale;
  if (cfg.duration_exponent != 0.0)
    s *= std::pow(cfg.reference_duration / duration_s, cfg.duration_exponent);
  return s;
}

EmbeddingSet generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const Eigen::MatrixXd b_factor = cholesky_factor(cfg.between, "B_true");
  const Eigen::MatrixXd w_factor = Eigen::LLT<Eigen::MatrixXd>(cfg.within).matrixL();

  const auto n = cfg.total_speakers() * cfg.samples_per_speaker;
  std::vector<std::string> ids, speakers, groups, files;
  std::vector<double> durations;
  ids.reserve(n);
  RowMatrixXf vectors(static_cast<Eigen::Index>(n), d);
  std::size_t global_speaker = 0;
  Eigen::Index row = 0;
  for (std::size_t g = 0; g < cfg.groups.size(); ++g) {
    const auto& spec = cfg.groups[g];
    for (std::size_t k = 0; k < spec.speakers; ++k, ++global_speaker) {
      const auto spk_seed = mix(cfg.seed ^ mix(global_speaker + 1));
      std::mt19937_64 rng(spk_seed);
      std::normal_distribution<double> normal;
      Eigen::VectorXd z(d);
      for (auto& v : z) v = normal(rng);
      const Eigen::VectorXd mean = spec.shift + b_factor * z;
      const auto durs = trials::sample_training_durations(
          cfg.samples_per_speaker, cfg.min_duration, cfg.max_duration,
          mix(spk_seed));
      const std::string spk = spec.name + "_s" + std::to_string(k);
      for (std::size_t m = 0; m < cfg.samples_per_speaker; ++m, ++row) {
        for (auto& v : z) v = normal(rng);
        const double scale = std::sqrt(noise_scale(cfg, g, durs[m]));
        const Eigen::VectorXd x = mean + scale * (w_factor * z);
        vectors.row(row) = x.cast<float>().transpose();
        const auto file = spk + "_f" + std::to_string(m % cfg.files_per_speaker);
        ids.push_back(file + "_c" + std::to_string(m / cfg.files_per_speaker));
        speakers.push_back(spk);
        groups.push_back(spec.name);
        files.push_back(file);
        durations.push_back(durs[m]);
      }
    }
  }
  return EmbeddingSet(std::move(ids), std::move(vectors), std::move(speakers),
                      std::move(groups), std::move(durations), std::move(files));
}

OracleScorer::OracleScorer(const SynthConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      cfg_.between, cfg_.within, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (solver.info() != Eigen::Success)
    throw NumericalError("cannot diagonalize the oracle covariances");
  basis_ = solver.eigenvectors();
  lambda_ = solver.eigenvalues().cwiseMax(0.0);
}

double OracleScorer::operator()(std::size_t group, const Eigen::VectorXd& x1,
                                const Eigen::VectorXd& x2, double dur1_s,
                                double dur2_s) const {
  if (group >= cfg_.groups.size()) throw DataError("unknown oracle group");
  if (!(dur1_s > 0.0) || !(dur2_s > 0.0))
    throw DataError("durations must be positive");
  const auto& shift = cfg_.groups[group].shift;
  const Eigen::VectorXd z1 = basis_.transpose() * (x1 - shift);
  const Eigen::VectorXd z2 = basis_.transpose() * (x2 - shift);
  const double w1 = noise_scale(cfg_, group, dur1_s);
  const double w2 = noise_scale(cfg_, group, dur2_s);
  double llr = 0.0;
  for (Eigen::Index k = 0; k < z1.size(); ++k) {
    const double b = lambda_(k);
    const double t1 = b + w1;
    const double t2 = b + w2;
    const double det = t1 * t2 - b * b;
    const double quad = (z1(k) * z1(k) * t2 - 2.0 * b * z1(k) * z2(k) +
                         z2(k) * z2(k) * t1) / det;
    llr += 0.5 * (std::log(t1) + std::log(t2) - std::log(det)) - 0.5 * quad +
           0.5 * (z1(k) * z1(k) / t1 + z2(k) * z2(k) / t2);
  }
  return llr;
}

std::vector<double> OracleScorer::score(const EmbeddingSet& set,
                                        const TrialIndex& trials) const {
  std::vector<double> out(trials.size());
  std::vector<std::size_t> group_of(set.size());
  for (std::size_t i = 0; i < set.size(); ++i)
    group_of[i] = cfg_.group_index(set.groups()[i]);
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const auto i = trials.enroll[t];
    const auto j = trials.test[t];
    if (group_of[i] != group_of[j])
      throw DataError("oracle trials must stay within one group");
    out[t] = (*this)(group_of[i], set.vector(i), set.vector(j),
                     set.durations()[i], set.durations()[j]);
  }
  return out;
}

double oracle_llr(const SynthConfig& cfg, const std::string& group,
                  const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
  const auto g = cfg.group_index(group);
  return OracleScorer(cfg)(g, x1, x2, cfg.reference_duration,
                           cfg.reference_duration);
}

SynthConfig inject_skew(const SynthConfig& cfg, double minority_fraction,
                        double shift_magnitude) {
  if (!(minority_fraction > 0.0 && minority_fraction < 1.0))
    throw ConfigError("minority fraction must lie strictly between 0 and 1");
  SynthConfig out = cfg;
  const auto total = cfg.total_speakers();
  const auto minority = static_cast<std::size_t>(
      std::llround(minority_fraction * static_cast<double>(total)));
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  out.groups = {
      {"majority", total - minority, Eigen::VectorXd::Zero(d), 1.0},
      {"minority", minority,
       shift_magnitude * random_unit(cfg.dim, mix(cfg.seed ^ 0x5eedULL)), 1.0}};
  return out;
}

SynthConfig config_from_keys(const KeyValueConfig& kv) {
  const auto dim = static_cast<std::size_t>(kv.get_int("dim", 20));
  const auto names = kv.get_strings("groups");
  std::vector<std::size_t> speakers;
  for (double v : kv.get_doubles("speakers_per_group")) {
    if (v < 0 || v != std::floor(v))
      throw ConfigError("speakers_per_group must hold non-negative integers");
    speakers.push_back(static_cast<std::size_t>(v));
  }
  auto cfg = make_config(dim, names, speakers, kv.get_double("between_var", 1.0),
                         kv.get_double("within_var", 1.0), kv.get_uint("seed", 0));
  if (kv.has("shift_magnitudes")) {
    const auto mags = kv.get_doubles("shift_magnitudes");
    if (mags.size() != names.size())
      throw ConfigError("shift_magnitudes must list one value per group");
    for (std::size_t g = 0; g < names.size(); ++g)
      cfg.groups[g].shift =
          mags[g] * random_unit(dim, mix(cfg.seed ^ mix(0x5eedULL + g)));
  }
  if (kv.has("within_scales")) {
    const auto scales = kv.get_doubles("within_scales");
    if (scales.size() != names.size())
      throw ConfigError("within_scales must list one value per group");
    for (std::size_t g = 0; g < names.size(); ++g)
      cfg.groups[g].within_scale = scales[g];
  }
  cfg.samples_per_speaker =
      static_cast<std::size_t>(kv.get_int("samples_per_speaker", 8));
  cfg.files_per_speaker =
      static_cast<std::size_t>(kv.get_int("files_per_speaker", 4));
  cfg.duration_exponent = kv.get_double("duration_exponent", 0.0);
  cfg.reference_duration = kv.get_double("reference_duration", 16.0);
  cfg.min_duration = kv.get_double("min_duration", 4.0);
  cfg.max_duration = kv.get_double("max_duration", 240.0);
  cfg.validate();
  return cfg;
}

}  // namespace fairspk::synthetic
