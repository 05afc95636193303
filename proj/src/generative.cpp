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

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <unordered_map>

#include "fairspk/errors.hpp"

namespace fairspk::generative {

namespace {

struct SpeakerIndex {
  std::vector<std::size_t> of_sample;
  std::size_t count = 0;
};

SpeakerIndex index_speakers(const std::vector<std::string>& speakers) {
  SpeakerIndex out;
  out.of_sample.resize(speakers.size());
  std::unordered_map<std::string, std::size_t> ids;
  for (std::size_t i = 0; i < speakers.size(); ++i)
    out.of_sample[i] = ids.emplace(speakers[i], ids.size()).first->second;
  out.count = ids.size();
  return out;
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

double log_det_pd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string(what) + " is not positive definite");
  const Eigen::MatrixXd& l = llt.matrixL();
  return 2.0 * l.diagonal().array().log().sum();
}

// Largest-magnitude entry positive.
void fix_sign(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) {
  Eigen::Index arg = 0;
  row.cwiseAbs().maxCoeff(&arg);
  if (row(arg) < 0.0) row = -row;
}

}  // namespace

std::size_t default_lda_dim(std::size_t d, std::size_t n_speakers) {
  const std::size_t by_speakers = n_speakers > 1 ? n_speakers - 1 : 1;
  return std::min({d, by_speakers, std::size_t{150}});
}

std::vector<double> compute_balancing_weights(const GroupAssignment& groups) {
  if (groups.num_groups() == 0) throw DataError("no groups to balance");
  const double g = static_cast<double>(groups.num_groups());
  std::vector<double> w(groups.group_of.size(), 0.0);
  for (std::size_t k = 0; k < groups.num_groups(); ++k) {
    const auto& members = groups.members[k];
    if (members.empty())
      throw DataError("group '" + groups.labels[k] + "' is empty");
    const double wk = 1.0 / (g * static_cast<double>(members.size()));
    for (auto i : members) w[i] = wk;
  }
  return w;
}

std::vector<double> normalize_weights(std::span<const double> weights,
                                      std::size_t n) {
  if (weights.empty()) return std::vector<double>(n, 1.0);
  if (weights.size() != n)
    throw DataError("weights are not aligned with the samples");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw DataError("sample weights must be finite and non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw DataError("sample weights sum to zero");
  if (std::all_of(weights.begin(), weights.end(),
                  [&](double w) { return w == weights.front(); }))
    return std::vector<double>(n, 1.0);
  const double mean = total / static_cast<double>(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = weights[i] / mean;
  return out;
}

Eigen::VectorXd weighted_mean(const Eigen::MatrixXd& data,
                              std::span<const double> weights) {
  const auto w = normalize_weights(weights, static_cast<std::size_t>(data.rows()));
  Eigen::VectorXd m = Eigen::VectorXd::Zero(data.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    m += w[static_cast<std::size_t>(i)] * data.row(i).transpose();
    total += w[static_cast<std::size_t>(i)];
  }
  return m / total;
}

Eigen::MatrixXd fit_lda(const Eigen::MatrixXd& data,
                        const std::vector<std::string>& speakers,
                        std::span<const double> weights, std::size_t dim) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto d = static_cast<std::size_t>(data.cols());
  if (speakers.size() != n) throw DataError("speaker labels not aligned with data");
  const auto spk = index_speakers(speakers);
  if (spk.count < 2) throw DataError("LDA needs at least two speakers");
  if (dim < 1 || dim > std::min(d, spk.count - 1))
    throw ConfigError("LDA dimension " + std::to_string(dim) +
                      " exceeds min(d, n_speakers - 1) = " +
                      std::to_string(std::min(d, spk.count - 1)));
  const auto w = normalize_weights(weights, n);

  double total = 0.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  Eigen::MatrixXd spk_sum =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spk.count),
                            static_cast<Eigen::Index>(d));
  std::vector<double> spk_weight(spk.count, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = static_cast<Eigen::Index>(spk.of_sample[i]);
    spk_sum.row(s) += w[i] * data.row(static_cast<Eigen::Index>(i));
    spk_weight[spk.of_sample[i]] += w[i];
    mean += w[i] * data.row(static_cast<Eigen::Index>(i)).transpose();
    total += w[i];
  }
  mean /= total;

  const auto dd = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(dd, dd);
  Eigen::MatrixXd spk_mean(spk_sum.rows(), dd);
  for (std::size_t s = 0; s < spk.count; ++s) {
    const auto r = static_cast<Eigen::Index>(s);
    if (spk_weight[s] > 0.0) spk_mean.row(r) = spk_sum.row(r) / spk_weight[s];
    else spk_mean.row(r).setZero();
    const Eigen::VectorXd diff = spk_mean.row(r).transpose() - mean;
    between += spk_weight[s] * diff * diff.transpose();
  }
  Eigen::MatrixXd within = Eigen::MatrixXd::Zero(dd, dd);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd diff =
        (data.row(static_cast<Eigen::Index>(i)) -
         spk_mean.row(static_cast<Eigen::Index>(spk.of_sample[i])))
            .transpose();
    within += w[i] * diff * diff.transpose();
  }
  between = symmetrize(between / total);
  within = symmetrize(within / total);
  {
    Eigen::LLT<Eigen::MatrixXd> llt(within);
    if (llt.info() != Eigen::Success)
      throw NumericalError("within-speaker scatter is singular; LDA undefined");
  }

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      between, within, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (solver.info() != Eigen::Success)
    throw NumericalError("generalized eigen-decomposition failed in LDA");
  const auto& vecs = solver.eigenvectors();
  Eigen::MatrixXd proj(static_cast<Eigen::Index>(dim), dd);
  for (std::size_t k = 0; k < dim; ++k) {
    proj.row(static_cast<Eigen::Index>(k)) =
        vecs.col(dd - 1 - static_cast<Eigen::Index>(k)).transpose();
    fix_sign(proj.row(static_cast<Eigen::Index>(k)));
  }
  return proj;
}

Eigen::VectorXd length_normalize(const Eigen::VectorXd& x) {
  const double norm = x.norm();
  if (!(norm > 0.0)) throw DataError("cannot length-normalize a zero vector");
  return std::sqrt(static_cast<double>(x.size())) * x / norm;
}

PldaFitResult fit_plda(const Eigen::MatrixXd& data,
                       const std::vector<std::string>& speakers,
                       std::span<const double> weights,
                       const PldaFitOptions& options) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto p = data.cols();
  if (speakers.size() != n) throw DataError("speaker labels not aligned with data");
  const auto spk = index_speakers(speakers);
  if (spk.count < 2) throw DataError("PLDA needs at least two speakers");
  const auto w = normalize_weights(weights, n);

  // Per-speaker sufficient statistics.
  const auto S = spk.count;
  std::vector<std::size_t> count(S, 0);
  std::vector<double> omega(S, 0.0);
  Eigen::MatrixXd mean_s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S), p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = spk.of_sample[i];
    ++count[s];
    omega[s] += w[i];
    mean_s.row(static_cast<Eigen::Index>(s)) += data.row(static_cast<Eigen::Index>(i));
  }
  if (*std::max_element(count.begin(), count.end()) < 2)
    throw DataError("PLDA needs a speaker with at least two samples");
  for (std::size_t s = 0; s < S; ++s) {
    mean_s.row(static_cast<Eigen::Index>(s)) /= static_cast<double>(count[s]);
    omega[s] /= static_cast<double>(count[s]);
  }
  // Weighted within-speaker scatter around speaker means (fixed across EM).
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = static_cast<Eigen::Index>(spk.of_sample[i]);
    const Eigen::VectorXd diff =
        (data.row(static_cast<Eigen::Index>(i)) - mean_s.row(s)).transpose();
    scatter += omega[static_cast<std::size_t>(s)] * diff * diff.transpose();
  }
  scatter = symmetrize(scatter);
  double total_spk = 0.0, total_obs = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    total_spk += omega[s];
    total_obs += omega[s] * static_cast<double>(count[s]);
  }

  // Moment initialization.
  Plda model;
  model.mu = Eigen::VectorXd::Zero(p);
  for (std::size_t s = 0; s < S; ++s)
    model.mu += omega[s] * static_cast<double>(count[s]) *
                mean_s.row(static_cast<Eigen::Index>(s)).transpose();
  model.mu /= total_obs;
  double within_dof = 0.0;
  for (std::size_t s = 0; s < S; ++s)
    within_dof += omega[s] * static_cast<double>(count[s] - 1);
  if (!(within_dof > 0.0))
    throw DataError("PLDA needs repeated samples from weighted speakers");
  model.within = scatter / within_dof;
  Eigen::MatrixXd between_means = Eigen::MatrixXd::Zero(p, p);
  double inv_count = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const Eigen::VectorXd diff =
        mean_s.row(static_cast<Eigen::Index>(s)).transpose() - model.mu;
    between_means += omega[s] * diff * diff.transpose();
    inv_count += omega[s] / static_cast<double>(count[s]);
  }
  between_means /= total_spk;
  inv_count /= total_spk;
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        symmetrize(between_means - inv_count * model.within));
    const double floor = 1e-3 * model.within.trace() / static_cast<double>(p);
    const Eigen::VectorXd vals = es.eigenvalues().cwiseMax(floor);
    model.between =
        symmetrize(es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose());
  }

  PldaFitResult result;
  const double log2pi = std::log(2.0 * std::numbers::pi);
  std::map<std::size_t, Eigen::MatrixXd> gain;       // n -> B (W + nB)^-1
  std::map<std::size_t, Eigen::MatrixXd> post_cov;   // n -> posterior cov
  std::map<std::size_t, double> log_det_total;       // n -> log|W + nB|
  Eigen::MatrixXd u_bar(static_cast<Eigen::Index>(S), p);

  for (std::size_t iter = 0; iter <= options.n_iters; ++iter) {
    Eigen::LLT<Eigen::MatrixXd> w_llt(model.within);
    if (w_llt.info() != Eigen::Success)
      throw NumericalError("PLDA within-speaker covariance became singular at "
                           "EM iteration " + std::to_string(iter));
    const Eigen::MatrixXd w_inv =
        w_llt.solve(Eigen::MatrixXd::Identity(p, p));
    const double log_det_w =
        2.0 * Eigen::MatrixXd(w_llt.matrixL()).diagonal().array().log().sum();

    gain.clear();
    post_cov.clear();
    log_det_total.clear();
    for (auto c : count) {
      if (gain.count(c)) continue;
      const double nc = static_cast<double>(c);
      const Eigen::MatrixXd total = symmetrize(model.within + nc * model.between);
      Eigen::LLT<Eigen::MatrixXd> t_llt(total);
      if (t_llt.info() != Eigen::Success)
        throw NumericalError("PLDA speaker covariance singular at EM iteration " +
                             std::to_string(iter));
      const Eigen::MatrixXd g =
          t_llt.solve(model.between).transpose();  // B (W + nB)^-1
      gain[c] = g;
      post_cov[c] = symmetrize(model.between - nc * g * model.between);
      log_det_total[c] = log_det_pd(total, "PLDA speaker covariance");
    }

    // E-step and weighted log-likelihood at the current parameters.
    double ll = -0.5 * (w_inv.cwiseProduct(scatter)).sum();
    for (std::size_t s = 0; s < S; ++s) {
      const auto r = static_cast<Eigen::Index>(s);
      const double nc = static_cast<double>(count[s]);
      const Eigen::VectorXd centered = mean_s.row(r).transpose() - model.mu;
      const Eigen::VectorXd f = nc * centered;
      const Eigen::VectorXd u = gain[count[s]] * f;
      u_bar.row(r) = u.transpose();
      const double quad = nc * centered.dot(w_inv * centered);
      ll += omega[s] * (-0.5 * nc * static_cast<double>(p) * log2pi -
                        0.5 * (nc - 1.0) * log_det_w -
                        0.5 * log_det_total[count[s]] - 0.5 * quad +
                        0.5 * f.dot(w_inv * u));
    }
    if (!std::isfinite(ll))
      throw NumericalError("PLDA log-likelihood is not finite at EM iteration " +
                           std::to_string(iter));
    if (!result.log_likelihood.empty()) {
      const double prev = result.log_likelihood.back();
      if (ll < prev - 1e-9 * std::abs(prev))
        throw NumericalError("PLDA log-likelihood decreased at EM iteration " +
                             std::to_string(iter));
      result.log_likelihood.push_back(ll);
      if ((ll - prev) / total_obs < options.tolerance) break;
    } else {
      result.log_likelihood.push_back(ll);
    }
    if (iter == options.n_iters) break;

    // M-step.
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(p);
    for (std::size_t s = 0; s < S; ++s) {
      const auto r = static_cast<Eigen::Index>(s);
      mu += omega[s] * static_cast<double>(count[s]) *
            (mean_s.row(r) - u_bar.row(r)).transpose();
    }
    mu /= total_obs;
    Eigen::MatrixXd within = scatter;
    Eigen::MatrixXd between = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t s = 0; s < S; ++s) {
      const auto r = static_cast<Eigen::Index>(s);
      const double nc = static_cast<double>(count[s]);
      const Eigen::VectorXd u = u_bar.row(r).transpose();
      const Eigen::VectorXd resid = mean_s.row(r).transpose() - mu - u;
      const auto& pc = post_cov[count[s]];
      within += omega[s] * nc * (resid * resid.transpose() + pc);
      between += omega[s] * (u * u.transpose() + pc);
    }
    model.mu = mu;
    model.within = symmetrize(within / total_obs);
    model.between = symmetrize(between / total_spk);
  }
  result.model = std::move(model);
  return result;
}

TwoCovarianceScorer::TwoCovarianceScorer(const Eigen::MatrixXd& between,
                                         const Eigen::MatrixXd& within) {
  const auto p = between.rows();
  if (between.cols() != p || within.rows() != p || within.cols() != p)
    throw DataError("PLDA covariance shapes do not match");
  const Eigen::MatrixXd total = symmetrize(between + within);
  Eigen::LLT<Eigen::MatrixXd> t_llt(total);
  if (t_llt.info() != Eigen::Success)
    throw NumericalError("PLDA total covariance is not positive definite");
  const Eigen::MatrixXd t_inv = t_llt.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd schur = symmetrize(total - between * t_inv * between);
  Eigen::LLT<Eigen::MatrixXd> s_llt(schur);
  if (s_llt.info() != Eigen::Success)
    throw NumericalError("PLDA conditional covariance is not positive definite");
  const Eigen::MatrixXd a = s_llt.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd c = -t_inv * between * a;
  q_ = symmetrize(t_inv - a);
  p_ = symmetrize(-c);
  k_ = 0.5 * log_det_pd(total, "PLDA total covariance") -
       0.5 * log_det_pd(schur, "PLDA conditional covariance");
}

double TwoCovarianceScorer::operator()(const Eigen::VectorXd& x1,
                                       const Eigen::VectorXd& x2) const {
  return 0.5 * x1.dot(q_ * x1) + 0.5 * x2.dot(q_ * x2) + x1.dot(p_ * x2) + k_;
}

double plda_llr(const Plda& plda, const Eigen::VectorXd& x1,
                const Eigen::VectorXd& x2) {
  return TwoCovarianceScorer(plda.between, plda.within)(x1, x2);
}

Eigen::VectorXd GenerativeBackend::embed(const Eigen::VectorXd& x) const {
  return length_normalize(lda * (x - mean)) - plda.mu;
}

metrics::AffineMap fit_calibration(std::span<const double> raw,
                                   std::span<const std::uint8_t> targets,
                                   std::span<const double> weights, double pi) {
  metrics::AffineFitOptions opts;
  opts.gradient_tolerance = 1e-8;
  return metrics::fit_affine(raw, targets, weights, pi, opts);
}

ScoreSet score_pipeline(const GenerativeBackend& backend,
                        const EmbeddingSet& set, const TrialIndex& trials) {
  if (set.dim() != static_cast<std::size_t>(backend.mean.size()))
    throw DataError("embedding dimension does not match the model");
  const TwoCovarianceScorer scorer(backend.plda.between, backend.plda.within);
  // Per-sample halves of the quadratic form, so each trial costs O(p).
  const auto n = set.size();
  const auto p = backend.lda.rows();
  Eigen::MatrixXd emb(static_cast<Eigen::Index>(n), p);
  Eigen::MatrixXd cross(static_cast<Eigen::Index>(n), p);
  std::vector<double> self(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd e = backend.embed(set.vector(i));
    emb.row(static_cast<Eigen::Index>(i)) = e.transpose();
    cross.row(static_cast<Eigen::Index>(i)) = (scorer.cross() * e).transpose();
    self[i] = 0.5 * e.dot(scorer.quadratic() * e);
  }
  ScoreSet out;
  out.raw.resize(trials.size());
  out.llr.resize(trials.size());
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const auto i = trials.enroll[t];
    const auto j = trials.test[t];
    const double raw =
        self[i] + self[j] +
        emb.row(static_cast<Eigen::Index>(i)).dot(cross.row(static_cast<Eigen::Index>(j))) +
        scorer.constant();
    out.raw[t] = raw;
    out.llr[t] = backend.cal_a * raw + backend.cal_b;
  }
  return out;
}

ScoreSet score_pipeline(const GenerativeBackend& backend,
                        const EmbeddingSet& set, const TrialList& trials) {
  return score_pipeline(backend, set, resolve_trials(set, trials));
}

GenerativeBackend train_generative(const EmbeddingSet& train,
                                   const GenerativeOptions& options,
                                   const EmbeddingSet* calibration,
                                   GenerativeTrainInfo* info) {
  if (train.empty()) throw DataError("empty training set");
  const auto groups = build_group_assignment(train, options.min_speakers);
  std::vector<double> weights;
  if (options.balance) weights = compute_balancing_weights(groups);
  const auto w = normalize_weights(weights, train.size());

  const Eigen::MatrixXd x = train.matrix();
  const auto n_spk = train.speaker_list().size();
  const auto dim = options.lda_dim.value_or(default_lda_dim(train.dim(), n_spk));

  GenerativeBackend bk;
  bk.mean = weighted_mean(x, w);
  const Eigen::MatrixXd centered = x.rowwise() - bk.mean.transpose();
  bk.lda = fit_lda(centered, train.speakers(), w, dim);
  Eigen::MatrixXd projected(centered.rows(), bk.lda.rows());
  for (Eigen::Index i = 0; i < centered.rows(); ++i)
    projected.row(i) =
        length_normalize(bk.lda * centered.row(i).transpose()).transpose();
  auto fit = fit_plda(projected, train.speakers(), w, options.plda);
  bk.plda = std::move(fit.model);

  // Calibration on within-group trials, trial weight = product of sample
  // weights so each group keeps its share under balancing.
  const EmbeddingSet& cal_set = calibration ? *calibration : train;
  const auto cal_groups = calibration
                              ? build_group_assignment(cal_set, options.min_speakers)
                              : groups;
  std::vector<double> cal_w;
  if (options.balance) {
    cal_w = normalize_weights(compute_balancing_weights(cal_groups), cal_set.size());
  } else {
    cal_w.assign(cal_set.size(), 1.0);
  }
  std::size_t n_tar = 0, n_non = 0;
  const auto& files = cal_set.source_files();
  const auto& spks = cal_set.speakers();
  for (std::size_t i = 0; i < cal_set.size(); ++i)
    for (std::size_t j = i + 1; j < cal_set.size(); ++j) {
      if (files[i] == files[j] || cal_groups.group_of[i] != cal_groups.group_of[j])
        continue;
      (spks[i] == spks[j] ? n_tar : n_non) += 1;
    }
  double keep_non = 1.0;
  if (n_tar + n_non > options.max_calibration_trials && n_non > 0) {
    const double budget = static_cast<double>(options.max_calibration_trials) -
                          static_cast<double>(n_tar);
    keep_non = std::clamp(budget / static_cast<double>(n_non), 1e-6, 1.0);
  }
  std::mt19937_64 rng(options.seed);
  std::bernoulli_distribution keep(keep_non);
  TrialIndex cal_trials;
  std::vector<double> trial_w;
  for (std::size_t i = 0; i < cal_set.size(); ++i)
    for (std::size_t j = i + 1; j < cal_set.size(); ++j) {
      if (files[i] == files[j] || cal_groups.group_of[i] != cal_groups.group_of[j])
        continue;
      const bool target = spks[i] == spks[j];
      if (!target && keep_non < 1.0 && !keep(rng)) continue;
      cal_trials.enroll.push_back(i);
      cal_trials.test.push_back(j);
      cal_trials.target.push_back(target ? 1 : 0);
      trial_w.push_back(cal_w[i] * cal_w[j]);
    }
  bk.cal_a = 1.0;
  bk.cal_b = 0.0;
  const auto raw = score_pipeline(bk, cal_set, cal_trials).raw;
  const auto map = fit_calibration(raw, cal_trials.target, trial_w, options.pi);
  bk.cal_a = map.scale;
  bk.cal_b = map.offset;

  if (info) {
    info->groups = groups.labels;
    info->plda_log_likelihood = std::move(fit.log_likelihood);
    info->calibration_trials = cal_trials.size();
  }
  return bk;
}

}  // namespace fairspk::generative
