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

#include "fairspk/discriminative.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

#include "fairspk/errors.hpp"
#include "fairspk/trials.hpp"

namespace fairspk::discriminative {

namespace {

using metrics::sigmoid;
using metrics::softplus;

Eigen::MatrixXd sym(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// Forward state of the embedding stage for one sample.
struct Embedded {
  Eigen::VectorXd centered;  // x - m
  Eigen::VectorXd y;         // L (x - m)
  double norm = 0.0;         // ||y||
  Eigen::VectorXd f;         // sqrt(p) y / ||y||
};

Embedded embed_forward(const DiscriminativeBackend& bk, const Eigen::VectorXd& x) {
  Embedded e;
  e.centered = x - bk.mean;
  e.y = bk.lda * e.centered;
  e.norm = e.y.norm();
  if (!std::isfinite(e.norm))
    throw NumericalError("projected embedding is not finite");
  if (!(e.norm > 0.0))
    throw DataError("projected embedding is zero; cannot length-normalize");
  e.f = std::sqrt(static_cast<double>(e.y.size())) * e.y / e.norm;
  return e;
}

Model zeros_like(const Model& m) {
  Model g;
  const auto& b = m.backend;
  g.backend.mean = Eigen::VectorXd::Zero(b.mean.size());
  g.backend.lda = Eigen::MatrixXd::Zero(b.lda.rows(), b.lda.cols());
  g.backend.cross = Eigen::MatrixXd::Zero(b.cross.rows(), b.cross.cols());
  g.backend.quadratic = Eigen::MatrixXd::Zero(b.quadratic.rows(), b.quadratic.cols());
  g.backend.linear = Eigen::VectorXd::Zero(b.linear.size());
  g.backend.constant = 0.0;
  g.backend.cal_a = 0.0;
  g.backend.cal_b = 0.0;
  if (m.condition) {
    const auto& c = *m.condition;
    ConditionCalibrator z;
    z.weights = Eigen::MatrixXd::Zero(c.weights.rows(), c.weights.cols());
    z.bias = Eigen::VectorXd::Zero(c.bias.size());
    z.head_a = Eigen::VectorXd::Zero(c.head_a.size());
    z.head_b = Eigen::VectorXd::Zero(c.head_b.size());
    z.bias_a = 0.0;
    z.bias_b = 0.0;
    g.condition = z;
  }
  return g;
}

// Visits every parameter block as (name, pointer, size).
template <typename ModelT, typename Fn>
void for_each_block(ModelT& m, Fn&& fn) {
  auto& b = m.backend;
  fn("mean", b.mean.data(), static_cast<std::size_t>(b.mean.size()));
  fn("lda", b.lda.data(), static_cast<std::size_t>(b.lda.size()));
  fn("cross", b.cross.data(), static_cast<std::size_t>(b.cross.size()));
  fn("quadratic", b.quadratic.data(), static_cast<std::size_t>(b.quadratic.size()));
  fn("linear", b.linear.data(), static_cast<std::size_t>(b.linear.size()));
  fn("constant", &b.constant, std::size_t{1});
  fn("cal_a", &b.cal_a, std::size_t{1});
  fn("cal_b", &b.cal_b, std::size_t{1});
  if (m.condition) {
    auto& c = *m.condition;
    fn("cond_weights", c.weights.data(), static_cast<std::size_t>(c.weights.size()));
    fn("cond_bias", c.bias.data(), static_cast<std::size_t>(c.bias.size()));
    fn("head_a", c.head_a.data(), static_cast<std::size_t>(c.head_a.size()));
    fn("bias_a", &c.bias_a, std::size_t{1});
    fn("head_b", c.head_b.data(), static_cast<std::size_t>(c.head_b.size()));
    fn("bias_b", &c.bias_b, std::size_t{1});
  }
}

}  // namespace

Eigen::VectorXd DiscriminativeBackend::embed(const Eigen::VectorXd& x) const {
  return embed_forward(*this, x).f;
}

double DiscriminativeBackend::raw(const Eigen::VectorXd& f1,
                                  const Eigen::VectorXd& f2) const {
  // Every sum pairs the two sides commutatively, so swapping them is exact.
  const double c12 = 0.5 * (f1.dot(cross * f2) + f2.dot(cross * f1));
  const double q12 = f1.dot(quadratic * f1) + f2.dot(quadratic * f2);
  return c12 + q12 + linear.dot(f1 + f2) + constant;
}

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw ConfigError("softplus output must be positive");
  // y + log(1 - exp(-y)), stable for small and large y.
  return y + std::log(-std::expm1(-y));
}

ConditionCalibrator ConditionCalibrator::neutral(std::size_t p, std::size_t q,
                                                 double cal_a, double cal_b) {
  if (q == 0) throw ConfigError("condition dimension must be >= 1");
  ConditionCalibrator c;
  const auto qq = static_cast<Eigen::Index>(q);
  c.weights = Eigen::MatrixXd::Zero(qq, static_cast<Eigen::Index>(p));
  c.bias = Eigen::VectorXd::Zero(qq);
  c.head_a = Eigen::VectorXd::Zero(2 * (qq + 1));
  c.head_b = Eigen::VectorXd::Zero(2 * (qq + 1));
  c.bias_a = inverse_softplus(cal_a);
  c.bias_b = cal_b;
  return c;
}

ConditionCalibrator ConditionCalibrator::initialize(std::size_t p, std::size_t q,
                                                    double cal_a, double cal_b,
                                                    double init_scale,
                                                    std::uint64_t seed) {
  auto c = neutral(p, q, cal_a, cal_b);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(
      0.0, init_scale / std::sqrt(static_cast<double>(p)));
  for (Eigen::Index i = 0; i < c.weights.size(); ++i) c.weights.data()[i] = normal(rng);
  return c;
}

Eigen::VectorXd ConditionCalibrator::features(const Eigen::VectorXd& f,
                                              double duration_s) const {
  if (!(duration_s > 0.0)) throw DataError("durations must be positive");
  const auto q = weights.rows();
  Eigen::VectorXd z(q + 1);
  z.head(q) = (weights * f + bias).array().tanh().matrix();
  z(q) = std::log(duration_s);
  return z;
}

ConditionCalibrator::Affine ConditionCalibrator::calibrate(
    const Eigen::VectorXd& z1, const Eigen::VectorXd& z2) const {
  const auto n = z1.size();
  const double lin_a = head_a.head(n).dot(z1 + z2) +
                       head_a.tail(n).dot(z1.cwiseProduct(z2)) + bias_a;
  const double lin_b = head_b.head(n).dot(z1 + z2) +
                       head_b.tail(n).dot(z1.cwiseProduct(z2)) + bias_b;
  return {softplus(lin_a), lin_b};
}

double Model::score(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                    double dur1_s, double dur2_s) const {
  if (condition) return dcaplda_score(backend, *condition, x1, x2, dur1_s, dur2_s);
  return dplda_score(backend, x1, x2);
}

DiscriminativeBackend init_from_generative(const generative::GenerativeBackend& gen) {
  const generative::TwoCovarianceScorer scorer(gen.plda.between, gen.plda.within);
  const auto& q = scorer.quadratic();
  const auto& p = scorer.cross();
  const auto& mu = gen.plda.mu;
  DiscriminativeBackend bk;
  bk.mean = gen.mean;
  bk.lda = gen.lda;
  bk.cross = p;
  bk.quadratic = 0.5 * q;
  bk.linear = -(q + p) * mu;
  bk.constant = scorer.constant() + mu.dot((q + p) * mu);
  bk.cal_a = gen.cal_a;
  bk.cal_b = gen.cal_b;
  return bk;
}

double dplda_score(const DiscriminativeBackend& bk, const Eigen::VectorXd& x1,
                   const Eigen::VectorXd& x2) {
  return bk.cal_a * bk.raw(bk.embed(x1), bk.embed(x2)) + bk.cal_b;
}

double dcaplda_score(const DiscriminativeBackend& bk,
                     const ConditionCalibrator& cond, const Eigen::VectorXd& x1,
                     const Eigen::VectorXd& x2, double dur1_s, double dur2_s) {
  if (!(dur1_s > 0.0) || !(dur2_s > 0.0))
    throw DataError("durations must be positive");
  const auto f1 = bk.embed(x1);
  const auto f2 = bk.embed(x2);
  const auto cal = cond.calibrate(cond.features(f1, dur1_s), cond.features(f2, dur2_s));
  return cal.alpha * bk.raw(f1, f2) + cal.beta;
}

ScoreSet score(const Model& model, const EmbeddingSet& set,
               const TrialIndex& trials) {
  const auto& bk = model.backend;
  if (set.dim() != bk.input_dim())
    throw DataError("embedding dimension does not match the model");
  const auto n = static_cast<Eigen::Index>(set.size());
  const auto p = static_cast<Eigen::Index>(bk.dim());
  Eigen::MatrixXd f(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    f.row(i) = bk.embed(set.vector(static_cast<std::size_t>(i))).transpose();
  const Eigen::MatrixXd cross_f = f * sym(bk.cross);
  const Eigen::MatrixXd quad_f = f * sym(bk.quadratic);
  Eigen::VectorXd quad(n), lin(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    quad(i) = f.row(i).dot(quad_f.row(i));
    lin(i) = bk.linear.dot(f.row(i).transpose());
  }
  std::vector<Eigen::VectorXd> z;
  if (model.condition) {
    z.reserve(set.size());
    for (Eigen::Index i = 0; i < n; ++i)
      z.push_back(model.condition->features(f.row(i).transpose(),
                                            set.durations()[static_cast<std::size_t>(i)]));
  }
  ScoreSet out;
  out.raw.resize(trials.size());
  out.llr.resize(trials.size());
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const auto i = static_cast<Eigen::Index>(trials.enroll[t]);
    const auto j = static_cast<Eigen::Index>(trials.test[t]);
    const double c12 = 0.5 * (f.row(i).dot(cross_f.row(j)) + f.row(j).dot(cross_f.row(i)));
    const double raw = c12 + (quad(i) + quad(j)) + (lin(i) + lin(j)) + bk.constant;
    out.raw[t] = raw;
    if (model.condition) {
      const auto cal = model.condition->calibrate(z[static_cast<std::size_t>(i)],
                                                  z[static_cast<std::size_t>(j)]);
      out.llr[t] = cal.alpha * raw + cal.beta;
    } else {
      out.llr[t] = bk.cal_a * raw + bk.cal_b;
    }
  }
  return out;
}

BalancedBatcher::BalancedBatcher(const GroupAssignment& groups,
                                 const std::vector<std::string>& speakers,
                                 std::size_t batch_size, std::uint64_t seed)
    : rng_(seed) {
  const auto g = groups.num_groups();
  if (g == 0) throw DataError("no groups to batch");
  if (batch_size == 0 || batch_size % g != 0)
    throw ConfigError("batch size " + std::to_string(batch_size) +
                      " is not divisible by the number of groups (" +
                      std::to_string(g) + ")");
  per_group_ = batch_size / g;
  std::size_t largest = 0;
  for (std::size_t k = 0; k < g; ++k) {
    const auto& members = groups.members[k];
    if (members.empty()) throw DataError("group '" + groups.labels[k] + "' is empty");
    std::map<std::string, std::vector<std::size_t>> per_spk;
    std::vector<std::string> order;
    for (auto i : members) {
      auto [it, inserted] = per_spk.try_emplace(speakers.at(i));
      if (inserted) order.push_back(speakers[i]);
      it->second.push_back(i);
    }
    std::vector<std::vector<std::size_t>> lists;
    for (const auto& s : order) lists.push_back(per_spk[s]);
    by_speaker_.push_back(std::move(lists));
    largest = std::max(largest, members.size());
  }
  batches_per_epoch_ = (largest + per_group_ - 1) / per_group_;
}

std::vector<std::size_t> BalancedBatcher::shuffled(std::size_t group) {
  auto lists = by_speaker_[group];
  std::shuffle(lists.begin(), lists.end(), rng_);
  std::vector<std::size_t> out;
  for (auto& l : lists) {
    std::shuffle(l.begin(), l.end(), rng_);
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

std::vector<std::vector<std::size_t>> BalancedBatcher::next_epoch() {
  const auto g = by_speaker_.size();
  std::vector<std::vector<std::size_t>> streams(g);
  std::vector<std::size_t> pos(g, 0);
  for (std::size_t k = 0; k < g; ++k) streams[k] = shuffled(k);
  std::vector<std::vector<std::size_t>> batches(batches_per_epoch_);
  for (auto& batch : batches) {
    batch.reserve(per_group_ * g);
    for (std::size_t k = 0; k < g; ++k) {
      for (std::size_t m = 0; m < per_group_; ++m) {
        if (pos[k] == streams[k].size()) {
          streams[k] = shuffled(k);
          pos[k] = 0;
        }
        batch.push_back(streams[k][pos[k]++]);
      }
    }
  }
  return batches;
}

BalancedBatcher make_balanced_batches(const GroupAssignment& groups,
                                      const std::vector<std::string>& speakers,
                                      std::size_t batch_size,
                                      std::uint64_t seed) {
  return BalancedBatcher(groups, speakers, batch_size, seed);
}

void TrainConfig::validate(std::size_t n_groups) const {
  if (!(pi > 0.0 && pi < 1.0)) throw ConfigError("pi must lie strictly between 0 and 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (balance == Balance::kByGroup && batch_size % n_groups != 0)
    throw ConfigError("batch size " + std::to_string(batch_size) +
                      " is not divisible by the number of groups (" +
                      std::to_string(n_groups) + ")");
}

TrialIndex batch_trials(const EmbeddingSet& set,
                        std::span<const std::size_t> batch) {
  TrialIndex out;
  const auto& files = set.source_files();
  const auto& speakers = set.speakers();
  for (std::size_t a = 0; a < batch.size(); ++a)
    for (std::size_t b = a + 1; b < batch.size(); ++b) {
      const auto i = batch[a], j = batch[b];
      if (i == j || files[i] == files[j]) continue;
      out.enroll.push_back(a);
      out.test.push_back(b);
      out.target.push_back(speakers[i] == speakers[j] ? 1 : 0);
    }
  return out;
}

double batch_loss(const Model& model, const EmbeddingSet& set,
                  std::span<const std::size_t> batch, double pi,
                  Model* gradient) {
  const auto& bk = model.backend;
  const auto nb = static_cast<Eigen::Index>(batch.size());
  const auto p = static_cast<Eigen::Index>(bk.dim());
  const double tau = metrics::prior_logit(pi);
  // Trials are indexed by batch position.
  const auto pairs = batch_trials(set, batch);

  std::vector<Embedded> emb;
  emb.reserve(batch.size());
  Eigen::MatrixXd f(nb, p);
  for (Eigen::Index a = 0; a < nb; ++a) {
    emb.push_back(embed_forward(bk, set.vector(batch[static_cast<std::size_t>(a)])));
    f.row(a) = emb.back().f.transpose();
  }
  const Eigen::MatrixXd cross_s = sym(bk.cross);
  const Eigen::MatrixXd quad_s = sym(bk.quadratic);
  const Eigen::MatrixXd cross_f = f * cross_s;
  const Eigen::MatrixXd gram = cross_f * f.transpose();
  Eigen::VectorXd self(nb);
  for (Eigen::Index a = 0; a < nb; ++a)
    self(a) = f.row(a).dot(f.row(a) * quad_s) + bk.linear.dot(f.row(a).transpose());

  const ConditionCalibrator* cond = model.condition ? &*model.condition : nullptr;
  std::vector<Eigen::VectorXd> z;
  if (cond) {
    for (Eigen::Index a = 0; a < nb; ++a)
      z.push_back(cond->features(f.row(a).transpose(),
                                 set.durations()[batch[static_cast<std::size_t>(a)]]));
  }

  std::size_t n_tar = 0, n_non = 0;
  for (auto t : pairs.target) (t ? n_tar : n_non) += 1;
  const double w_tar = n_tar ? pi / static_cast<double>(n_tar) : 0.0;
  const double w_non = n_non ? (1.0 - pi) / static_cast<double>(n_non) : 0.0;

  Model* g = gradient;
  if (g) *g = zeros_like(model);
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(nb, nb);  // dL/draw per pair
  std::vector<Eigen::VectorXd> gz;
  if (cond && g) gz.assign(batch.size(), Eigen::VectorXd::Zero(cond->weights.rows() + 1));

  double loss = 0.0;
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    const auto a = static_cast<Eigen::Index>(pairs.enroll[t]);
    const auto b = static_cast<Eigen::Index>(pairs.test[t]);
    const double raw = gram(a, b) + self(a) + self(b) + bk.constant;
    double alpha = bk.cal_a, beta = bk.cal_b, lin_a = 0.0;
    Eigen::VectorXd phi;
    if (cond) {
      const auto& z1 = z[static_cast<std::size_t>(a)];
      const auto& z2 = z[static_cast<std::size_t>(b)];
      const auto n = z1.size();
      phi.resize(2 * n);
      phi << z1 + z2, z1.cwiseProduct(z2);
      lin_a = cond->head_a.dot(phi) + cond->bias_a;
      alpha = softplus(lin_a);
      beta = cond->head_b.dot(phi) + cond->bias_b;
    }
    const double llr = alpha * raw + beta;
    const double s = llr + tau;
    double dl;  // dLoss/dllr
    if (pairs.target[t]) {
      loss += w_tar * softplus(-s);
      dl = -w_tar * sigmoid(-s);
    } else {
      loss += w_non * softplus(s);
      dl = w_non * sigmoid(s);
    }
    if (!g) continue;
    const double draw = dl * alpha;
    coef(a, b) += draw;
    coef(b, a) += draw;
    if (cond) {
      auto& gc = *g->condition;
      const double dlin_a = dl * raw * sigmoid(lin_a);
      gc.head_a += dlin_a * phi;
      gc.bias_a += dlin_a;
      gc.head_b += dl * phi;
      gc.bias_b += dl;
      const Eigen::VectorXd gphi = dlin_a * cond->head_a + dl * cond->head_b;
      const auto n = z[0].size();
      const auto& z1 = z[static_cast<std::size_t>(a)];
      const auto& z2 = z[static_cast<std::size_t>(b)];
      gz[static_cast<std::size_t>(a)] += gphi.head(n) + gphi.tail(n).cwiseProduct(z2);
      gz[static_cast<std::size_t>(b)] += gphi.head(n) + gphi.tail(n).cwiseProduct(z1);
    } else {
      g->backend.cal_a += dl * raw;
      g->backend.cal_b += dl;
    }
  }
  if (!g) return loss;

  // Raw-score parameters.
  const Eigen::VectorXd rsum = coef.rowwise().sum();
  auto& gb = g->backend;
  gb.cross = 0.5 * f.transpose() * coef * f;
  gb.quadratic = f.transpose() * rsum.asDiagonal() * f;
  gb.linear = f.transpose() * rsum;
  gb.constant = 0.5 * rsum.sum();
  Eigen::MatrixXd gf = coef * cross_f + 2.0 * rsum.asDiagonal() * f * quad_s +
                       rsum * bk.linear.transpose();

  if (cond) {
    auto& gc = *g->condition;
    const auto q = cond->weights.rows();
    for (Eigen::Index a = 0; a < nb; ++a) {
      const auto& za = z[static_cast<std::size_t>(a)];
      const Eigen::VectorXd gh = gz[static_cast<std::size_t>(a)].head(q).cwiseProduct(
          (1.0 - za.head(q).array().square()).matrix());
      gc.weights += gh * f.row(a);
      gc.bias += gh;
      gf.row(a) += (cond->weights.transpose() * gh).transpose();
    }
  }

  // Length normalization and projection.
  const double sqrt_p = std::sqrt(static_cast<double>(p));
  for (Eigen::Index a = 0; a < nb; ++a) {
    const auto& e = emb[static_cast<std::size_t>(a)];
    const Eigen::VectorXd unit = e.y / e.norm;
    const Eigen::VectorXd gfa = gf.row(a).transpose();
    const Eigen::VectorXd gy = (sqrt_p / e.norm) * (gfa - unit * unit.dot(gfa));
    gb.lda += gy * e.centered.transpose();
    gb.mean -= bk.lda.transpose() * gy;
  }
  return loss;
}

std::vector<std::pair<std::string, std::size_t>> parameter_blocks(const Model& model) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for_each_block(model, [&](const char* name, const double*, std::size_t n) {
    out.emplace_back(name, n);
  });
  return out;
}

Eigen::VectorXd flatten(const Model& model) {
  std::vector<double> values;
  for_each_block(model, [&](const char*, const double* data, std::size_t n) {
    values.insert(values.end(), data, data + n);
  });
  return Eigen::Map<Eigen::VectorXd>(values.data(),
                                     static_cast<Eigen::Index>(values.size()));
}

void unflatten(const Eigen::VectorXd& flat, Model& model) {
  std::size_t offset = 0;
  for_each_block(model, [&](const char*, double* data, std::size_t n) {
    if (offset + n > static_cast<std::size_t>(flat.size()))
      throw DataError("flat parameter vector too short");
    std::copy_n(flat.data() + offset, n, data);
    offset += n;
  });
  if (offset != static_cast<std::size_t>(flat.size()))
    throw DataError("flat parameter vector too long");
}

double sgd_step(Model& model, const Model& gradient, double learning_rate,
                double clip_norm) {
  const Eigen::VectorXd g = flatten(gradient);
  const double norm = g.norm();
  const double scale = norm > clip_norm ? clip_norm / norm : 1.0;
  if (learning_rate == 0.0) return norm;
  unflatten(flatten(model) - learning_rate * scale * g, model);
  return norm;
}

GradientCheckResult gradient_check(const Model& model, const EmbeddingSet& set,
                                   std::span<const std::size_t> batch, double pi,
                                   double epsilon) {
  Model grad;
  batch_loss(model, set, batch, pi, &grad);
  const Eigen::VectorXd analytic = flatten(grad);
  const Eigen::VectorXd theta = flatten(model);
  const auto blocks = parameter_blocks(model);

  GradientCheckResult result;
  Model probe = model;
  std::size_t block = 0, block_end = blocks.empty() ? 0 : blocks[0].second;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    while (static_cast<std::size_t>(k) >= block_end && block + 1 < blocks.size())
      block_end += blocks[++block].second;
    Eigen::VectorXd t = theta;
    t(k) = theta(k) + epsilon;
    unflatten(t, probe);
    const double up = batch_loss(probe, set, batch, pi);
    t(k) = theta(k) - epsilon;
    unflatten(t, probe);
    const double down = batch_loss(probe, set, batch, pi);
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom =
        std::max({std::abs(analytic(k)), std::abs(numeric), 1e-3});
    const double rel = std::abs(analytic(k) - numeric) / denom;
    if (!std::isfinite(rel)) {
      result.max_relative_error = std::numeric_limits<double>::infinity();
      result.worst_block = blocks[block].first;
      continue;
    }
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_block = blocks[block].first;
    }
  }
  return result;
}

double dev_cllr(const Model& model, const EmbeddingSet& dev,
                const TrialIndex& trials, double pi) {
  const auto scores = score(model, dev, trials);
  return metrics::weighted_cllr(scores.llr, trials.target, pi);
}

TrainResult train(const Model& init, const EmbeddingSet& train_set,
                  const EmbeddingSet& dev_set, const TrainConfig& config) {
  if (train_set.empty()) throw DataError("empty training set");
  GroupAssignment groups;
  if (config.balance == Balance::kByGroup) {
    groups = build_group_assignment(train_set, config.min_speakers);
  } else {
    groups.labels = {"all"};
    groups.members = {std::vector<std::size_t>(train_set.size())};
    std::iota(groups.members[0].begin(), groups.members[0].end(), std::size_t{0});
    groups.group_of.assign(train_set.size(), 0);
  }
  config.validate(groups.num_groups());

  const auto dev_trials =
      trials::build_trial_index(dev_set, trials::TrialOptions{.within_group = true});
  std::size_t dev_tar = 0;
  for (auto t : dev_trials.target) dev_tar += t;
  if (dev_tar == 0 || dev_tar == dev_trials.size())
    throw DataError("dev set must produce both target and non-target trials");

  TrainResult result;
  result.groups = groups.labels;
  result.best_dev_cllr = std::numeric_limits<double>::infinity();
  for (auto seed : config.seeds) {
    Model model = init;
    if (model.condition) {
      const auto& c = *model.condition;
      auto fresh = ConditionCalibrator::initialize(
          model.backend.dim(), c.dim(), 1.0, 0.0, config.condition_init_scale, seed);
      fresh.bias_a = c.bias_a;
      fresh.bias_b = c.bias_b;
      fresh.head_a = c.head_a;
      fresh.head_b = c.head_b;
      model.condition = std::move(fresh);
    }
    auto batcher = make_balanced_batches(groups, train_set.speakers(),
                                         config.batch_size, seed);
    auto consider = [&](const EpochRecord& rec) {
      if (rec.dev_cllr < result.best_dev_cllr) {
        result.best_dev_cllr = rec.dev_cllr;
        result.best_seed = rec.seed;
        result.best_epoch = rec.epoch;
        result.model = model;
      }
    };
    EpochRecord start;
    start.seed = seed;
    start.dev_cllr = dev_cllr(model, dev_set, dev_trials, config.pi);
    result.log.push_back(start);
    consider(start);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
      EpochRecord rec;
      rec.seed = seed;
      rec.epoch = epoch;
      rec.batch_count_min.assign(groups.num_groups(),
                                 std::numeric_limits<std::size_t>::max());
      rec.batch_count_max.assign(groups.num_groups(), 0);
      double loss_sum = 0.0;
      const auto batches = batcher.next_epoch();
      for (std::size_t b = 0; b < batches.size(); ++b) {
        std::vector<std::size_t> counts(groups.num_groups(), 0);
        for (auto i : batches[b]) ++counts[groups.group_of[i]];
        for (std::size_t k = 0; k < counts.size(); ++k) {
          rec.batch_count_min[k] = std::min(rec.batch_count_min[k], counts[k]);
          rec.batch_count_max[k] = std::max(rec.batch_count_max[k], counts[k]);
        }
        Model grad;
        const double loss = batch_loss(model, train_set, batches[b], config.pi, &grad);
        if (!std::isfinite(loss) || !flatten(grad).allFinite())
          throw NumericalError("training diverged: non-finite loss at seed " +
                               std::to_string(seed) + ", epoch " +
                               std::to_string(epoch) + ", batch " +
                               std::to_string(b));
        loss_sum += loss;
        sgd_step(model, grad, config.learning_rate, config.clip_norm);
        if (!flatten(model).allFinite())
          throw NumericalError("training diverged: non-finite parameters at seed " +
                               std::to_string(seed) + ", epoch " +
                               std::to_string(epoch) + ", batch " +
                               std::to_string(b));
      }
      rec.train_loss = loss_sum / static_cast<double>(batches.size());
      rec.dev_cllr = dev_cllr(model, dev_set, dev_trials, config.pi);
      if (!std::isfinite(rec.dev_cllr))
        throw NumericalError("training diverged: non-finite dev Cllr at seed " +
                             std::to_string(seed) + ", epoch " + std::to_string(epoch));
      result.log.push_back(rec);
      consider(rec);
    }
  }
  return result;
}

std::string epoch_record_json(const EpochRecord& record,
                              const std::vector<std::string>& groups) {
  nlohmann::ordered_json j;
  j["seed"] = record.seed;
  j["epoch"] = record.epoch;
  j["train_loss"] = record.train_loss ? nlohmann::ordered_json(*record.train_loss)
                                      : nlohmann::ordered_json(nullptr);
  j["dev_cllr"] = record.dev_cllr;
  if (!record.batch_count_min.empty()) {
    auto& comp = j["batch_group_counts"] = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < groups.size() && k < record.batch_count_min.size(); ++k)
      comp[groups[k]] = {{"min", record.batch_count_min[k]},
                         {"max", record.batch_count_max[k]}};
  }
  return j.dump();
}

}  // namespace fairspk::discriminative
