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

#include "fairspk/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "fairspk/errors.hpp"

namespace fairspk {

namespace {

constexpr char kMagic[] = {'F', 'S', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  // Row-major tensor with its shape.
  void tensor(const std::string& name, const Eigen::MatrixXd& m) {
    str(name);
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  void scalar(const std::string& name, double v) {
    tensor(name, Eigen::MatrixXd::Constant(1, 1, v));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin)
      : data_(std::move(data)), origin_(std::move(origin)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(u8()) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(u8()) << (8 * k);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(origin_ + ": " + what);
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("truncated model file");
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

using Tensors = std::map<std::string, Eigen::MatrixXd>;

const Eigen::MatrixXd& take(const Tensors& t, const std::string& name,
                            const Reader& in) {
  auto it = t.find(name);
  if (it == t.end()) in.fail("missing tensor '" + name + "'");
  return it->second;
}

Eigen::VectorXd take_vector(const Tensors& t, const std::string& name,
                            const Reader& in) {
  const auto& m = take(t, name, in);
  if (m.cols() != 1) in.fail("tensor '" + name + "' is not a column vector");
  return m.col(0);
}

double take_scalar(const Tensors& t, const std::string& name, const Reader& in) {
  const auto& m = take(t, name, in);
  if (m.size() != 1) in.fail("tensor '" + name + "' is not a scalar");
  return m(0, 0);
}

void check_square(const Eigen::MatrixXd& m, Eigen::Index n, const std::string& name,
                  const Reader& in) {
  if (m.rows() != n || m.cols() != n)
    in.fail("tensor '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
            std::to_string(m.cols()) + ", expected " + std::to_string(n) + "x" +
            std::to_string(n));
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kPlda: return "plda";
    case ModelKind::kDplda: return "dplda";
    case ModelKind::kDcaplda: return "dcaplda";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "plda") return ModelKind::kPlda;
  if (text == "dplda") return ModelKind::kDplda;
  if (text == "dcaplda") return ModelKind::kDcaplda;
  throw ConfigError("unknown model kind '" + text +
                    "' (expected plda, dplda or dcaplda)");
}

ScoreSet StoredModel::score(const EmbeddingSet& set, const TrialIndex& trials) const {
  if (generative) {
    if (set.dim() != static_cast<std::size_t>(generative->mean.size()))
      throw DataError("embedding dimension " + std::to_string(set.dim()) +
                      " does not match the model (" +
                      std::to_string(generative->mean.size()) + ")");
    return generative::score_pipeline(*generative, set, trials);
  }
  if (discriminative) return discriminative::score(*discriminative, set, trials);
  throw DataError("model holds no backend");
}

void save_model(const std::filesystem::path& path, const StoredModel& model) {
  Writer out;
  out.raw(kMagic, sizeof(kMagic));
  out.u32(kVersion);
  out.u8(static_cast<std::uint8_t>(model.kind));
  out.u32(static_cast<std::uint32_t>(model.config.size()));
  for (const auto& [k, v] : model.config) {
    out.str(k);
    out.str(v);
  }
  out.u32(static_cast<std::uint32_t>(model.groups.size()));
  for (const auto& g : model.groups) out.str(g);

  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
  auto add = [&](const std::string& name, const Eigen::MatrixXd& m) {
    tensors.emplace_back(name, m);
  };
  auto add_scalar = [&](const std::string& name, double v) {
    tensors.emplace_back(name, Eigen::MatrixXd::Constant(1, 1, v));
  };
  if (model.kind == ModelKind::kPlda) {
    if (!model.generative) throw DataError("plda model without generative backend");
    const auto& g = *model.generative;
    add("mean", g.mean);
    add("lda", g.lda);
    add("plda_mu", g.plda.mu);
    add("plda_between", g.plda.between);
    add("plda_within", g.plda.within);
    add_scalar("cal_a", g.cal_a);
    add_scalar("cal_b", g.cal_b);
  } else {
    if (!model.discriminative)
      throw DataError(to_string(model.kind) + " model without discriminative backend");
    const auto& d = *model.discriminative;
    if ((model.kind == ModelKind::kDcaplda) != d.condition.has_value())
      throw DataError("condition network presence does not match model kind");
    const auto& b = d.backend;
    add("mean", b.mean);
    add("lda", b.lda);
    add("cross", b.cross);
    add("quadratic", b.quadratic);
    add("linear", b.linear);
    add_scalar("constant", b.constant);
    add_scalar("cal_a", b.cal_a);
    add_scalar("cal_b", b.cal_b);
    if (d.condition) {
      const auto& c = *d.condition;
      add("cond_weights", c.weights);
      add("cond_bias", c.bias);
      add("head_a", c.head_a);
      add_scalar("bias_a", c.bias_a);
      add("head_b", c.head_b);
      add_scalar("bias_b", c.bias_b);
    }
  }
  out.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) out.tensor(name, m);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write model file " + path.string());
  f.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
  if (!f) throw DataError("failed writing model file " + path.string());
}

StoredModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open model file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  Reader in(ss.str(), path.string());

  if (in.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    in.fail("not a fairspk model file");
  const auto version = in.u32();
  if (version != kVersion)
    in.fail("unsupported model version " + std::to_string(version));
  const auto kind_byte = in.u8();
  if (kind_byte > 2) in.fail("unknown model kind " + std::to_string(kind_byte));

  StoredModel model;
  model.kind = static_cast<ModelKind>(kind_byte);
  const auto n_config = in.u32();
  for (std::uint32_t k = 0; k < n_config; ++k) {
    auto key = in.str();
    auto value = in.str();
    model.config.emplace_back(std::move(key), std::move(value));
  }
  const auto n_groups = in.u32();
  for (std::uint32_t k = 0; k < n_groups; ++k) model.groups.push_back(in.str());

  Tensors t;
  const auto n_tensors = in.u32();
  for (std::uint32_t k = 0; k < n_tensors; ++k) {
    auto name = in.str();
    const auto rows = in.u32();
    const auto cols = in.u32();
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = in.f64();
    if (!m.allFinite()) in.fail("tensor '" + name + "' has non-finite values");
    t.emplace(std::move(name), std::move(m));
  }
  if (!in.done()) in.fail("trailing bytes after model data");

  const auto mean = take_vector(t, "mean", in);
  const auto& lda = take(t, "lda", in);
  if (lda.cols() != mean.size()) in.fail("lda and mean dimensions disagree");
  const auto p = lda.rows();

  if (model.kind == ModelKind::kPlda) {
    generative::GenerativeBackend g;
    g.mean = mean;
    g.lda = lda;
    g.plda.mu = take_vector(t, "plda_mu", in);
    g.plda.between = take(t, "plda_between", in);
    g.plda.within = take(t, "plda_within", in);
    if (g.plda.mu.size() != p) in.fail("plda_mu has the wrong dimension");
    check_square(g.plda.between, p, "plda_between", in);
    check_square(g.plda.within, p, "plda_within", in);
    g.cal_a = take_scalar(t, "cal_a", in);
    g.cal_b = take_scalar(t, "cal_b", in);
    model.generative = std::move(g);
    return model;
  }

  discriminative::Model d;
  auto& b = d.backend;
  b.mean = mean;
  b.lda = lda;
  b.cross = take(t, "cross", in);
  b.quadratic = take(t, "quadratic", in);
  b.linear = take_vector(t, "linear", in);
  check_square(b.cross, p, "cross", in);
  check_square(b.quadratic, p, "quadratic", in);
  if (b.linear.size() != p) in.fail("linear has the wrong dimension");
  b.constant = take_scalar(t, "constant", in);
  b.cal_a = take_scalar(t, "cal_a", in);
  b.cal_b = take_scalar(t, "cal_b", in);
  if (model.kind == ModelKind::kDcaplda) {
    discriminative::ConditionCalibrator c;
    c.weights = take(t, "cond_weights", in);
    c.bias = take_vector(t, "cond_bias", in);
    c.head_a = take_vector(t, "head_a", in);
    c.head_b = take_vector(t, "head_b", in);
    c.bias_a = take_scalar(t, "bias_a", in);
    c.bias_b = take_scalar(t, "bias_b", in);
    const auto q = c.weights.rows();
    if (c.weights.cols() != p || c.bias.size() != q ||
        c.head_a.size() != 2 * (q + 1) || c.head_b.size() != 2 * (q + 1))
      in.fail("condition network tensors have inconsistent shapes");
    d.condition = std::move(c);
  }
  model.discriminative = std::move(d);
  return model;
}

std::string model_summary(const StoredModel& model) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "kind: " << to_string(model.kind) << "\n";
  os << "groups:";
  for (const auto& g : model.groups) os << " " << g;
  os << "\n";
  if (model.generative) {
    const auto& g = *model.generative;
    os << "input_dim: " << g.mean.size() << "\n";
    os << "lda_dim: " << g.lda.rows() << "\n";
    os << "trace_between: " << g.plda.between.trace() << "\n";
    os << "trace_within: " << g.plda.within.trace() << "\n";
    os << "calibration: " << g.cal_a << " " << g.cal_b << "\n";
  }
  if (model.discriminative) {
    const auto& b = model.discriminative->backend;
    os << "input_dim: " << b.input_dim() << "\n";
    os << "lda_dim: " << b.dim() << "\n";
    os << "norm_cross: " << b.cross.norm() << "\n";
    os << "norm_quadratic: " << b.quadratic.norm() << "\n";
    os << "constant: " << b.constant << "\n";
    os << "calibration: " << b.cal_a << " " << b.cal_b << "\n";
    if (model.discriminative->condition) {
      const auto& c = *model.discriminative->condition;
      os << "condition_dim: " << c.dim() << "\n";
      os << "norm_condition_weights: " << c.weights.norm() << "\n";
    }
  }
  os << "config:\n";
  for (const auto& [k, v] : model.config) os << "  " << k << " = " << v << "\n";
  return os.str();
}

}  // namespace fairspk
