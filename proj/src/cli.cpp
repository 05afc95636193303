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

#include "fairspk/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "fairspk/config.hpp"
#include "fairspk/data_model.hpp"
#include "fairspk/discriminative.hpp"
#include "fairspk/errors.hpp"
#include "fairspk/generative.hpp"
#include "fairspk/metrics.hpp"
#include "fairspk/model_io.hpp"
#include "fairspk/synthetic.hpp"
#include "fairspk/trials.hpp"

namespace fairspk::cli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using Echo = std::vector<std::pair<std::string, std::string>>;

// Keys naming output locations; left out of embedded echoes so that the
// same run written to two places produces identical bytes.
const std::set<std::string> kOutputKeys = {"out", "out_dir", "log"};

// Collects configuration problems so they are all reported at once.
class Problems {
 public:
  void add(std::string msg) { list_.push_back(std::move(msg)); }
  void raise() const {
    if (list_.empty()) return;
    std::string text = "invalid configuration:";
    for (const auto& m : list_) text += "\n  " + m;
    throw ConfigError(text);
  }

 private:
  std::vector<std::string> list_;
};

// Typed access that records the effective value (default included) back
// into the config, so the echo reflects what actually ran.
class Params {
 public:
  explicit Params(KeyValueConfig& kv) : kv_(kv) {}

  std::string str(const std::string& key, const std::string& fallback) {
    auto v = kv_.get_string(key, fallback);
    kv_.set(key, v);
    return v;
  }
  std::optional<std::string> maybe_str(const std::string& key) {
    if (!kv_.has(key)) return std::nullopt;
    return kv_.get_string(key);
  }
  std::string required(const std::string& key) {
    if (!kv_.has(key) || kv_.get_string(key).empty()) {
      problems_.add("missing required key '" + key + "'");
      return {};
    }
    return kv_.get_string(key);
  }
  double real(const std::string& key, double fallback) {
    return guarded(key, fallback, [&] { return kv_.get_double(key, fallback); });
  }
  std::uint64_t uint(const std::string& key, std::uint64_t fallback) {
    return guarded(key, fallback, [&] { return kv_.get_uint(key, fallback); });
  }
  bool flag(const std::string& key, bool fallback) {
    return guarded(key, fallback, [&] { return kv_.get_bool(key, fallback); });
  }
  std::vector<double> reals(const std::string& key, std::vector<double> fallback) {
    if (!kv_.has(key)) {
      kv_.set(key, join(fallback));
      return fallback;
    }
    try {
      return kv_.get_doubles(key);
    } catch (const ConfigError& e) {
      problems_.add(e.what());
      return fallback;
    }
  }
  std::vector<std::uint64_t> uints(const std::string& key,
                                   std::vector<std::uint64_t> fallback) {
    if (!kv_.has(key)) {
      std::string s;
      for (std::size_t i = 0; i < fallback.size(); ++i)
        s += (i ? "," : "") + std::to_string(fallback[i]);
      kv_.set(key, s);
      return fallback;
    }
    std::vector<std::uint64_t> out;
    for (const auto& item : kv_.get_strings(key)) {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(item, &used);
        if (used != item.size() || item.front() == '-') throw std::invalid_argument(item);
        out.push_back(v);
      } catch (const std::exception&) {
        problems_.add("key '" + key + "': '" + item + "' is not a non-negative integer");
      }
    }
    return out;
  }

  void input_path(const std::string& key, const std::string& path) {
    if (!path.empty() && !fs::exists(path))
      problems_.add("key '" + key + "': file not found: " + path);
  }
  void check(bool ok, const std::string& msg) {
    if (!ok) problems_.add(msg);
  }
  void raise() const { problems_.raise(); }

  /// Effective config without output locations.
  Echo echo() const {
    Echo out;
    for (auto& [k, v] : kv_.entries())
      if (!kOutputKeys.count(k)) out.emplace_back(k, v);
    return out;
  }
  const KeyValueConfig& config() const { return kv_; }

 private:
  template <typename T, typename Fn>
  T guarded(const std::string& key, T fallback, Fn&& get) {
    try {
      T v = get();
      if constexpr (std::is_same_v<T, bool>)
        kv_.set(key, v ? "true" : "false");
      else if constexpr (std::is_same_v<T, double>)
        kv_.set(key, format_double(v));
      else
        kv_.set(key, std::to_string(v));
      return v;
    } catch (const ConfigError& e) {
      problems_.add(e.what());
      return fallback;
    }
  }
  static std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
  }

  KeyValueConfig& kv_;
  Problems problems_;
};

std::string echo_comment(const Echo& echo) {
  std::string s;
  for (const auto& [k, v] : echo) s += "# " + k + " = " + v + "\n";
  return s;
}

Json echo_json(const Echo& echo) {
  Json j = Json::object();
  for (const auto& [k, v] : echo) j[k] = v;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "_" : out;
}

// ----------------------------------------------------------------- commands

void cmd_make_trials(KeyValueConfig& kv, std::ostream& out) {
  Params p(kv);
  const auto emb = p.required("embeddings");
  const auto dest = p.required("out");
  const bool within = p.flag("within_group", true);
  p.input_path("embeddings", emb);
  p.raise();

  const auto set = load_embeddings(emb);
  const auto trials = trials::build_trials(set, {.within_group = within});
  ensure_parent(dest);
  save_trials(trials, dest);
  write_text(fs::path(dest).concat(".config"), p.config().to_text());
  std::size_t n_tar = 0;
  for (const auto& t : trials) n_tar += t.target;
  out << "wrote " << trials.size() << " trials (" << n_tar << " target) to "
      << dest << "\n";
}

void cmd_synth(KeyValueConfig& kv, std::ostream& out) {
  Params p(kv);
  const auto dir = p.required("out_dir");
  const auto fractions = p.reals("split_fractions", {0.6, 0.2, 0.2});
  const auto format = p.str("format", "text");
  p.check(fractions.size() == 3,
          "key 'split_fractions': expected three values (train, dev, eval)");
  p.check(format == "text" || format == "binary",
          "key 'format': expected text or binary, got '" + format + "'");
  double total = 0.0;
  for (double f : fractions) {
    p.check(f >= 0.0 && f <= 1.0, "key 'split_fractions': fractions must lie in [0, 1]");
    total += f;
  }
  p.check(total <= 1.0 + 1e-9,
          "key 'split_fractions': fractions sum to " + format_double(total) +
              " > 1, so the splits would share speakers");
  std::optional<synthetic::SynthConfig> cfg;
  try {
    cfg = synthetic::config_from_keys(kv);
  } catch (const ConfigError& e) {
    p.check(false, e.what());
  }
  p.raise();

  const auto set = synthetic::generate(*cfg);
  const std::array<std::string, 3> names = {"train", "dev", "eval"};
  std::array<std::vector<std::size_t>, 3> members;
  std::vector<std::string> summary;
  for (std::size_t g = 0; g < cfg->groups.size(); ++g) {
    // Speakers of this group in generation order.
    std::vector<std::string> speakers;
    std::map<std::string, std::vector<std::size_t>> rows;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set.groups()[i] != cfg->groups[g].name) continue;
      auto [it, inserted] = rows.try_emplace(set.speakers()[i]);
      if (inserted) speakers.push_back(set.speakers()[i]);
      it->second.push_back(i);
    }
    const double n = static_cast<double>(speakers.size());
    std::size_t begin = 0;
    double cum = 0.0;
    for (std::size_t s = 0; s < 3; ++s) {
      cum += fractions[s];
      const auto end = std::min(speakers.size(),
                                static_cast<std::size_t>(std::llround(cum * n)));
      for (std::size_t k = begin; k < end; ++k)
        for (auto i : rows[speakers[k]]) members[s].push_back(i);
      summary.push_back(names[s] + "/" + cfg->groups[g].name + "=" +
                        std::to_string(end - begin));
      begin = end;
    }
  }
  fs::create_directories(dir);
  for (std::size_t s = 0; s < 3; ++s) {
    if (members[s].empty()) continue;
    std::sort(members[s].begin(), members[s].end());
    const auto part = set.subset(members[s]);
    const auto path = fs::path(dir) / (names[s] + ".emb");
    if (format == "binary")
      save_embeddings_binary(part, path);
    else
      save_embeddings_text(part, path);
    out << "wrote " << part.size() << " samples to " << path.string() << "\n";
  }
  write_text(fs::path(dir) / "synth.config", p.config().to_text());
  out << "speakers:";
  for (const auto& s : summary) out << " " << s;
  out << "\n";
}

void cmd_train(KeyValueConfig& kv, std::ostream& out) {
  Params p(kv);
  const auto train_path = p.required("train");
  const auto dev_path = p.required("dev");
  const auto dest = p.required("out");
  const auto log_path = p.str("log", dest.empty() ? "" : dest + ".log.jsonl");
  const auto backend_name = p.str("backend", "plda");
  const auto balance = p.str("balance", "none");
  const auto min_speakers = p.uint("min_speakers", 100);
  const auto pi = p.real("pi", metrics::kDefaultPrior);
  const auto seed = p.uint("seed", 0);
  const auto lda_dim = p.uint("lda_dim", 0);
  const auto plda_iters = p.uint("plda_iters", 50);
  const auto plda_tol = p.real("plda_tolerance", 1e-6);
  const auto max_cal = p.uint("max_calibration_trials", 300000);
  p.input_path("train", train_path);
  p.input_path("dev", dev_path);
  p.check(pi > 0.0 && pi < 1.0, "key 'pi': must lie strictly between 0 and 1");
  p.check(balance == "none" || balance == "by-group",
          "key 'balance': expected none or by-group, got '" + balance + "'");
  p.check(min_speakers >= 1, "key 'min_speakers': must be >= 1");
  p.check(plda_iters >= 1, "key 'plda_iters': must be >= 1");
  std::optional<ModelKind> kind;
  try {
    kind = parse_model_kind(backend_name);
  } catch (const ConfigError& e) {
    p.check(false, std::string("key 'backend': ") + e.what());
  }
  discriminative::TrainConfig tc;
  std::uint64_t condition_dim = 6;
  if (kind && *kind != ModelKind::kPlda) {
    tc.pi = pi;
    tc.learning_rate = p.real("learning_rate", tc.learning_rate);
    tc.batch_size = p.uint("batch_size", tc.batch_size);
    tc.epochs = p.uint("epochs", tc.epochs);
    tc.seeds = p.uints("seeds", tc.seeds);
    tc.clip_norm = p.real("clip_norm", tc.clip_norm);
    tc.min_speakers = min_speakers;
    tc.balance = balance == "by-group" ? discriminative::Balance::kByGroup
                                       : discriminative::Balance::kNone;
    if (*kind == ModelKind::kDcaplda) {
      condition_dim = p.uint("condition_dim", condition_dim);
      tc.condition_init_scale = p.real("condition_init_scale", tc.condition_init_scale);
      p.check(condition_dim >= 1, "key 'condition_dim': must be >= 1");
    }
    try {
      tc.validate(1);
    } catch (const ConfigError& e) {
      p.check(false, e.what());
    }
  }
  p.raise();

  const auto train_set = load_embeddings(train_path);
  const auto dev_set = load_embeddings(dev_path);
  if (dev_set.dim() != train_set.dim())
    throw DataError("dev dimension " + std::to_string(dev_set.dim()) +
                    " differs from train dimension " + std::to_string(train_set.dim()));
  if (*kind != ModelKind::kPlda && tc.balance == discriminative::Balance::kByGroup)
    tc.validate(build_group_assignment(train_set, min_speakers).num_groups());

  generative::GenerativeOptions go;
  if (lda_dim > 0) go.lda_dim = lda_dim;
  go.balance = balance == "by-group";
  go.min_speakers = min_speakers;
  go.plda.n_iters = plda_iters;
  go.plda.tolerance = plda_tol;
  go.pi = pi;
  go.max_calibration_trials = max_cal;
  go.seed = seed;

  const auto echo = p.echo();
  std::ostringstream log;
  log << Json{{"type", "config"}, {"backend", backend_name}, {"config", echo_json(echo)}}
             .dump()
      << "\n";

  generative::GenerativeTrainInfo info;
  const auto gen = generative::train_generative(train_set, go, nullptr, &info);
  const auto dev_trials =
      trials::build_trial_index(dev_set, trials::TrialOptions{.within_group = true});

  StoredModel model;
  model.kind = *kind;
  model.config = echo;
  Json gen_rec{{"type", "generative"},
               {"groups", info.groups},
               {"plda_log_likelihood", info.plda_log_likelihood},
               {"calibration_trials", info.calibration_trials},
               {"calibration", {gen.cal_a, gen.cal_b}}};
  if (*kind == ModelKind::kPlda) {
    const auto scores = generative::score_pipeline(gen, dev_set, dev_trials);
    const double cllr = metrics::weighted_cllr(scores.llr, dev_trials.target, pi);
    gen_rec["dev_cllr"] = cllr;
    log << gen_rec.dump() << "\n";
    model.generative = gen;
    model.groups = info.groups;
    out << "plda dev Cllr " << format_double(cllr) << " bits\n";
  } else {
    log << gen_rec.dump() << "\n";
    discriminative::Model init;
    init.backend = discriminative::init_from_generative(gen);
    if (*kind == ModelKind::kDcaplda) {
      if (!(gen.cal_a > 0.0))
        throw NumericalError("generative calibration scale is not positive; "
                             "cannot initialize the condition network");
      init.condition = discriminative::ConditionCalibrator::neutral(
          init.backend.dim(), condition_dim, gen.cal_a, gen.cal_b);
    }
    const auto result = discriminative::train(init, train_set, dev_set, tc);
    for (const auto& rec : result.log)
      log << discriminative::epoch_record_json(rec, result.groups) << "\n";
    log << Json{{"type", "best"},
                {"seed", result.best_seed},
                {"epoch", result.best_epoch},
                {"dev_cllr", result.best_dev_cllr}}
               .dump()
        << "\n";
    model.discriminative = result.model;
    model.groups = result.groups;
    out << backend_name << " best dev Cllr " << format_double(result.best_dev_cllr)
        << " bits (seed " << result.best_seed << ", epoch " << result.best_epoch
        << ")\n";
  }
  ensure_parent(dest);
  save_model(dest, model);
  write_text(log_path, log.str());
  out << "wrote model to " << dest << " and log to " << log_path << "\n";
}

void cmd_score(KeyValueConfig& kv, std::ostream& out) {
  Params p(kv);
  const auto model_path = p.required("model");
  const auto emb = p.required("embeddings");
  const auto trials_path = p.required("trials");
  const auto dest = p.required("out");
  p.input_path("model", model_path);
  p.input_path("embeddings", emb);
  p.input_path("trials", trials_path);
  p.raise();

  const auto model = load_model(model_path);
  const auto set = load_embeddings(emb);
  const auto trials = load_trials(trials_path);
  const auto scores = model.score(set, resolve_trials(set, trials));
  ensure_parent(dest);
  save_scores(trials, scores, dest);
  write_text(fs::path(dest).concat(".config"), p.config().to_text());
  out << "wrote " << scores.size() << " scores to " << dest << "\n";
}

void cmd_evaluate(KeyValueConfig& kv, std::ostream& out) {
  Params p(kv);
  const auto emb = p.required("embeddings");
  const auto dir = p.required("out_dir");
  const auto model_path = p.maybe_str("model");
  const auto scores_path = p.maybe_str("scores");
  std::string trials_path;
  metrics::EvaluateOptions eo;
  eo.pi = p.real("pi", metrics::kDefaultPrior);
  eo.alpha = p.real("alpha", metrics::kDefaultAlpha);
  eo.bootstrap.n_boot = p.uint("n_boot", 1000);
  eo.bootstrap.confidence = p.real("confidence", 0.95);
  eo.bootstrap.seed = p.uint("seed", 0);
  const auto min_speakers = p.uint("min_speakers", 1);
  const auto bins = p.uint("hist_bins", 50);
  p.check(model_path.has_value() != scores_path.has_value(),
          "exactly one of 'model' or 'scores' must be given");
  if (model_path) {
    trials_path = p.required("trials");
    p.input_path("model", *model_path);
    p.input_path("trials", trials_path);
  }
  if (scores_path) p.input_path("scores", *scores_path);
  p.input_path("embeddings", emb);
  p.check(eo.pi > 0.0 && eo.pi < 1.0, "key 'pi': must lie strictly between 0 and 1");
  p.check(eo.alpha >= 0.0 && eo.alpha <= 1.0, "key 'alpha': must lie in [0, 1]");
  p.check(eo.bootstrap.n_boot >= 2, "key 'n_boot': must be >= 2");
  p.check(eo.bootstrap.confidence > 0.0 && eo.bootstrap.confidence < 1.0,
          "key 'confidence': must lie strictly between 0 and 1");
  p.check(min_speakers >= 1, "key 'min_speakers': must be >= 1");
  p.check(bins >= 1, "key 'hist_bins': must be >= 1");
  p.raise();

  const auto set = load_embeddings(emb);
  TrialList trials;
  ScoreSet scores;
  if (model_path) {
    trials = load_trials(trials_path);
    scores = load_model(*model_path).score(set, resolve_trials(set, trials));
  } else {
    auto st = load_scores(*scores_path);
    trials = std::move(st.trials);
    // Score files carry no labels; they follow from speaker metadata.
    for (auto& t : trials)
      t.target = set.speakers()[set.index_of(t.enroll)] ==
                 set.speakers()[set.index_of(t.test)];
    scores = std::move(st.scores);
  }
  const auto index = resolve_trials(set, trials);
  const auto groups = build_group_assignment(set, min_speakers);
  const auto report = metrics::evaluate(set, index, scores.llr, groups, eo);

  const auto echo = p.echo();
  fs::create_directories(dir);
  write_text(fs::path(dir) / "report.json", metrics::report_to_json(report, echo) + "\n");

  std::ostringstream bars;
  bars << echo_comment(echo);
  bars << "group\tcllr_bits\tmin_cllr_bits\tcal_loss_bits\tcllr_ci_lo\tcllr_ci_hi\n";
  for (const auto& g : report.groups)
    bars << g.group << '\t' << format_double(g.cllr_bits) << '\t'
         << format_double(g.min_cllr_bits) << '\t' << format_double(g.cal_loss_bits)
         << '\t' << format_double(g.cllr_ci.lo) << '\t' << format_double(g.cllr_ci.hi)
         << '\n';
  write_text(fs::path(dir) / "bars.tsv", bars.str());

  double lo = p.config().get_double("hist_lo", std::numeric_limits<double>::quiet_NaN());
  double hi = p.config().get_double("hist_hi", std::numeric_limits<double>::quiet_NaN());
  if (std::isnan(lo) || std::isnan(hi)) {
    const auto [mn, mx] = std::minmax_element(scores.llr.begin(), scores.llr.end());
    if (std::isnan(lo)) lo = scores.llr.empty() ? -1.0 : *mn;
    if (std::isnan(hi)) hi = scores.llr.empty() ? 1.0 : *mx;
  }
  if (!(hi > lo)) hi = lo + 1.0;
  for (std::size_t g = 0; g < groups.num_groups(); ++g) {
    std::vector<double> llr;
    std::vector<std::uint8_t> tgt;
    for (std::size_t t = 0; t < index.size(); ++t)
      if (groups.group_of[index.enroll[t]] == g) {
        llr.push_back(scores.llr[t]);
        tgt.push_back(index.target[t]);
      }
    if (llr.empty()) continue;
    const auto h = metrics::score_histogram(llr, tgt, bins, lo, hi);
    std::ostringstream os;
    os << echo_comment(echo);
    os << "bin_center\ttar_density\tnon_density\n";
    for (std::size_t b = 0; b < h.bin_centers.size(); ++b)
      os << format_double(h.bin_centers[b]) << '\t' << format_double(h.tar_density[b])
         << '\t' << format_double(h.non_density[b]) << '\n';
    write_text(fs::path(dir) / ("hist_" + safe_name(groups.labels[g]) + ".tsv"), os.str());
  }

  for (const auto& g : report.groups)
    out << g.group << ": Cllr " << format_double(g.cllr_bits) << " min "
        << format_double(g.min_cllr_bits) << " p_fa " << format_double(g.p_fa)
        << " p_miss " << format_double(g.p_miss) << "\n";
  if (report.fdr) out << "FDR " << format_double(*report.fdr) << "\n";
  out << "wrote report to " << (fs::path(dir) / "report.json").string() << "\n";
}

struct Command {
  const char* name;
  const char* help;
  std::vector<const char*> keys;  // exposed as --key-name flags
  void (*run)(KeyValueConfig&, std::ostream&);
};

const std::vector<Command>& commands() {
  static const std::vector<Command> list = {
      {"make-trials", "Build a trial list from an embedding set",
       {"embeddings", "out", "within_group"}, cmd_make_trials},
      {"synth", "Generate synthetic train/dev/eval embedding sets",
       {"out_dir", "seed", "split_fractions", "format"}, cmd_synth},
      {"train", "Train a plda, dplda or dcaplda backend",
       {"train", "dev", "out", "log", "backend", "balance", "seed"}, cmd_train},
      {"score", "Score a trial list with a trained model",
       {"model", "embeddings", "trials", "out"}, cmd_score},
      {"evaluate", "Per-group fairness metrics, bar data and histograms",
       {"model", "scores", "embeddings", "trials", "out_dir", "pi", "alpha", "n_boot",
        "seed"},
       cmd_evaluate},
  };
  return list;
}

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speaker-verification backends with group-fairness evaluation", "fairspk"};
  app.require_subcommand(1, 1);

  struct Bound {
    std::string config_path;
    std::vector<std::string> overrides;
    std::map<std::string, std::string> flags;
  };
  std::map<std::string, Bound> bound;
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : commands()) {
    auto* sub = app.add_subcommand(c.name, c.help);
    auto& b = bound[c.name];
    sub->add_option("-c,--config", b.config_path, "key = value config file");
    sub->add_option("-s,--set", b.overrides, "override, as key=value (repeatable)");
    for (const char* key : c.keys)
      sub->add_option(flag_name(key), b.flags[key], std::string("sets '") + key + "'");
    subs[c.name] = sub;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  for (const auto& c : commands()) {
    auto* sub = subs[c.name];
    if (!sub->parsed()) continue;
    try {
      auto& b = bound[c.name];
      KeyValueConfig kv;
      if (!b.config_path.empty()) {
        if (!fs::exists(b.config_path))
          throw ConfigError("config file not found: " + b.config_path);
        kv = KeyValueConfig::load(b.config_path);
      }
      for (const auto& o : b.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0)
          throw ConfigError("override '" + o + "' is not of the form key=value");
        kv.set(o.substr(0, eq), o.substr(eq + 1));
      }
      for (const char* key : c.keys)
        if (sub->count(flag_name(key)) > 0) kv.set(key, b.flags[key]);
      c.run(kv, out);
      return kExitOk;
    } catch (const ConfigError& e) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const NumericalError& e) {
      err << "numerical failure: " << e.what() << "\n";
      return kExitNumerical;
    } catch (const DataError& e) {
      err << "data error: " << e.what() << "\n";
      return kExitData;
    } catch (const fs::filesystem_error& e) {
      err << "data error: " << e.what() << "\n";
      return kExitData;
    } catch (const std::exception& e) {
      err << "data error: " << e.what() << "\n";
      return kExitData;
    }
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

}  // namespace fairspk::cli
