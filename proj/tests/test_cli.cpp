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

#include <doctest.h>

#include <set>
#include <sstream>

#include <json.hpp>

#include "fairspk/data_model.hpp"
#include "fairspk/model_io.hpp"
#include "test_util.hpp"

using namespace fairspk;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

const char* kSynthConfig =
    "dim = 8\n"
    "groups = north, south\n"
    "speakers_per_group = 30, 20\n"
    "samples_per_speaker = 6\n"
    "files_per_speaker = 3\n"
    "shift_magnitudes = 0, 1\n"
    "split_fractions = 0.6, 0.2, 0.2\n"
    "seed = 5\n";

fs::path synth_data(const std::string& name) {
  const auto dir = testutil::scratch(name);
  testutil::write_file(dir / "synth.cfg", kSynthConfig);
  const auto r = run({"synth", "-c", (dir / "synth.cfg").string(), "--out-dir",
                      (dir / "data").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return dir;
}

}  // namespace

TEST_CASE("make-trials writes the exhaustive list") {
  const auto dir = testutil::scratch("cli_trials");
  save_embeddings_text(testutil::toy_set(2, 2, 2, 3), dir / "toy.emb");
  const auto a = run({"make-trials", "--embeddings", (dir / "toy.emb").string(), "--out",
                      (dir / "a.tsv").string()});
  REQUIRE_MESSAGE(a.code == 0, a.err);
  const auto text = testutil::read_file(dir / "a.tsv");
  CHECK(count_lines(text) == 24);
  run({"make-trials", "-s", "embeddings=" + (dir / "toy.emb").string(), "--out",
       (dir / "b.tsv").string()});
  CHECK(testutil::read_file(dir / "b.tsv") == text);
  CHECK(testutil::read_file(dir / "a.tsv.config").find("within_group = true") !=
        std::string::npos);

  const auto missing = run({"make-trials", "--embeddings", (dir / "ghost.emb").string(),
                            "--out", (dir / "c.tsv").string()});
  CHECK(missing.code != 0);
  CHECK(missing.err.find("ghost.emb") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"make-trials", "--bogus", "x"}).code == cli::kExitUsage);
  const auto r = run({"train", "-s", "backend=svm", "-s", "pi=2"});
  CHECK(r.code == cli::kExitUsage);
  // All problems are listed together.
  CHECK(r.err.find("backend") != std::string::npos);
  CHECK(r.err.find("pi") != std::string::npos);
  CHECK(r.err.find("train") != std::string::npos);
  CHECK(run({"make-trials", "-s", "novalue"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("data errors exit with code 2") {
  const auto dir = testutil::scratch("cli_data_err");
  testutil::write_file(dir / "bad.emb", "#dim=2\na\ts\tg\t-1\tf\t1 2\n");
  const auto r = run({"make-trials", "--embeddings", (dir / "bad.emb").string(), "--out",
                      (dir / "t.tsv").string()});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("bad.emb") != std::string::npos);
}

TEST_CASE("synth writes disjoint reproducible splits") {
  const auto dir = synth_data("cli_synth");
  const auto train = load_embeddings(dir / "data/train.emb");
  const auto dev = load_embeddings(dir / "data/dev.emb");
  const auto eval = load_embeddings(dir / "data/eval.emb");
  std::set<std::string> a(train.speakers().begin(), train.speakers().end());
  std::set<std::string> b(dev.speakers().begin(), dev.speakers().end());
  std::set<std::string> c(eval.speakers().begin(), eval.speakers().end());
  for (const auto& s : b) CHECK_FALSE(a.count(s));
  for (const auto& s : c) {
    CHECK_FALSE(a.count(s));
    CHECK_FALSE(b.count(s));
  }
  // Eval holds 20% of each group's speakers.
  std::map<std::string, std::set<std::string>> per_group;
  for (std::size_t i = 0; i < eval.size(); ++i)
    per_group[eval.groups()[i]].insert(eval.speakers()[i]);
  CHECK(per_group["north"].size() == 6);
  CHECK(per_group["south"].size() == 4);
  CHECK(a.size() == 30);

  const auto again = synth_data("cli_synth_again");
  for (const char* f : {"train.emb", "dev.emb", "eval.emb"})
    CHECK(testutil::read_file(dir / "data" / f) == testutil::read_file(again / "data" / f));

  const auto overlap = run({"synth", "-c", (dir / "synth.cfg").string(), "-s",
                            "split_fractions=0.7,0.2,0.2", "--out-dir",
                            (dir / "x").string()});
  CHECK(overlap.code == cli::kExitUsage);
  CHECK(overlap.err.find("share speakers") != std::string::npos);
}

TEST_CASE("train, score and evaluate a plda backend") {
  const auto dir = synth_data("cli_plda");
  const auto d = (dir / "data").string();
  testutil::write_file(dir / "train.cfg",
                       "train = " + d + "/train.emb\n"
                       "dev = " + d + "/dev.emb\n"
                       "backend = plda\n"
                       "min_speakers = 5\n");
  auto r = run({"train", "-c", (dir / "train.cfg").string(), "--out",
                (dir / "m1.bin").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = run({"train", "-c", (dir / "train.cfg").string(), "--out",
           (dir / "m2.bin").string()});
  REQUIRE(r.code == 0);
  CHECK(testutil::read_file(dir / "m1.bin") == testutil::read_file(dir / "m2.bin"));

  const auto model = load_model(dir / "m1.bin");
  CHECK(model.kind == ModelKind::kPlda);
  CHECK(model_summary(model).find("backend = plda") != std::string::npos);

  r = run({"make-trials", "--embeddings", d + "/eval.emb", "--out",
           (dir / "eval.trials").string()});
  REQUIRE(r.code == 0);
  r = run({"score", "--model", (dir / "m1.bin").string(), "--embeddings", d + "/eval.emb",
           "--trials", (dir / "eval.trials").string(), "--out",
           (dir / "scores.tsv").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto scored = load_scores(dir / "scores.tsv");
  CHECK(scored.scores.size() == load_trials(dir / "eval.trials").size());
  for (double v : scored.scores.llr) CHECK(std::isfinite(v));

  r = run({"evaluate", "--model", (dir / "m1.bin").string(), "--embeddings",
           d + "/eval.emb", "--trials", (dir / "eval.trials").string(), "--out-dir",
           (dir / "report").string(), "--n-boot", "50"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto report =
      nlohmann::json::parse(testutil::read_file(dir / "report/report.json"));
  CHECK(report["threshold_nats"].get<double>() == doctest::Approx(2.9444).epsilon(1e-4));
  CHECK(report["groups"].size() == 2);
  for (const auto& g : report["groups"])
    CHECK(g["cal_loss_bits"].get<double>() ==
          g["cllr_bits"].get<double>() - g["min_cllr_bits"].get<double>());
  CHECK(report["config"]["n_boot"] == "50");
  CHECK(fs::exists(dir / "report/bars.tsv"));
  CHECK(fs::exists(dir / "report/hist_north.tsv"));
  CHECK(fs::exists(dir / "report/hist_south.tsv"));

  // Same metrics from the score file.
  r = run({"evaluate", "--scores", (dir / "scores.tsv").string(), "--embeddings",
           d + "/eval.emb", "--out-dir", (dir / "report2").string(), "--n-boot", "50"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto report2 =
      nlohmann::json::parse(testutil::read_file(dir / "report2/report.json"));
  CHECK(report2["groups"][0]["cllr_bits"] == report["groups"][0]["cllr_bits"]);
  CHECK(report2["fdr"] == report["fdr"]);
}

TEST_CASE("evaluate reports perfect fairness for duplicated groups") {
  const auto dir = testutil::scratch("cli_dup");
  const auto base = testutil::toy_set(6, 2, 2, 4, 3);
  std::vector<std::string> ids, spk, grp, src;
  std::vector<double> dur;
  RowMatrixXf v(static_cast<Eigen::Index>(2 * base.size()), 4);
  for (int copy = 0; copy < 2; ++copy)
    for (std::size_t i = 0; i < base.size(); ++i) {
      const std::string p = copy ? "B_" : "A_";
      ids.push_back(p + base.ids()[i]);
      spk.push_back(p + base.speakers()[i]);
      grp.push_back(copy ? "B" : "A");
      src.push_back(p + base.source_files()[i]);
      dur.push_back(base.durations()[i]);
      v.row(static_cast<Eigen::Index>(copy * base.size() + i)) =
          base.vectors().row(static_cast<Eigen::Index>(i));
    }
  save_embeddings_text(EmbeddingSet(ids, v, spk, grp, dur, src), dir / "dup.emb");
  save_embeddings_text(testutil::toy_set(12, 2, 2, 4, 8), dir / "train.emb");
  REQUIRE(run({"train", "--train", (dir / "train.emb").string(), "--dev",
               (dir / "train.emb").string(), "--out", (dir / "m.bin").string()})
              .code == 0);
  REQUIRE(run({"make-trials", "--embeddings", (dir / "dup.emb").string(), "--out",
               (dir / "t.tsv").string()})
              .code == 0);
  const auto r = run({"evaluate", "--model", (dir / "m.bin").string(), "--embeddings",
                      (dir / "dup.emb").string(), "--trials", (dir / "t.tsv").string(),
                      "--out-dir", (dir / "rep").string(), "--n-boot", "20"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto report = nlohmann::json::parse(testutil::read_file(dir / "rep/report.json"));
  CHECK(report["fdr"].get<double>() == 1.0);

  // Cross-group trials are rejected.
  testutil::write_file(dir / "cross.tsv", ids[0] + "\t" + ids[base.size() + 2] + "\tnon\n" +
                                              ids[0] + "\t" + ids[2] + "\tnon\n");
  const auto cross = run({"evaluate", "--model", (dir / "m.bin").string(), "--embeddings",
                          (dir / "dup.emb").string(), "--trials",
                          (dir / "cross.tsv").string(), "--out-dir",
                          (dir / "rep2").string()});
  CHECK(cross.code == cli::kExitData);
}

TEST_CASE("discriminative training logs balanced batches") {
  const auto dir = synth_data("cli_dplda");
  const auto d = (dir / "data").string();
  const std::vector<std::string> common = {
      "--train", d + "/train.emb", "--dev", d + "/dev.emb", "--balance", "by-group",
      "-s", "min_speakers=5", "-s", "epochs=2", "-s", "seeds=0,1", "-s", "batch_size=16"};
  auto args = std::vector<std::string>{"train", "--backend", "dplda", "--out",
                                       (dir / "d.bin").string()};
  args.insert(args.end(), common.begin(), common.end());
  auto r = run(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream log(testutil::read_file(dir / "d.bin.log.jsonl"));
  std::string line;
  std::size_t epochs = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    if (!j.contains("batch_group_counts")) continue;
    ++epochs;
    for (const auto& [g, c] : j["batch_group_counts"].items()) {
      CHECK(c["min"] == 8);
      CHECK(c["max"] == 8);
    }
  }
  CHECK(epochs == 4);

  args = {"train", "--backend", "dcaplda", "--out", (dir / "c.bin").string()};
  args.insert(args.end(), common.begin(), common.end());
  r = run(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  args[4] = (dir / "c2.bin").string();
  REQUIRE(run(args).code == 0);
  CHECK(testutil::read_file(dir / "c.bin") == testutil::read_file(dir / "c2.bin"));
  const auto model = load_model(dir / "c.bin");
  CHECK(model.kind == ModelKind::kDcaplda);
  REQUIRE(model.discriminative.has_value());
  CHECK(model.discriminative->condition->dim() == 6);

  args = {"train", "--backend", "dplda", "--out", (dir / "bad.bin").string()};
  args.insert(args.end(), common.begin(), common.end());
  args.push_back("-s");
  args.push_back("batch_size=15");
  CHECK(run(args).code == cli::kExitUsage);

  args = {"train", "--backend", "dcaplda", "--out", (dir / "boom.bin").string()};
  args.insert(args.end(), common.begin(), common.end());
  for (const char* o : {"learning_rate=1e300", "clip_norm=1e300"}) {
    args.push_back("-s");
    args.push_back(o);
  }
  CHECK(run(args).code == cli::kExitNumerical);
}
