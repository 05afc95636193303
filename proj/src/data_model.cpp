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

#include "fairspk/data_model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fairspk/errors.hpp"

namespace fairspk {

namespace {

constexpr std::array<char, 5> kBinaryMagic = {'F', 'S', 'E', 'B', '1'};

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last;
}

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

std::ifstream open_input(const std::filesystem::path& path,
                         std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw DataError("cannot open input file " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path,
                          std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw DataError("cannot open output file " + path.string());
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

// Little-endian primitives for the binary format.
void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff),
                         static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4))
    throw DataError("truncated binary embedding file");
  return static_cast<std::uint32_t>(bytes[0]) |
         (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

std::string get_string(std::istream& in) {
  const auto len = get_u32(in);
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len))
    throw DataError("truncated binary embedding file");
  return s;
}

EmbeddingSet load_binary(std::istream& in, const std::filesystem::path& path) {
  const auto n = get_u32(in);
  const auto d = get_u32(in);
  if (d == 0) throw DataError(path.string() + ": dimension must be >= 1");
  std::vector<std::string> ids(n), speakers(n), groups(n), files(n);
  std::vector<double> durations(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    ids[i] = get_string(in);
    speakers[i] = get_string(in);
    groups[i] = get_string(in);
    files[i] = get_string(in);
    durations[i] = std::bit_cast<double>(get_u64(in));
  }
  RowMatrixXf vectors(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j)
      vectors(i, j) = std::bit_cast<float>(get_u32(in));
  try {
    return EmbeddingSet(std::move(ids), std::move(vectors), std::move(speakers),
                        std::move(groups), std::move(durations),
                        std::move(files));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

EmbeddingSet load_text(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t d = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    constexpr std::string_view prefix = "#dim=";
    if (line.rfind(prefix, 0) != 0 ||
        !parse_number(std::string_view(line).substr(prefix.size()), d) ||
        d == 0) {
      throw DataError(location(path, line_no) +
                      "expected header '#dim=<d>' with d >= 1");
    }
    break;
  }
  if (d == 0) throw DataError(path.string() + ": missing '#dim=' header");

  std::vector<std::string> ids, speakers, groups, files;
  std::vector<double> durations;
  std::vector<float> values;
  std::set<std::string, std::less<>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 6)
      throw DataError(location(path, line_no) + "expected 6 tab-separated " +
                      "fields, found " + std::to_string(fields.size()));
    const std::string id(fields[0]);
    if (id.empty()) throw DataError(location(path, line_no) + "empty id");
    if (!seen.insert(id).second)
      throw DataError(location(path, line_no) + "duplicate id '" + id + "'");
    double duration = 0.0;
    if (!parse_number(fields[3], duration))
      throw DataError(location(path, line_no) + "malformed duration '" +
                      std::string(fields[3]) + "'");
    if (!(duration > 0.0) || !std::isfinite(duration))
      throw DataError(location(path, line_no) +
                      "duration must be positive, got " +
                      std::string(fields[3]));
    std::size_t count = 0;
    for (auto tok : split(fields[5], ' ')) {
      if (tok.empty()) continue;
      float v = 0.0f;
      if (!parse_number(tok, v) || !std::isfinite(v))
        throw DataError(location(path, line_no) + "malformed value '" +
                        std::string(tok) + "'");
      values.push_back(v);
      ++count;
    }
    if (count != d)
      throw DataError(location(path, line_no) + "dimension mismatch: " +
                      "expected " + std::to_string(d) + " values, found " +
                      std::to_string(count));
    ids.push_back(id);
    speakers.emplace_back(fields[1]);
    groups.emplace_back(fields[2]);
    durations.push_back(duration);
    files.emplace_back(fields[4]);
  }
  const auto n = static_cast<Eigen::Index>(ids.size());
  RowMatrixXf vectors =
      Eigen::Map<RowMatrixXf>(values.data(), n, static_cast<Eigen::Index>(d));
  try {
    return EmbeddingSet(std::move(ids), std::move(vectors), std::move(speakers),
                        std::move(groups), std::move(durations),
                        std::move(files));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string format_float(float value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

EmbeddingSet::EmbeddingSet(std::vector<std::string> ids, RowMatrixXf vectors,
                           std::vector<std::string> speakers,
                           std::vector<std::string> groups,
                           std::vector<double> durations,
                           std::vector<std::string> source_files)
    : ids_(std::move(ids)),
      vectors_(std::move(vectors)),
      speakers_(std::move(speakers)),
      groups_(std::move(groups)),
      durations_(std::move(durations)),
      source_files_(std::move(source_files)) {
  const auto n = ids_.size();
  if (static_cast<std::size_t>(vectors_.rows()) != n || speakers_.size() != n ||
      groups_.size() != n || durations_.size() != n ||
      source_files_.size() != n) {
    throw DataError("embedding set: per-sample fields have unequal lengths");
  }
  if (n > 0 && vectors_.cols() < 1)
    throw DataError("embedding set: dimension must be >= 1");
  index_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!index_.emplace(ids_[i], i).second)
      throw DataError("embedding set: duplicate id '" + ids_[i] + "'");
    if (!(durations_[i] > 0.0) || !std::isfinite(durations_[i]))
      throw DataError("embedding set: non-positive duration for '" + ids_[i] +
                      "'");
  }
  if (!vectors_.allFinite())
    throw DataError("embedding set: non-finite vector entries");
}

Eigen::VectorXd EmbeddingSet::vector(std::size_t i) const {
  return vectors_.row(static_cast<Eigen::Index>(i)).transpose().cast<double>();
}

Eigen::MatrixXd EmbeddingSet::matrix() const {
  return vectors_.cast<double>();
}

std::optional<std::size_t> EmbeddingSet::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingSet::index_of(std::string_view id) const {
  if (auto i = find(id)) return *i;
  throw DataError("unknown sample id '" + std::string(id) + "'");
}

std::vector<std::string> EmbeddingSet::speaker_list() const {
  std::vector<std::string> out;
  std::set<std::string_view> seen;
  for (const auto& s : speakers_)
    if (seen.insert(s).second) out.push_back(s);
  return out;
}

EmbeddingSet EmbeddingSet::subset(const std::vector<std::size_t>& indices) const {
  const auto m = indices.size();
  std::vector<std::string> ids(m), speakers(m), groups(m), files(m);
  std::vector<double> durations(m);
  RowMatrixXf vectors(static_cast<Eigen::Index>(m), vectors_.cols());
  for (std::size_t k = 0; k < m; ++k) {
    const auto i = indices.at(k);
    if (i >= size()) throw DataError("subset index out of range");
    ids[k] = ids_[i];
    speakers[k] = speakers_[i];
    groups[k] = groups_[i];
    files[k] = source_files_[i];
    durations[k] = durations_[i];
    vectors.row(static_cast<Eigen::Index>(k)) =
        vectors_.row(static_cast<Eigen::Index>(i));
  }
  return EmbeddingSet(std::move(ids), std::move(vectors), std::move(speakers),
                      std::move(groups), std::move(durations), std::move(files));
}

TrialIndex resolve_trials(const EmbeddingSet& set, const TrialList& trials) {
  TrialIndex out;
  out.enroll.reserve(trials.size());
  out.test.reserve(trials.size());
  out.target.reserve(trials.size());
  for (const auto& t : trials) {
    const auto e = set.index_of(t.enroll);
    const auto s = set.index_of(t.test);
    if (e == s)
      throw DataError("trial pairs sample '" + t.enroll + "' with itself");
    const bool same = set.speakers()[e] == set.speakers()[s];
    if (same != t.target)
      throw DataError("trial " + t.enroll + "/" + t.test +
                      " label disagrees with speaker metadata");
    out.enroll.push_back(e);
    out.test.push_back(s);
    out.target.push_back(t.target ? 1 : 0);
  }
  return out;
}

std::optional<std::size_t> GroupAssignment::find(std::string_view label) const {
  const auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) return std::nullopt;
  return static_cast<std::size_t>(it - labels.begin());
}

GroupAssignment build_group_assignment(const EmbeddingSet& set,
                                       std::size_t min_speakers) {
  if (min_speakers < 1) throw ConfigError("min_speakers must be >= 1");
  if (set.empty()) throw DataError("cannot group an empty embedding set");

  std::map<std::string, std::set<std::string>> speakers_by_group;
  for (std::size_t i = 0; i < set.size(); ++i)
    speakers_by_group[set.groups()[i]].insert(set.speakers()[i]);

  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& g = set.groups()[i];
    const bool keep = speakers_by_group[g].size() >= min_speakers;
    members[keep ? g : std::string(kOtherGroup)].push_back(i);
  }

  GroupAssignment out;
  out.group_of.assign(set.size(), 0);
  for (auto& [label, idx] : members) {
    const auto g = out.labels.size();
    for (auto i : idx) out.group_of[i] = g;
    out.labels.push_back(label);
    out.members.push_back(std::move(idx));
  }
  return out;
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::in | std::ios::binary);
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() == static_cast<std::streamsize>(magic.size()) &&
      magic == kBinaryMagic) {
    return load_binary(in, path);
  }
  in.clear();
  in.seekg(0);
  return load_text(in, path);
}

void save_embeddings_text(const EmbeddingSet& set,
                          const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "#dim=" << set.dim() << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.ids()[i] << '\t' << set.speakers()[i] << '\t'
        << set.groups()[i] << '\t' << format_double(set.durations()[i]) << '\t'
        << set.source_files()[i] << '\t';
    for (std::size_t j = 0; j < set.dim(); ++j) {
      if (j > 0) out << ' ';
      out << format_float(set.vectors()(static_cast<Eigen::Index>(i),
                                        static_cast<Eigen::Index>(j)));
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

void save_embeddings_binary(const EmbeddingSet& set,
                            const std::filesystem::path& path) {
  auto out = open_output(path, std::ios::out | std::ios::binary);
  out.write(kBinaryMagic.data(), kBinaryMagic.size());
  put_u32(out, static_cast<std::uint32_t>(set.size()));
  put_u32(out, static_cast<std::uint32_t>(set.dim()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    put_string(out, set.ids()[i]);
    put_string(out, set.speakers()[i]);
    put_string(out, set.groups()[i]);
    put_string(out, set.source_files()[i]);
    put_u64(out, std::bit_cast<std::uint64_t>(set.durations()[i]));
  }
  const auto& v = set.vectors();
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      put_u32(out, std::bit_cast<std::uint32_t>(v(i, j)));
  if (!out) throw DataError("failed writing " + path.string());
}

TrialList load_trials(const std::filesystem::path& path) {
  auto in = open_input(path);
  TrialList trials;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 3)
      throw DataError(location(path, line_no) +
                      "expected 'enroll<TAB>test<TAB>{tgt|non}'");
    bool target = false;
    if (f[2] == "tgt") {
      target = true;
    } else if (f[2] != "non") {
      throw DataError(location(path, line_no) + "unknown label '" +
                      std::string(f[2]) + "'");
    }
    if (f[0] == f[1])
      throw DataError(location(path, line_no) + "enroll and test ids are equal");
    trials.push_back({std::string(f[0]), std::string(f[1]), target});
  }
  return trials;
}

void save_trials(const TrialList& trials, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& t : trials)
    out << t.enroll << '\t' << t.test << '\t' << (t.target ? "tgt" : "non")
        << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

ScoredTrials load_scores(const std::filesystem::path& path) {
  auto in = open_input(path);
  ScoredTrials out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    double raw = 0.0, llr = 0.0;
    if (f.size() != 4 || !parse_number(f[2], raw) || !parse_number(f[3], llr) ||
        !std::isfinite(raw) || !std::isfinite(llr))
      throw DataError(location(path, line_no) +
                      "expected 'enroll<TAB>test<TAB>raw<TAB>llr'");
    out.trials.push_back({std::string(f[0]), std::string(f[1]), false});
    out.scores.raw.push_back(raw);
    out.scores.llr.push_back(llr);
  }
  return out;
}

void save_scores(const TrialList& trials, const ScoreSet& scores,
                 const std::filesystem::path& path) {
  if (trials.size() != scores.size() || scores.raw.size() != scores.llr.size())
    throw DataError("scores are not aligned with trials");
  auto out = open_output(path);
  for (std::size_t i = 0; i < trials.size(); ++i)
    out << trials[i].enroll << '\t' << trials[i].test << '\t'
        << format_double(scores.raw[i]) << '\t' << format_double(scores.llr[i])
        << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace fairspk
