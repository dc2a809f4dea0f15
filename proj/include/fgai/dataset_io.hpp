// Copyright 2026 The FGAI Authors.
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

#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fgai/graph.hpp"
#include "json.hpp"

namespace fgai {

namespace detail {

inline std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline std::vector<std::string> split_tokens(const std::string& line, bool commas) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : line) {
    const bool sep = c == ' ' || c == '\t' || c == '\r' || (commas && c == ',');
    if (sep) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

template <typename T>
std::optional<T> parse_number(const std::string& tok) {
  T value{};
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Features are CSV rows; the row count defines N.
inline Matrix read_features(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = detail::split_tokens(line, true);
    if (tokens.empty()) continue;
    if (rows == 0) cols = tokens.size();
    if (tokens.size() != cols)
      throw ParseError(path.string() + ": expected " + std::to_string(cols) +
                           " feature columns, found " + std::to_string(tokens.size()),
                       line_no);
    for (const auto& t : tokens) {
      const auto v = detail::parse_number<double>(t);
      if (!v || !std::isfinite(*v))
        throw ParseError(path.string() + ": bad feature value '" + t + "'", line_no);
      values.push_back(*v);
    }
    ++rows;
  }
  Matrix m(rows, cols);
  m.data = std::move(values);
  return m;
}

inline std::vector<EdgePair> read_edge_list(const std::filesystem::path& path,
                                            std::size_t num_nodes) {
  auto in = detail::open_for_read(path);
  std::vector<EdgePair> edges;
  std::size_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = detail::split_tokens(line, false);
    if (tokens.empty() || tokens[0][0] == '#') continue;
    if (tokens.size() != 2)
      throw ParseError(path.string() + ": expected 'u v'", line_no);
    const auto u = detail::parse_number<std::size_t>(tokens[0]);
    const auto v = detail::parse_number<std::size_t>(tokens[1]);
    if (!u || !v) throw ParseError(path.string() + ": node id is not an integer", line_no);
    if (*u >= num_nodes || *v >= num_nodes)
      throw ParseError(path.string() + ": node id outside [0, " +
                           std::to_string(num_nodes) + ")",
                       line_no);
    edges.emplace_back(*u, *v);
  }
  return edges;
}

inline LabelVector read_labels(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  LabelVector labels;
  std::size_t line_no = 0;
  std::string line;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = detail::split_tokens(line, false);
    if (tokens.empty()) continue;
    const auto y = detail::parse_number<int>(tokens[0]);
    if (tokens.size() != 1 || !y || *y < 0)
      throw ParseError(path.string() + ": expected one nonnegative class id", line_no);
    labels.labels.push_back(*y);
    max_label = std::max(max_label, *y);
  }
  labels.num_classes = max_label + 1;
  return labels;
}

inline SplitMask read_split(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  SplitMask split;
  std::size_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = detail::split_tokens(line, false);
    if (tokens.empty()) continue;
    const std::string& t = tokens[0];
    if (tokens.size() != 1 || (t != "train" && t != "val" && t != "test" && t != "none"))
      throw ParseError(path.string() + ": split must be train|val|test|none", line_no);
    split.train.push_back(t == "train");
    split.val.push_back(t == "val");
    split.test.push_back(t == "test");
  }
  return split;
}

/// Loads the four text files. Without a split file a seeded stratified
/// 10/10/80 split is drawn.
inline Dataset load_dataset(const std::filesystem::path& edge_list_path,
                            const std::filesystem::path& features_path,
                            const std::filesystem::path& labels_path,
                            const std::optional<std::filesystem::path>& split_path,
                            std::uint64_t split_seed = 0) {
  Dataset d;
  d.name = features_path.parent_path().filename().string();
  d.features = read_features(features_path);
  const std::size_t n = d.features.rows;
  d.graph = Graph::from_edges(n, read_edge_list(edge_list_path, n));
  d.labels = read_labels(labels_path);
  if (d.labels.labels.size() != n)
    throw StructuralError("labels file has " + std::to_string(d.labels.labels.size()) +
                          " rows but features define " + std::to_string(n) + " nodes");
  if (split_path) {
    d.split = read_split(*split_path);
    if (d.split.train.size() != n)
      throw StructuralError("split file has " + std::to_string(d.split.train.size()) +
                            " rows but features define " + std::to_string(n) + " nodes");
  } else {
    d.split = stratified_split(d.labels, split_seed);
  }
  d.validate();
  return d;
}

struct DatasetFiles {
  std::filesystem::path edges, features, labels, split, manifest;

  static DatasetFiles in(const std::filesystem::path& dir) {
    return {dir / "edges.txt", dir / "features.csv", dir / "labels.txt", dir / "split.txt",
            dir / "dataset.json"};
  }
};

/// Writes the dataset in the text formats `load_dataset` reads, plus a JSON
/// manifest `{name, N, E, F, C, seed}` where E counts undirected non-loop edges.
inline DatasetFiles write_dataset(const Dataset& d, const std::filesystem::path& dir,
                                  std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto files = DatasetFiles::in(dir);

  const auto pairs = d.graph.undirected_pairs();
  {
    auto out = detail::open_for_write(files.edges);
    for (const auto& [u, v] : pairs) out << u << ' ' << v << '\n';
  }
  {
    auto out = detail::open_for_write(files.features);
    for (std::size_t i = 0; i < d.features.rows; ++i) {
      for (std::size_t f = 0; f < d.features.cols; ++f) {
        if (f) out << ',';
        out << detail::format_double(d.features(i, f));
      }
      out << '\n';
    }
  }
  {
    auto out = detail::open_for_write(files.labels);
    for (int y : d.labels.labels) out << y << '\n';
  }
  {
    auto out = detail::open_for_write(files.split);
    for (std::size_t i = 0; i < d.num_nodes(); ++i)
      out << (d.split.train[i] ? "train" : d.split.val[i] ? "val" : d.split.test[i] ? "test" : "none")
          << '\n';
  }
  {
    nlohmann::ordered_json m;
    m["name"] = d.name;
    m["N"] = d.num_nodes();
    m["E"] = pairs.size();
    m["F"] = d.feature_dim();
    m["C"] = d.num_classes();
    m["seed"] = seed;
    auto out = detail::open_for_write(files.manifest);
    out << m.dump(2) << '\n';
  }
  if (!std::filesystem::exists(files.manifest)) throw IoError("write failed in " + dir.string());
  return files;
}

inline Dataset read_dataset_dir(const std::filesystem::path& dir) {
  const auto files = DatasetFiles::in(dir);
  auto d = load_dataset(files.edges, files.features, files.labels, files.split);
  // Labels files cannot express classes that no node carries.
  if (std::filesystem::exists(files.manifest)) {
    auto in = detail::open_for_read(files.manifest);
    const auto m = nlohmann::json::parse(in);
    d.name = m.at("name").get<std::string>();
    d.labels.num_classes = m.at("C").get<int>();
  }
  d.validate();
  return d;
}

}  // namespace fgai
