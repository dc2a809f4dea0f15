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

#include <filesystem>
#include <fstream>
#include <string>

#include "fgai/dataset_io.hpp"
#include "fgai/gat.hpp"
#include "json.hpp"

namespace fgai {

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::ordered_json matrix_to_json(const Matrix& m) {
  nlohmann::ordered_json j;
  j["rows"] = m.rows;
  j["cols"] = m.cols;
  j["data"] = m.data;
  return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols) throw StructuralError("matrix data length != rows*cols");
  return m;
}

inline nlohmann::ordered_json params_to_json(const ModelParams& p) {
  nlohmann::ordered_json j;
  j["format"] = "fgai-model";
  j["version"] = kModelFormatVersion;
  j["variant"] = to_string(p.variant);
  j["in_dim"] = p.in_dim;
  j["heads"] = p.heads;
  j["hidden"] = p.hidden;
  j["classes"] = p.classes;
  j["leaky_slope"] = p.leaky_slope;
  p.for_each_tensor([&j](const char* name, const Matrix& m) { j[name] = matrix_to_json(m); });
  return j;
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "fgai-model") throw StructuralError("not an fgai-model document");
  if (j.at("version").get<int>() != kModelFormatVersion)
    throw StructuralError("unsupported model format version " +
                          std::to_string(j.at("version").get<int>()));
  ModelParams p;
  p.variant = parse_variant(j.at("variant").get<std::string>());
  p.in_dim = j.at("in_dim").get<std::size_t>();
  p.heads = j.at("heads").get<std::size_t>();
  p.hidden = j.at("hidden").get<std::size_t>();
  p.classes = j.at("classes").get<std::size_t>();
  p.leaky_slope = j.at("leaky_slope").get<double>();
  p.for_each_tensor([&j](const char* name, Matrix& m) { m = matrix_from_json(j.at(name)); });
  p.validate();
  return p;
}

inline void save_params(const ModelParams& p, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << params_to_json(p).dump() << '\n';
}

inline ModelParams load_params(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  return params_from_json(nlohmann::json::parse(in));
}

}  // namespace fgai
