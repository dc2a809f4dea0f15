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

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fgai/dataset_io.hpp"
#include "fgai/fgai.hpp"
#include "fgai/model_io.hpp"
#include "fgai/robustness.hpp"
#include "fgai/train.hpp"
#include "json.hpp"

namespace fgai {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kReportFormatVersion = 1;

// ---------------------------------------------------------------------------
// Logging

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

/// Verbosity from FGAI_LOG_LEVEL (error, warn, info, debug). Defaults to warn.
inline LogLevel log_level() {
  const char* env = std::getenv("FGAI_LOG_LEVEL");
  const std::string v = env ? env : "";
  if (v == "error") return LogLevel::kError;
  if (v == "info") return LogLevel::kInfo;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kWarn;
}

inline void log(LogLevel level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (static_cast<int>(level) <= static_cast<int>(log_level()))
    std::clog << "[fgai " << names[static_cast<int>(level)] << "] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Configuration

struct DatasetSection {
  std::string source = "sbm";  // sbm | files
  std::filesystem::path path;  // directory with edges.txt, features.csv, labels.txt
  SbmParams sbm{.blocks = 5, .nodes_per_block = 200, .p_in = 0.1, .p_out = 0.01,
                .feature_dim = 8, .feature_shift = 1.0, .seed = 0};
};

struct RunConfig {
  DatasetSection dataset;
  TrainHyper model;
  FgaiConfig fgai;
  AttackSpec attack;
  std::vector<double> ratios = default_ratios();
  std::size_t trials = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path output_dir = "runs/desk";

  void validate() const;
  nlohmann::json to_json() const;
  std::string hash() const { return hex64(fnv1a(to_json().dump())); }
};

namespace detail {

template <typename T>
T config_number(const std::string& key, const std::string& value) {
  const auto v = parse_number<T>(value);
  if (!v) throw ConfigError("config key '" + key + "': '" + value + "' is not a valid number");
  return *v;
}


template <typename T>
std::vector<T> config_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  for (const auto& tok : split_tokens(value, true)) out.push_back(config_number<T>(key, tok));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <typename T, typename Member>
Setter num(Member member) {
  return [member](RunConfig& c, const std::string& k, const std::string& v) {
    std::invoke(member, c) = config_number<T>(k, v);
  };
}

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["dataset.source"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      if (v != "sbm" && v != "files")
        throw ConfigError("config key '" + k + "': expected sbm or files, got '" + v + "'");
      c.dataset.source = v;
    };
    t["dataset.path"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.dataset.path = v;
    };
    t["dataset.blocks"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.dataset.sbm.blocks; });
    t["dataset.nodes_per_block"] =
        num<std::size_t>([](RunConfig& c) -> auto& { return c.dataset.sbm.nodes_per_block; });
    t["dataset.p_in"] = num<double>([](RunConfig& c) -> auto& { return c.dataset.sbm.p_in; });
    t["dataset.p_out"] = num<double>([](RunConfig& c) -> auto& { return c.dataset.sbm.p_out; });
    t["dataset.feature_dim"] =
        num<std::size_t>([](RunConfig& c) -> auto& { return c.dataset.sbm.feature_dim; });
    t["dataset.feature_shift"] =
        num<double>([](RunConfig& c) -> auto& { return c.dataset.sbm.feature_shift; });

    t["model.variant"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      try {
        c.model.variant = parse_variant(v);
      } catch (const Error& e) {
        throw ConfigError("config key '" + k + "': " + e.what());
      }
    };
    t["model.heads"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.model.heads; });
    t["model.hidden"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.model.hidden; });
    t["model.dropout"] = num<double>([](RunConfig& c) -> auto& { return c.model.dropout; });
    t["model.lr"] = num<double>([](RunConfig& c) -> auto& { return c.model.lr; });
    t["model.weight_decay"] =
        num<double>([](RunConfig& c) -> auto& { return c.model.weight_decay; });
    t["model.epochs"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.model.epochs; });

    t["fgai.lambda1"] = num<double>([](RunConfig& c) -> auto& { return c.fgai.lambda1; });
    t["fgai.lambda2"] = num<double>([](RunConfig& c) -> auto& { return c.fgai.lambda2; });
    t["fgai.lambda3"] = num<double>([](RunConfig& c) -> auto& { return c.fgai.lambda3; });
    t["fgai.K"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.fgai.K; });
    t["fgai.R"] = num<double>([](RunConfig& c) -> auto& { return c.fgai.R; });
    t["fgai.T"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.fgai.T; });
    t["fgai.P"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.fgai.P; });
    t["fgai.Q"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.fgai.Q; });
    t["fgai.eta"] = num<double>([](RunConfig& c) -> auto& { return c.fgai.eta; });
    t["fgai.gamma"] = num<double>([](RunConfig& c) -> auto& { return c.fgai.gamma; });
    t["fgai.tau"] = num<double>([](RunConfig& c) -> auto& { return c.fgai.tau; });
    t["fgai.init_fraction"] =
        num<double>([](RunConfig& c) -> auto& { return c.fgai.init_fraction; });
    t["fgai.weight_decay"] =
        num<double>([](RunConfig& c) -> auto& { return c.fgai.weight_decay; });
    t["fgai.optimizer"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      if (v == "adam") c.fgai.optimizer = OuterOptimizer::kAdam;
      else if (v == "sgd") c.fgai.optimizer = OuterOptimizer::kSgd;
      else throw ConfigError("config key '" + k + "': expected adam or sgd, got '" + v + "'");
    };

    t["attack.n"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.attack.n; });
    t["attack.e"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.attack.e; });
    t["attack.feature_bound"] =
        num<double>([](RunConfig& c) -> auto& { return c.attack.feature_bound; });
    t["attack.pgd_steps"] =
        num<std::size_t>([](RunConfig& c) -> auto& { return c.attack.pgd_steps; });
    t["attack.pgd_step_size"] =
        num<double>([](RunConfig& c) -> auto& { return c.attack.pgd_step_size; });

    t["eval.ratios"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.ratios = config_list<double>(k, v);
    };
    t["eval.trials"] = num<std::size_t>([](RunConfig& c) -> auto& { return c.trials; });

    t["run.seeds"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.seeds = config_list<std::uint64_t>(k, v);
    };
    t["run.output_dir"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.output_dir = v;
    };
    return t;
  }();
  return table;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace detail

/// Sets one `section.key` to a textual value. Unknown keys are config errors.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const auto& table = detail::config_setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(c, key, detail::trim(value));
}

/// Applies `section.key=value`.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set_config_value(c, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Parses INI text on top of the defaults.
inline RunConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) set_config_value(c, section + "." + key, value.data());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in);
}

inline void RunConfig::validate() const {
  auto wrap = [](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  };
  if (dataset.source == "files" && dataset.path.empty())
    throw ConfigError("dataset.path is required when dataset.source = files");
  if (dataset.source == "sbm") {
    const auto& s = dataset.sbm;
    if (s.blocks < 2) throw ConfigError("dataset.blocks must be >= 2");
    if (s.nodes_per_block == 0) throw ConfigError("dataset.nodes_per_block must be >= 1");
    if (!(s.p_out >= 0.0 && s.p_out < s.p_in && s.p_in <= 1.0) &&
        !(s.p_in == 0.0 && s.p_out == 0.0))
      throw ConfigError("dataset requires 0 <= p_out < p_in <= 1");
    if (s.feature_dim < s.blocks) throw ConfigError("dataset.feature_dim must be >= blocks");
    if (!(s.feature_shift > 0.0)) throw ConfigError("dataset.feature_shift must be > 0");
  }
  if (model.heads < 1 || model.hidden < 1) throw ConfigError("model.heads and model.hidden must be >= 1");
  if (model.epochs < 1) throw ConfigError("model.epochs must be >= 1");
  if (!(model.lr > 0.0)) throw ConfigError("model.lr must be > 0");
  if (model.weight_decay < 0.0) throw ConfigError("model.weight_decay must be >= 0");
  if (model.dropout < 0.0 || model.dropout >= 1.0) throw ConfigError("model.dropout must be in [0, 1)");
  wrap([&] { fgai.validate(); });
  wrap([&] { attack.validate(); });
  if (ratios.empty()) throw ConfigError("eval.ratios must be non-empty");
  for (double r : ratios)
    if (r < 0.0 || r > 0.5) throw ConfigError("eval.ratios entries must be in [0, 0.5]");
  if (trials < 1) throw ConfigError("eval.trials must be >= 1");
  if (seeds.empty()) throw ConfigError("run.seeds must be non-empty");
  if (output_dir.empty()) throw ConfigError("run.output_dir must be set");
}

/// Canonical form; keys sorted so the hash ignores file layout.
inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["dataset"] = {{"source", dataset.source},
                  {"path", dataset.path.generic_string()},
                  {"blocks", dataset.sbm.blocks},
                  {"nodes_per_block", dataset.sbm.nodes_per_block},
                  {"p_in", dataset.sbm.p_in},
                  {"p_out", dataset.sbm.p_out},
                  {"feature_dim", dataset.sbm.feature_dim},
                  {"feature_shift", dataset.sbm.feature_shift}};
  j["model"] = {{"variant", to_string(model.variant)}, {"heads", model.heads},
                {"hidden", model.hidden},                {"dropout", model.dropout},
                {"lr", model.lr},                        {"weight_decay", model.weight_decay},
                {"epochs", model.epochs}};
  j["fgai"] = {{"lambda1", fgai.lambda1},
               {"lambda2", fgai.lambda2},
               {"lambda3", fgai.lambda3},
               {"K", fgai.K},
               {"R", fgai.R},
               {"T", fgai.T},
               {"P", fgai.P},
               {"Q", fgai.Q},
               {"eta", fgai.eta},
               {"gamma", fgai.gamma},
               {"tau", fgai.tau},
               {"init_fraction", fgai.init_fraction},
               {"weight_decay", fgai.weight_decay},
               {"optimizer", fgai.optimizer == OuterOptimizer::kAdam ? "adam" : "sgd"}};
  j["attack"] = {{"n", attack.n},
                 {"e", attack.e},
                 {"feature_bound", attack.feature_bound},
                 {"pgd_steps", attack.pgd_steps},
                 {"pgd_step_size", attack.pgd_step_size}};
  j["eval"] = {{"ratios", ratios}, {"trials", trials}};
  j["run"] = {{"seeds", seeds}};
  return j;
}

// ---------------------------------------------------------------------------
// Run layout and manifest

inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{"vanilla", "fgai"};
  return names;
}

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path seed_dir(std::uint64_t s) const {
    return root / ("seed_" + std::to_string(s));
  }
  std::filesystem::path data(std::uint64_t s) const { return seed_dir(s) / "data"; }
  std::filesystem::path model_dir(std::uint64_t s, const std::string& m) const {
    return seed_dir(s) / m;
  }
  std::filesystem::path model_file(std::uint64_t s, const std::string& m) const {
    return model_dir(s, m) / "model.json";
  }
  std::filesystem::path attack_dir(std::uint64_t s, const std::string& m) const {
    return seed_dir(s) / "attack" / m;
  }
  std::filesystem::path eval_dir(std::uint64_t s) const { return seed_dir(s) / "eval"; }
  std::filesystem::path stability(const std::string& m) const {
    return root / ("stability_" + m + ".json");
  }
  std::filesystem::path fidelity(const std::string& m) const {
    return root / ("fidelity_" + m + ".json");
  }
  std::filesystem::path report(const std::string& m) const {
    return root / ("report_" + m + ".json");
  }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

namespace detail {

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  auto out = open_for_write(path);
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void require(const std::filesystem::path& path, const std::string& stage) {
  if (!std::filesystem::exists(path))
    throw DependencyError("missing output of stage '" + stage + "': " + path.string() +
                          " (run `" + stage + "` first)");
}

}  // namespace detail

/// Records a finished stage in manifest.json. The manifest hash covers the
/// config hash, versions, seeds and every stage's outputs, but no timings.
inline std::string record_stage(const RunConfig& config, const std::string& stage,
                                std::vector<std::filesystem::path> outputs, double seconds) {
  const RunPaths paths{config.output_dir};
  nlohmann::json m;
  if (std::filesystem::exists(paths.manifest())) {
    m = detail::read_json(paths.manifest());
    if (m.value("config_hash", "") != config.hash()) {
      log(LogLevel::kWarn, "config changed since the last stage; earlier stage records dropped");
      m = nlohmann::json{};
    }
  }
  m["config_hash"] = config.hash();
  m["versions"] = {{"fgai", kVersion},
                   {"model_format", kModelFormatVersion},
                   {"report_format", kReportFormatVersion}};
  m["seeds"] = config.seeds;

  std::sort(outputs.begin(), outputs.end());
  std::uint64_t h = fnv1a("");
  std::vector<std::string> rel;
  for (const auto& p : outputs) {
    const auto r = std::filesystem::relative(p, paths.root).generic_string();
    rel.push_back(r);
    h = fnv1a(r + '\n' + hex64(h) + detail::read_bytes(p));
  }
  m["stages"][stage] = {{"outputs", rel}, {"output_hash", hex64(h)}};
  m["timings"][stage] = seconds;

  nlohmann::json hashed = m;
  hashed.erase("timings");
  hashed.erase("manifest_hash");
  m["manifest_hash"] = hex64(fnv1a(hashed.dump()));
  detail::write_text(paths.manifest(), m.dump(2) + "\n");
  return m["manifest_hash"].get<std::string>();
}

// ---------------------------------------------------------------------------
// Stages

namespace detail {

class StageTimer {
 public:
  explicit StageTimer(std::string name) : name_(std::move(name)) {
    log(LogLevel::kInfo, "stage " + name_ + " started");
  }
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::string name_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline nlohmann::ordered_json mean_std_json(const MeanStd& m) {
  return {{"mean", m.mean}, {"std", m.std}, {"values", m.values}};
}

inline MeanStd mean_std_from_json(const nlohmann::json& j) {
  return mean_std(j.at("values").get<std::vector<double>>());
}

inline std::string curve_csv(const FidelityCurve& c) {
  std::ostringstream out;
  out << "r,f_plus,f_minus\n";
  for (std::size_t i = 0; i < c.ratios.size(); ++i)
    out << format_double(c.ratios[i]) << ',' << format_double(c.f_plus[i]) << ','
        << format_double(c.f_minus[i]) << '\n';
  return out.str();
}

inline std::vector<std::string> available_models(const RunConfig& c) {
  const RunPaths paths{c.output_dir};
  std::vector<std::string> out;
  for (const auto& m : model_names()) {
    bool all = true;
    for (auto s : c.seeds) all = all && std::filesystem::exists(paths.model_file(s, m));
    if (all) out.push_back(m);
  }
  return out;
}

}  // namespace detail

/// Builds the dataset a seed runs on.
inline Dataset make_dataset(const RunConfig& c, std::uint64_t seed) {
  if (c.dataset.source == "sbm") {
    auto p = c.dataset.sbm;
    p.seed = seed;
    return generate_sbm(p);
  }
  const auto files = DatasetFiles::in(c.dataset.path);
  auto split = std::filesystem::exists(files.split)
                   ? std::optional<std::filesystem::path>(files.split)
                   : std::nullopt;
  auto d = load_dataset(files.edges, files.features, files.labels, split, seed);
  if (std::filesystem::exists(files.manifest)) {
    const auto m = detail::read_json(files.manifest);
    d.name = m.value("name", d.name);
    d.labels.num_classes = m.value("C", d.labels.num_classes);
  }
  d.validate();
  return d;
}

inline void cmd_gen_data(const RunConfig& c) {
  c.validate();
  detail::StageTimer timer("gen-data");
  const RunPaths paths{c.output_dir};
  detail::ensure_dir(paths.root);
  std::vector<std::filesystem::path> outputs;
  for (auto s : c.seeds) {
    const auto files = write_dataset(make_dataset(c, s), paths.data(s), s);
    outputs.insert(outputs.end(), {files.edges, files.features, files.labels, files.split,
                                   files.manifest});
  }
  record_stage(c, "gen-data", outputs, timer.seconds());
}

inline Dataset load_stage_dataset(const RunConfig& c, std::uint64_t s) {
  const RunPaths paths{c.output_dir};
  detail::require(DatasetFiles::in(paths.data(s)).manifest, "gen-data");
  return read_dataset_dir(paths.data(s));
}

inline void cmd_train(const RunConfig& c) {
  c.validate();
  detail::StageTimer timer("train");
  const RunPaths paths{c.output_dir};
  std::vector<std::filesystem::path> outputs;
  for (auto s : c.seeds) {
    const auto data = load_stage_dataset(c, s);
    auto hyper = c.model;
    hyper.seed = s;
    const auto res = train_vanilla(data, hyper);
    log(LogLevel::kInfo, "seed " + std::to_string(s) + ": vanilla best val F1 " +
                             detail::format_double(res.best_val_f1));
    const auto dir = paths.model_dir(s, "vanilla");
    detail::ensure_dir(dir);
    save_params(res.params, dir / "model.json");
    std::ostringstream log_csv;
    write_train_log(log_csv, res.log);
    detail::write_text(dir / "train_log.csv", log_csv.str());
    detail::write_json(dir / "summary.json", {{"best_val_f1", res.best_val_f1}});
    outputs.insert(outputs.end(), {dir / "model.json", dir / "train_log.csv", dir / "summary.json"});
  }
  record_stage(c, "train", outputs, timer.seconds());
}

inline void cmd_fgai(const RunConfig& c) {
  c.validate();
  detail::StageTimer timer("fgai");
  const RunPaths paths{c.output_dir};
  std::vector<std::filesystem::path> outputs;
  for (auto s : c.seeds) detail::require(paths.model_file(s, "vanilla"), "train");
  for (auto s : c.seeds) {
    const auto data = load_stage_dataset(c, s);
    const auto vanilla = load_params(paths.model_file(s, "vanilla"));
    auto cfg = c.fgai;
    cfg.seed = s;
    const auto res = fgai_train(data, vanilla, cfg);
    const auto mon = monitor_faithfulness(data, vanilla, res.params, cfg, c.trials, s);
    log(LogLevel::kInfo, "seed " + std::to_string(s) + ": beta1 " + detail::format_double(mon.beta1) +
                             " alpha1 " + detail::format_double(mon.alpha1));
    const auto dir = paths.model_dir(s, "fgai");
    detail::ensure_dir(dir);
    save_params(res.params, dir / "model.json");
    std::ostringstream log_csv;
    write_fgai_log(log_csv, res.log);
    detail::write_text(dir / "fgai_log.csv", log_csv.str());
    detail::write_json(dir / "monitor.json", {{"beta1", mon.beta1},
                                             {"beta2", mon.beta2},
                                             {"alpha1", mon.alpha1},
                                             {"alpha2", mon.alpha2},
                                             {"per_node_beta1", mon.per_node_beta1},
                                             {"K", mon.k},
                                             {"R", mon.radius},
                                             {"max_delta_norm", res.max_delta_norm},
                                             {"max_rho_norm", res.max_rho_norm}});
    outputs.insert(outputs.end(), {dir / "model.json", dir / "fgai_log.csv", dir / "monitor.json"});
  }
  record_stage(c, "fgai", outputs, timer.seconds());
}

/// Attacks every trained model of every seed. Each model is attacked with
/// its own gradients.
inline void cmd_attack(const RunConfig& c) {
  c.validate();
  detail::StageTimer timer("attack");
  const RunPaths paths{c.output_dir};
  for (auto s : c.seeds) detail::require(paths.model_file(s, "vanilla"), "train");
  std::vector<std::filesystem::path> outputs;
  for (auto s : c.seeds) {
    const auto data = load_stage_dataset(c, s);
    for (const auto& m : detail::available_models(c)) {
      auto spec = c.attack;
      spec.seed = s;
      const auto res = inject_attack(data, load_params(paths.model_file(s, m)), spec);
      const auto dir = paths.attack_dir(s, m);
      const auto files = write_dataset(res.perturbed, dir / "data", s);
      detail::write_json(dir / "attack.json", {{"injected_nodes", res.injected_nodes},
                                              {"start_g_tvd", res.start_g_tvd},
                                              {"final_g_tvd", res.final_g_tvd}});
      outputs.insert(outputs.end(), {files.edges, files.features, files.labels, files.split,
                                     files.manifest, dir / "attack.json"});
    }
  }
  record_stage(c, "attack", outputs, timer.seconds());
}

inline void cmd_eval_stability(const RunConfig& c) {
  c.validate();
  detail::StageTimer timer("eval-stability");
  const RunPaths paths{c.output_dir};
  for (auto s : c.seeds) detail::require(paths.model_file(s, "vanilla"), "train");
  std::vector<std::filesystem::path> outputs;
  for (const auto& m : detail::available_models(c)) {
    std::vector<StabilityRun> runs;
    for (auto s : c.seeds) {
      detail::require(paths.attack_dir(s, m) / "attack.json", "attack");
      const auto data = load_stage_dataset(c, s);
      const auto params = load_params(paths.model_file(s, m));
      AttackResult attack;
      attack.perturbed = read_dataset_dir(paths.attack_dir(s, m) / "data");
      attack.edge_map = edge_index_map(data.graph, attack.perturbed.graph);
      runs.push_back(stability_run(data, params, attack, s));
    }
    const auto rep = aggregate(std::move(runs));
    nlohmann::ordered_json j;
    j["model"] = m;
    j["seed_list"] = c.seeds;
    j["f1"] = detail::mean_std_json(rep.f1);
    j["f1_attacked"] = detail::mean_std_json(rep.f1_attacked);
    j["g_tvd"] = detail::mean_std_json(rep.g_tvd);
    j["g_jsd"] = detail::mean_std_json(rep.g_jsd);
    detail::write_json(paths.stability(m), j);
    outputs.push_back(paths.stability(m));
  }
  record_stage(c, "eval-stability", outputs, timer.seconds());
}

namespace detail {

inline nlohmann::ordered_json curves_json(const std::vector<FidelityCurve>& curves) {
  const auto& first = curves.front();
  std::vector<double> fp(first.ratios.size(), 0.0), fm(first.ratios.size(), 0.0);
  std::vector<double> sp, sm;
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < fp.size(); ++i) {
      fp[i] += c.f_plus[i] / static_cast<double>(curves.size());
      fm[i] += c.f_minus[i] / static_cast<double>(curves.size());
    }
    sp.push_back(c.slope_plus);
    sm.push_back(c.slope_minus);
  }
  const auto msp = mean_std(sp), msm = mean_std(sm);
  nlohmann::ordered_json j;
  j["r"] = first.ratios;
  j["f_plus"] = fp;
  j["f_minus"] = fm;
  j["slope_plus"] = msp.mean;
  j["slope_minus"] = msm.mean;
  j["slope_plus_std"] = msp.std;
  j["slope_minus_std"] = msm.std;
  j["abs_slope_plus"] = std::abs(msp.mean);
  j["abs_slope_minus"] = std::abs(msm.mean);
  j["slope_plus_values"] = sp;
  j["slope_minus_values"] = sm;
  return j;
}

}  // namespace detail

/// Edge-removal curves on the clean graph and on each model's attacked graph.
inline void cmd_eval_fidelity(const RunConfig& c) {
  c.validate();
  detail::StageTimer timer("eval-fidelity");
  const RunPaths paths{c.output_dir};
  for (auto s : c.seeds) detail::require(paths.model_file(s, "vanilla"), "train");
  std::vector<std::filesystem::path> outputs;
  for (const auto& m : detail::available_models(c)) {
    std::vector<FidelityCurve> clean, attacked;
    for (auto s : c.seeds) {
      detail::require(paths.attack_dir(s, m) / "attack.json", "attack");
      const auto data = load_stage_dataset(c, s);
      const auto params = load_params(paths.model_file(s, m));
      const auto att = forward(data.graph, data.features, params).first;
      clean.push_back(fidelity_curve(data, params, att, c.ratios));
      const auto adv = read_dataset_dir(paths.attack_dir(s, m) / "data");
      const auto att_adv = forward(adv.graph, adv.features, params).first;
      attacked.push_back(fidelity_curve(adv, params, att_adv, c.ratios));

      const auto dir = paths.eval_dir(s);
      detail::write_text(dir / ("fidelity_" + m + ".csv"), detail::curve_csv(clean.back()));
      detail::write_text(dir / ("fidelity_attacked_" + m + ".csv"),
                         detail::curve_csv(attacked.back()));
      outputs.insert(outputs.end(), {dir / ("fidelity_" + m + ".csv"),
                                     dir / ("fidelity_attacked_" + m + ".csv")});
    }
    nlohmann::ordered_json j;
    j["model"] = m;
    j["seed_list"] = c.seeds;
    j["fidelity"] = detail::curves_json(clean);
    j["fidelity_attacked"] = detail::curves_json(attacked);
    detail::write_json(paths.fidelity(m), j);
    outputs.push_back(paths.fidelity(m));
  }
  record_stage(c, "eval-fidelity", outputs, timer.seconds());
}

namespace detail {

inline const std::vector<std::string>& report_keys() {
  static const std::vector<std::string> keys{"format",  "version", "model", "dataset",
                                             "seed_list", "f1",    "f1_attacked", "g_tvd",
                                             "g_jsd",   "fidelity", "fidelity_attacked"};
  return keys;
}

inline void check_report_schema(const nlohmann::json& j, const std::filesystem::path& path) {
  for (const auto& k : report_keys())
    if (!j.contains(k))
      throw StructuralError("report " + path.string() + " lacks key '" + k + "'");
  if (j.at("format") != "fgai-report" || j.at("version") != kReportFormatVersion)
    throw StructuralError("report " + path.string() + " has an incompatible format");
}

}  // namespace detail

/// Merges the stability and fidelity outputs of `c.output_dir` into
/// report_<model>.json, then writes a comparison table over that run and
/// every extra run directory.
inline void cmd_report(const RunConfig& c, const std::vector<std::filesystem::path>& extra_runs = {}) {
  c.validate();
  detail::StageTimer timer("report");
  const RunPaths paths{c.output_dir};
  detail::require(paths.data(c.seeds.front()) / "dataset.json", "gen-data");
  const auto dataset_name =
      detail::read_json(paths.data(c.seeds.front()) / "dataset.json").at("name").get<std::string>();
  std::vector<std::filesystem::path> outputs;
  for (const auto& m : detail::available_models(c)) {
    detail::require(paths.stability(m), "eval-stability");
    detail::require(paths.fidelity(m), "eval-fidelity");
    const auto st = detail::read_json(paths.stability(m));
    const auto fi = detail::read_json(paths.fidelity(m));
    if (st.at("seed_list") != fi.at("seed_list"))
      throw StructuralError("stability and fidelity outputs of '" + m + "' cover different seeds");
    nlohmann::ordered_json j;
    j["format"] = "fgai-report";
    j["version"] = kReportFormatVersion;
    j["model"] = m;
    j["dataset"] = c.dataset.source == "sbm"
                       ? "sbm-" + std::to_string(c.dataset.sbm.blocks) + "x" +
                             std::to_string(c.dataset.sbm.nodes_per_block)
                       : dataset_name;
    j["seed_list"] = st.at("seed_list");
    for (const char* k : {"f1", "f1_attacked", "g_tvd", "g_jsd"}) j[k] = st.at(k);
    j["fidelity"] = fi.at("fidelity");
    j["fidelity_attacked"] = fi.at("fidelity_attacked");
    if (m == "fgai") {
      nlohmann::ordered_json def;
      for (const char* k : {"beta1", "beta2", "alpha1", "alpha2", "per_node_beta1"}) {
        std::vector<double> v;
        for (auto s : c.seeds)
          v.push_back(detail::read_json(paths.model_dir(s, m) / "monitor.json").at(k).get<double>());
        def[k] = detail::mean_std_json(mean_std(v));
      }
      j["faithfulness"] = def;
    }
    detail::write_json(paths.report(m), j);
    outputs.push_back(paths.report(m));
  }

  std::vector<std::filesystem::path> runs{paths.root};
  runs.insert(runs.end(), extra_runs.begin(), extra_runs.end());
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::ostringstream csv;
  csv << "run,model,g_jsd_mean,g_jsd_std,g_tvd_mean,g_tvd_std,f1_mean,f1_std,f1_attacked_mean,"
         "f1_attacked_std,slope_plus_mean,slope_plus_std,slope_minus_mean,slope_minus_std\n";
  for (const auto& run : runs) {
    bool any = false;
    for (const auto& m : model_names()) {
      const auto path = RunPaths{run}.report(m);
      if (!std::filesystem::exists(path)) continue;
      any = true;
      const auto j = detail::read_json(path);
      detail::check_report_schema(j, path);
      nlohmann::ordered_json row;
      row["run"] = run.generic_string();
      row["model"] = m;
      auto cell = [&](const char* key) {
        const auto ms = detail::mean_std_from_json(j.at(key));
        row[std::string(key)] = {{"mean", ms.mean}, {"std", ms.std}};
        csv << ',' << detail::format_double(ms.mean) << ',' << detail::format_double(ms.std);
      };
      csv << run.generic_string() << ',' << m;
      for (const char* k : {"g_jsd", "g_tvd", "f1", "f1_attacked"}) cell(k);
      for (const char* k : {"slope_plus", "slope_minus"}) {
        const auto ms = mean_std(j.at("fidelity").at(std::string(k) + "_values").get<std::vector<double>>());
        row[std::string(k)] = {{"mean", ms.mean}, {"std", ms.std}};
        csv << ',' << detail::format_double(ms.mean) << ',' << detail::format_double(ms.std);
      }
      csv << '\n';
      rows.push_back(row);
    }
    if (!any) throw DependencyError("run directory " + run.string() + " holds no report");
  }
  detail::write_text(paths.root / "comparison.csv", csv.str());
  detail::write_json(paths.root / "comparison.json", rows);
  outputs.insert(outputs.end(), {paths.root / "comparison.csv", paths.root / "comparison.json"});
  record_stage(c, "report", outputs, timer.seconds());
}

inline void cmd_all(const RunConfig& c) {
  cmd_gen_data(c);
  cmd_train(c);
  cmd_fgai(c);
  cmd_attack(c);
  cmd_eval_stability(c);
  cmd_eval_fidelity(c);
  cmd_report(c);
}

/// CLI exit code for an error.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DependencyError*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  return 1;
}

}  // namespace fgai
