#pragma once

// Flat key = value training configuration (schema in docs/config.md).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dvae/data/dataset.hpp"
#include "dvae/elbo.hpp"
#include "dvae/latent.hpp"
#include "dvae/nets/network.hpp"

namespace dvae::train {

enum class Task { synthesis_tags, synthesis_zu, pose_estimation };

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names{"synthesis_tags", "synthesis_zu", "pose_estimation"};
  return names;
}

inline std::string to_string(Task t) { return task_names()[static_cast<int>(t)]; }

inline Task task_from_string(const std::string& s) {
  for (std::size_t i = 0; i < task_names().size(); ++i)
    if (task_names()[i] == s) return static_cast<Task>(i);
  std::string valid;
  for (const auto& n : task_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown task '" + s + "' (valid tasks: " + valid + ")");
}

// Weights of one ELBO instance, with y weights by factor position.
struct PhaseWeights {
  double lambda_x = 1.0, lambda_y1 = 0.01, lambda_y2 = 0.01, beta = 100.0;

  elbo::ElboWeights for_partition(const LatentPartition& p) const {
    elbo::ElboWeights w{.lambda_x = lambda_x, .lambda_y = {}, .beta = beta};
    const double ys[2] = {lambda_y1, lambda_y2};
    for (std::size_t i = 0; i < p.size() && i < 2; ++i) w.lambda_y[p.segments()[i].name] = ys[i];
    w.validate();
    return w;
  }
};

struct TrainConfig {
  Task task = Task::pose_estimation;
  LatentPartition partition;
  std::uint64_t seed = 7;
  int batch_size = 32;
  double learning_rate = 1e-4;
  int epochs_t1 = 20, epochs_t2 = 20, epochs_t3 = 0;
  PhaseWeights dis, emb;
  elbo::ZuStatsMode zu_stats = elbo::ZuStatsMode::aggregate;
  data::LabelPolicy supervision;
  double augment_rotation_deg = 0;
  bool augment_flip = false;
  nets::ScalePreset preset = nets::ScalePreset::desk;
  int image_encoder_width = 16;
  int image_decoder_width = 32;
  int vector_width = 128;
  int vector_depth = 3;
  double pose_unit_mm = 50;
  int checkpoint_every = 5;

  std::string text;  // resolved key = value listing
  std::string hash;  // FNV-1a of text
};

namespace detail {

// Defaults that depend on the task; every other key has a fixed default.
inline std::map<std::string, std::string> task_defaults(Task t) {
  const bool pose = t == Task::pose_estimation;
  const bool zu = t == Task::synthesis_zu;
  const std::string beta = pose ? "0.01" : "100";
  std::map<std::string, std::string> d{
      {"partition", pose ? "cpose:32,viewpoint:32" : zu ? "pose:32,u:32" : "pose:32,content:32"},
      {"epochs_t1", zu ? "10" : "20"},
      {"epochs_t2", zu ? "1" : "20"},
      {"epochs_t3", zu ? "20" : "0"},
      {"dis.beta", beta},
      {"emb.beta", beta},
  };
  return d;
}

inline const std::vector<std::string>& key_order() {
  static const std::vector<std::string> keys{
      "task", "partition", "seed", "batch_size", "learning_rate", "epochs_t1", "epochs_t2", "epochs_t3",
      "dis.lambda_x", "dis.lambda_y1", "dis.lambda_y2", "dis.beta", "emb.lambda_x", "emb.lambda_y1",
      "emb.lambda_y2", "emb.beta", "zu_stats", "supervision", "augment.rotation_deg", "augment.flip", "preset",
      "image_encoder_width", "image_decoder_width", "vector_width", "vector_depth", "pose_unit_mm",
      "checkpoint_every"};
  return keys;
}

inline std::map<std::string, std::string> fixed_defaults() {
  return {{"seed", "7"},
          {"batch_size", "32"},
          {"learning_rate", "0.0001"},
          {"dis.lambda_x", "1"},
          {"dis.lambda_y1", "0.01"},
          {"dis.lambda_y2", "0.01"},
          {"emb.lambda_x", "1"},
          {"emb.lambda_y1", "0.01"},
          {"emb.lambda_y2", "0.01"},
          {"zu_stats", "aggregate"},
          {"supervision", "full"},
          {"augment.rotation_deg", "0"},
          {"augment.flip", "false"},
          {"preset", "desk"},
          {"image_encoder_width", "16"},
          {"image_decoder_width", "32"},
          {"vector_width", "128"},
          {"vector_depth", "3"},
          {"pose_unit_mm", "50"},
          {"checkpoint_every", "5"}};
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": '" + v + "' is not a number");
}

inline long long to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw ConfigError(key + ": '" + v + "' is not an integer");
  return static_cast<long long>(d);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not true/false");
}

}  // namespace detail

inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    kv[key] = value;
  }
  return kv;
}

// Fills defaults, validates, and records the resolved text and its hash.
inline TrainConfig resolve_config(std::map<std::string, std::string> kv) {
  if (!kv.count("task")) throw ConfigError("config needs a task (valid tasks: synthesis_tags, synthesis_zu, pose_estimation)");
  const Task task = task_from_string(kv["task"]);
  const auto& order = detail::key_order();
  for (const auto& [k, v] : kv) {
    if (std::find(order.begin(), order.end(), k) == order.end()) throw ConfigError("unknown config key '" + k + "'");
  }
  for (const auto& src : {detail::task_defaults(task), detail::fixed_defaults()})
    for (const auto& [k, v] : src) kv.try_emplace(k, v);

  TrainConfig c;
  c.task = task;
  c.partition = LatentPartition::parse(kv["partition"]);
  if (c.partition.size() != 2) throw ConfigError("partition must have exactly two segments");
  if (task == Task::synthesis_zu && c.partition.segments()[1].name != "u") {
    throw ConfigError("task synthesis_zu needs the second partition segment to be named 'u'");
  }
  c.seed = static_cast<std::uint64_t>(detail::to_int("seed", kv["seed"]));
  c.batch_size = static_cast<int>(detail::to_int("batch_size", kv["batch_size"]));
  c.learning_rate = detail::to_double("learning_rate", kv["learning_rate"]);
  c.epochs_t1 = static_cast<int>(detail::to_int("epochs_t1", kv["epochs_t1"]));
  c.epochs_t2 = static_cast<int>(detail::to_int("epochs_t2", kv["epochs_t2"]));
  c.epochs_t3 = static_cast<int>(detail::to_int("epochs_t3", kv["epochs_t3"]));
  for (auto [prefix, w] : {std::pair{"dis.", &c.dis}, {"emb.", &c.emb}}) {
    const std::string p = prefix;
    w->lambda_x = detail::to_double(p + "lambda_x", kv[p + "lambda_x"]);
    w->lambda_y1 = detail::to_double(p + "lambda_y1", kv[p + "lambda_y1"]);
    w->lambda_y2 = detail::to_double(p + "lambda_y2", kv[p + "lambda_y2"]);
    w->beta = detail::to_double(p + "beta", kv[p + "beta"]);
    w->for_partition(c.partition);
  }
  if (kv["zu_stats"] == "aggregate") {
    c.zu_stats = elbo::ZuStatsMode::aggregate;
  } else if (kv["zu_stats"] == "per_record") {
    c.zu_stats = elbo::ZuStatsMode::per_record;
  } else {
    throw ConfigError("zu_stats must be aggregate or per_record");
  }
  c.supervision = data::LabelPolicy::parse(kv["supervision"]);
  c.augment_rotation_deg = detail::to_double("augment.rotation_deg", kv["augment.rotation_deg"]);
  c.augment_flip = detail::to_bool("augment.flip", kv["augment.flip"]);
  c.preset = nets::scale_preset_from_string(kv["preset"]);
  c.image_encoder_width = static_cast<int>(detail::to_int("image_encoder_width", kv["image_encoder_width"]));
  c.image_decoder_width = static_cast<int>(detail::to_int("image_decoder_width", kv["image_decoder_width"]));
  c.vector_width = static_cast<int>(detail::to_int("vector_width", kv["vector_width"]));
  c.vector_depth = static_cast<int>(detail::to_int("vector_depth", kv["vector_depth"]));
  c.pose_unit_mm = detail::to_double("pose_unit_mm", kv["pose_unit_mm"]);
  c.checkpoint_every = static_cast<int>(detail::to_int("checkpoint_every", kv["checkpoint_every"]));

  if (c.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(c.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (c.epochs_t1 < 0 || c.epochs_t2 < 0 || c.epochs_t3 < 0) throw ConfigError("epoch counts must be >= 0");
  if (c.augment_rotation_deg < 0 || c.augment_rotation_deg > 180) {
    throw ConfigError("augment.rotation_deg must be in [0, 180]");
  }
  if (c.image_encoder_width <= 0 || c.image_decoder_width <= 0 || c.vector_width <= 0 || c.vector_depth <= 0) {
    throw ConfigError("network widths and depth must be positive");
  }
  if (!(c.pose_unit_mm > 0)) throw ConfigError("pose_unit_mm must be positive");
  if (c.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");

  std::ostringstream os;
  for (const auto& k : order) os << k << " = " << kv[k] << '\n';
  c.text = os.str();
  c.hash = data::hex64(data::fnv1a(c.text));
  return c;
}

inline TrainConfig parse_config(const std::string& text) { return resolve_config(parse_config_text(text)); }

inline TrainConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " not found");
  return parse_config(data::read_file(path));
}

}  // namespace dvae::train
