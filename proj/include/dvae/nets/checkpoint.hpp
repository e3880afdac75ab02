#pragma once

// Checkpoint archive: every network of a model in one file.
//
//   bytes 0..7   "DVAECKPT"
//   u32          format version
//   u64          length of the JSON metadata block
//   ...          JSON metadata (task, partition, config hash/text, net specs,
//                tensor names/shapes/offsets)
//   ...          float32 tensor payload, little-endian, in metadata order
//
// Loading rebuilds every network from its stored NetSpec and refuses the
// archive if the tensors do not line up with that architecture.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "dvae/errors.hpp"
#include "dvae/latent.hpp"
#include "dvae/nets/network.hpp"

namespace dvae::nets {

inline constexpr char kCheckpointMagic[8] = {'D', 'V', 'A', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string task;
  LatentPartition partition;
  std::string config_hash;
  std::string config_text;
  std::string phase;
  int epoch = 0;
  std::map<std::string, Network<float>> nets;

  const Network<float>& net(const std::string& role) const {
    auto it = nets.find(role);
    if (it == nets.end()) throw CompatibilityError("checkpoint has no network '" + role + "'");
    return it->second;
  }
};

inline nlohmann::json spec_to_json(const NetSpec& s) {
  return {{"kind", to_string(s.kind)},   {"input_shape", s.input_shape},
          {"output_shape", s.output_shape}, {"width", s.width},
          {"depth", s.depth},              {"preset", to_string(s.preset)}};
}

inline NetSpec spec_from_json(const nlohmann::json& j) {
  NetSpec s;
  s.kind = net_kind_from_string(j.at("kind").get<std::string>());
  s.input_shape = j.at("input_shape").get<std::vector<int>>();
  s.output_shape = j.at("output_shape").get<std::vector<int>>();
  s.width = j.at("width").get<int>();
  s.depth = j.at("depth").get<int>();
  s.preset = scale_preset_from_string(j.at("preset").get<std::string>());
  return s;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  static_assert(std::endian::native == std::endian::little, "checkpoint payload is little-endian");
  nlohmann::json meta;
  meta["task"] = ckpt.task;
  meta["partition"] = ckpt.partition.to_string();
  meta["config_hash"] = ckpt.config_hash;
  meta["config_text"] = ckpt.config_text;
  meta["phase"] = ckpt.phase;
  meta["epoch"] = ckpt.epoch;
  std::uint64_t offset = 0;
  for (const auto& [role, net] : ckpt.nets) {
    nlohmann::json n;
    n["spec"] = spec_to_json(net.spec());
    n["seed"] = net.params().seed;
    n["params_version"] = net.params().version;
    for (const auto& t : net.params().tensors) {
      n["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
      offset += static_cast<std::uint64_t>(t.values.size());
    }
    meta["nets"][role] = std::move(n);
  }
  meta["payload_floats"] = offset;
  const std::string text = meta.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [role, net] : ckpt.nets) {
      for (const auto& t : net.params().tensors) {
        out.write(reinterpret_cast<const char*>(t.values.data()),
                  static_cast<std::streamsize>(t.values.size() * sizeof(float)));
      }
    }
    if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CompatibilityError("'" + path.string() + "' is not a dVAE checkpoint");
  }
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || version != kCheckpointVersion) {
    throw CompatibilityError("checkpoint format version " + std::to_string(version) +
                             " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 30)) throw CompatibilityError("corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CompatibilityError("truncated checkpoint metadata");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(std::string("corrupt checkpoint metadata: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.task = meta.at("task").get<std::string>();
    ckpt.partition = LatentPartition::parse(meta.at("partition").get<std::string>());
    ckpt.config_hash = meta.at("config_hash").get<std::string>();
    ckpt.config_text = meta.at("config_text").get<std::string>();
    ckpt.phase = meta.at("phase").get<std::string>();
    ckpt.epoch = meta.at("epoch").get<int>();
    for (const auto& [role, n] : meta.at("nets").items()) {
      const NetSpec spec = spec_from_json(n.at("spec"));
      const auto seed = n.at("seed").get<std::uint64_t>();
      Network<float> net = build_network<float>(spec, seed);
      const auto& tensors = n.at("tensors");
      auto& params = net.params();
      if (tensors.size() != params.tensors.size()) {
        throw CompatibilityError("network '" + role + "' stores " + std::to_string(tensors.size()) +
                                 " tensors but its spec builds " + std::to_string(params.tensors.size()));
      }
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        auto& t = params.tensors[i];
        if (tensors[i].at("name").get<std::string>() != t.name ||
            tensors[i].at("shape").get<std::vector<int>>() != t.shape) {
          throw CompatibilityError("network '" + role + "' tensor " + std::to_string(i) + " ('" +
                                   tensors[i].at("name").get<std::string>() +
                                   "') does not match its spec ('" + t.name + "')");
        }
        in.read(reinterpret_cast<char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
        if (!in) throw CompatibilityError("truncated checkpoint payload");
      }
      params.version = n.at("params_version").get<std::string>();
      ckpt.nets.emplace(role, std::move(net));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(std::string("malformed checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw CompatibilityError(std::string("checkpoint holds an invalid spec: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CompatibilityError("trailing bytes in checkpoint");
  return ckpt;
}

// Fails unless every expected role exists with exactly the expected spec.
inline void require_compatible(const Checkpoint& ckpt, const std::map<std::string, NetSpec>& expected,
                               const LatentPartition& partition) {
  if (!(ckpt.partition == partition)) {
    throw CompatibilityError("checkpoint partition " + ckpt.partition.to_string() +
                             " does not match expected " + partition.to_string());
  }
  for (const auto& [role, spec] : expected) {
    const auto& net = ckpt.net(role);
    if (!(net.spec() == spec)) {
      throw CompatibilityError("network '" + role + "' is " + net.spec().describe() + ", expected " +
                               spec.describe());
    }
  }
}

}  // namespace dvae::nets
