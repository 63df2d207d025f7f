#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ept/tooling/crc.hpp"
#include "ept/training/trainer.hpp"

namespace ept {

inline constexpr int kCheckpointFormatVersion = 1;

/// A checkpoint directory: manifest.json (metadata plus a tensor directory)
/// and tensors.bin (little-endian float64, row-major, back to back).
struct CheckpointData {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Matrix> tensors;
};

namespace detail {

inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return out;
}

inline std::string encode_tensor(const Matrix& m) {
  std::string bytes(m.size() * 8, '\0');
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(m.data()[i]));
    std::memcpy(bytes.data() + 8 * i, &bits, 8);
  }
  return bytes;
}

inline Matrix decode_tensor(const char* p, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, p + 8 * i, 8);
    m.data()[i] = std::bit_cast<double>(to_le(bits));
  }
  return m;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ManifestError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& dir, const CheckpointData& ck) {
  std::filesystem::create_directories(dir);
  std::string blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, m] : ck.tensors) {
    const std::string bytes = detail::encode_tensor(m);
    entries.push_back({{"name", name},
                       {"shape", {m.rows(), m.cols()}},
                       {"offset", blob.size()},
                       {"bytes", bytes.size()},
                       {"crc32", crc32_of(bytes)}});
    blob += bytes;
  }
  nlohmann::json manifest = ck.meta;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["tensors"] = entries;
  detail::write_file(dir / "tensors.bin", blob);
  detail::write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

/// Accepts a checkpoint directory or a run directory holding checkpoint/.
inline std::filesystem::path resolve_checkpoint_dir(const std::filesystem::path& p) {
  if (std::filesystem::exists(p / "manifest.json")) return p;
  if (std::filesystem::exists(p / "checkpoint" / "manifest.json")) return p / "checkpoint";
  throw ManifestError("no manifest.json under " + p.string());
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
  const auto dir = resolve_checkpoint_dir(path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("unreadable manifest: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("format_version") || !manifest.contains("tensors")) {
    throw ManifestError("manifest lacks format_version or tensors");
  }
  if (manifest.at("format_version") != kCheckpointFormatVersion) {
    throw IntegrityError("unsupported checkpoint format version " + manifest.at("format_version").dump());
  }
  const std::string blob = detail::read_file(dir / "tensors.bin");
  CheckpointData ck;
  std::size_t covered = 0;
  try {
    for (const auto& e : manifest.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto rows = e.at("shape").at(0).get<std::size_t>();
      const auto cols = e.at("shape").at(1).get<std::size_t>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = e.at("bytes").get<std::size_t>();
      if (bytes != rows * cols * 8) throw ManifestError("tensor '" + name + "' size does not match its shape");
      if (offset > blob.size() || bytes > blob.size() - offset) {
        throw IntegrityError("tensor '" + name + "' extends past the end of tensors.bin");
      }
      if (crc32_of(blob.data() + offset, bytes) != e.at("crc32").get<std::uint32_t>()) {
        throw IntegrityError("checksum mismatch in tensor '" + name + "'");
      }
      if (ck.tensors.count(name)) throw ManifestError("tensor '" + name + "' listed twice");
      ck.tensors.emplace(name, detail::decode_tensor(blob.data() + offset, rows, cols));
      covered += bytes;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("malformed tensor directory: ") + e.what());
  }
  if (covered != blob.size()) throw IntegrityError("tensors.bin holds bytes not described by the manifest");
  manifest.erase("tensors");
  manifest.erase("format_version");
  ck.meta = std::move(manifest);
  return ck;
}

/// CRC32 over every frozen tensor in name order; detects a backbone rebuilt
/// from a different seed or code version.
inline std::uint32_t frozen_fingerprint(const ToyBackbone& model) {
  std::string bytes;
  for (const auto& [name, m] : model.frozen_weights()) bytes += name + detail::encode_tensor(m);
  return crc32_of(bytes);
}

inline nlohmann::json routing_to_json(const std::map<std::string, RoutingStats>& stats) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, s] : stats) {
    j[name] = {{"tasks", s.tasks()},
               {"experts", s.experts()},
               {"per_token", s.per_token()},
               {"counts", s.raw_counts()},
               {"mass", s.raw_mass()},
               {"tokens", s.raw_tokens()},
               {"zero_selected", s.zero_selected_gates()}};
  }
  return j;
}

inline std::map<std::string, RoutingStats> routing_from_json(const nlohmann::json& j) {
  std::map<std::string, RoutingStats> out;
  for (const auto& [name, s] : j.items()) {
    out.emplace(name, RoutingStats::from_raw(s.at("tasks"), s.at("experts"), s.at("per_token"),
                                             s.at("counts").get<std::vector<std::uint64_t>>(),
                                             s.at("mass").get<std::vector<double>>(),
                                             s.at("tokens").get<std::vector<std::uint64_t>>(),
                                             s.at("zero_selected").get<std::uint64_t>()));
  }
  return out;
}

/// Everything needed to resume: trainable tensors, AdamW moments
/// ("adam.m.<name>", "adam.v.<name>"), step, sampler stream, metrics log,
/// and optionally routing statistics for the analysis tools.
inline void save_state(const TrainerState& st, const std::filesystem::path& dir,
                       const std::map<std::string, RoutingStats>* routing = nullptr) {
  CheckpointData ck;
  ck.meta = {{"kind", "training"},
             {"config", to_json(st.config)},
             {"step", st.step},
             {"optimizer_step", st.optimizer.step},
             {"sampler", st.sampler.state()},
             {"frozen_crc32", frozen_fingerprint(st.model)},
             {"log", st.log}};
  if (routing) ck.meta["routing"] = routing_to_json(*routing);
  for (const Parameter* p : st.trainable_parameters()) ck.tensors.emplace(p->name, p->value);
  for (const auto& [name, mo] : st.optimizer.moments) {
    ck.tensors.emplace("adam.m." + name, mo.m);
    ck.tensors.emplace("adam.v." + name, mo.v);
  }
  write_checkpoint(dir, ck);
}

struct LoadedState {
  std::unique_ptr<TrainerState> state;
  std::map<std::string, RoutingStats> routing;  ///< empty when none was saved
};

inline LoadedState load_state(const std::filesystem::path& dir) {
  CheckpointData ck = read_checkpoint(dir);
  if (ck.meta.value("kind", "") != "training") throw ManifestError("not a training checkpoint");
  LoadedState out;
  try {
    out.state = std::make_unique<TrainerState>(config_from_json(ck.meta.at("config")));
    TrainerState& st = *out.state;
    if (ck.meta.at("frozen_crc32").get<std::uint32_t>() != frozen_fingerprint(st.model)) {
      throw IntegrityError("frozen backbone rebuilt from the config does not match the checkpoint");
    }
    st.step = ck.meta.at("step").get<std::size_t>();
    st.optimizer.step = ck.meta.at("optimizer_step").get<std::uint64_t>();
    st.sampler.restore(ck.meta.at("sampler").get<std::string>());
    st.log = ck.meta.at("log").get<std::vector<std::string>>();
    if (ck.meta.contains("routing")) out.routing = routing_from_json(ck.meta.at("routing"));

    std::set<std::string> expected;
    for (Parameter* p : st.trainable_parameters()) {
      expected.insert(p->name);
      auto it = ck.tensors.find(p->name);
      if (it == ck.tensors.end()) throw ManifestError("checkpoint is missing tensor '" + p->name + "'");
      if (!it->second.same_shape(p->value)) {
        throw ManifestError("tensor '" + p->name + "' is " + it->second.shape() + ", model expects " + p->value.shape());
      }
      p->value = it->second;
      if (st.optimizer.step > 0) {
        auto m = ck.tensors.find("adam.m." + p->name);
        auto v = ck.tensors.find("adam.v." + p->name);
        if (m == ck.tensors.end() || v == ck.tensors.end()) {
          throw ManifestError("checkpoint is missing optimizer moments for '" + p->name + "'");
        }
        if (!m->second.same_shape(p->value) || !v->second.same_shape(p->value)) {
          throw ManifestError("optimizer moments for '" + p->name + "' have the wrong shape");
        }
        st.optimizer.moments[p->name] = {m->second, v->second};
        expected.insert(m->first);
        expected.insert(v->first);
      }
    }
    for (const auto& [name, _] : ck.tensors)
      if (!expected.count(name)) throw ManifestError("unknown tensor '" + name + "' in checkpoint");
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  return out;
}

}  // namespace ept
