#include <bit>
#include <cstring>
#include <fstream>

#include "condseq/denoiser.hpp"
#include "condseq/io.hpp"

namespace condseq {

namespace {

constexpr const char* kFormat = "condseq-checkpoint";
constexpr int kVersion = 1;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

nlohmann::json parse_manifest(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint("manifest.json is not valid JSON: " + std::string(e.what()));
  } catch (const IoError& e) {
    throw CorruptCheckpoint(e.what());
  }
}

}  // namespace

void save_checkpoint(const DenoiserParams<float>& params, const Registries& registries,
                     const std::filesystem::path& dir, const nlohmann::json& metadata) {
  nlohmann::json entries = nlohmann::json::array();
  std::string blob;
  blob.reserve(params.tensors.scalar_count() * 4);
  for (const auto& t : params.tensors) {
    const std::size_t offset = blob.size();
    for (const float v : t.data) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(v));
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      blob.append(bytes, 4);
    }
    entries.push_back(
        {{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"byte_offset", offset}, {"byte_len", blob.size() - offset}});
  }
  const nlohmann::json manifest{{"format", kFormat},
                                {"version", kVersion},
                                {"config", params.config.to_json()},
                                {"registries", registries.to_json()},
                                {"registry_hash", registries.content_hash()},
                                {"metadata", metadata},
                                {"tensors", entries}};

  const auto staging = make_temp_sibling(dir);
  try {
    write_file_atomic(staging / "tensors.bin", blob);
    write_file_atomic(staging / "manifest.json", manifest.dump(2) + "\n");
    commit_directory(staging, dir);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove_all(staging, ec);
    throw;
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw CorruptCheckpoint("checkpoint directory not found: " + dir.string());
  const nlohmann::json m = parse_manifest(dir / "manifest.json");
  std::string blob;
  try {
    blob = read_file(dir / "tensors.bin");
  } catch (const IoError& e) {
    throw CorruptCheckpoint(e.what());
  }

  try {
    if (m.at("format") != kFormat) throw CorruptCheckpoint("unrecognised checkpoint format");
    if (m.at("version").get<int>() != kVersion)
      throw CorruptCheckpoint("unsupported checkpoint version " + m.at("version").dump());

    Registries registries;
    try {
      registries = Registries::from_json(m.at("registries"));
    } catch (const CorruptCheckpoint&) {
      throw;
    } catch (const std::exception& e) {
      throw CorruptCheckpoint(std::string("bad registries: ") + e.what());
    }
    const std::string stored_hash = m.at("registry_hash").get<std::string>();
    if (stored_hash != registries.content_hash())
      throw CorruptCheckpoint("registry hash mismatch: manifest says " + stored_hash + ", registries hash to " +
                              registries.content_hash());

    DenoiserConfig config;
    try {
      config = DenoiserConfig::from_json(m.at("config"));
    } catch (const InvalidConfig& e) {
      throw CorruptCheckpoint(std::string("bad config: ") + e.what());
    }
    if (config.n_go != registries.go.size() || config.n_ipr != registries.ipr.size() ||
        config.n_ec != registries.ec.size())
      throw CorruptCheckpoint("config registry sizes do not match the stored registries");

    auto params = DenoiserParams<float>::zeros(config);
    const auto& entries = m.at("tensors");
    if (entries.size() != params.tensors.size())
      throw CorruptCheckpoint("manifest lists " + std::to_string(entries.size()) + " tensors, config implies " +
                              std::to_string(params.tensors.size()));
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      auto& t = params.tensors[i];
      const auto name = e.at("name").get<std::string>();
      if (name != t.name) throw CorruptCheckpoint("tensor " + std::to_string(i) + " is '" + name + "', expected '" + t.name + "'");
      if (e.at("dtype") != "f32") throw CorruptCheckpoint("tensor '" + name + "' has unsupported dtype");
      if (e.at("shape").get<std::vector<std::size_t>>() != t.shape)
        throw CorruptCheckpoint("tensor '" + name + "' has the wrong shape");
      const auto offset = e.at("byte_offset").get<std::size_t>();
      const auto len = e.at("byte_len").get<std::size_t>();
      if (offset != expected_offset || len != t.data.size() * 4)
        throw CorruptCheckpoint("tensor '" + name + "' has inconsistent byte range");
      if (offset + len > blob.size())
        throw CorruptCheckpoint("tensors.bin is truncated: tensor '" + name + "' needs bytes up to " +
                                std::to_string(offset + len) + ", file has " + std::to_string(blob.size()));
      for (std::size_t k = 0; k < t.data.size(); ++k) {
        std::uint32_t bits;
        std::memcpy(&bits, blob.data() + offset + 4 * k, 4);
        t.data[k] = std::bit_cast<float>(to_le(bits));
      }
      expected_offset = offset + len;
    }
    if (expected_offset != blob.size())
      throw CorruptCheckpoint("tensors.bin has " + std::to_string(blob.size() - expected_offset) + " trailing bytes");
    return Checkpoint{std::move(params), std::move(registries), m.value("metadata", nlohmann::json::object())};
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace condseq
