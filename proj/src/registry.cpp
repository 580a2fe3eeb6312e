#include "condseq/registry.hpp"

#include <cstdio>

#include "condseq/errors.hpp"

namespace condseq {

LabelRegistry::LabelRegistry(std::vector<std::string> labels) {
  for (auto& label : labels) add(label);
}

int LabelRegistry::add(const std::string& label) {
  auto [it, inserted] = index_.emplace(label, static_cast<int>(labels_.size()));
  if (inserted) labels_.push_back(label);
  return it->second;
}

int LabelRegistry::id(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) throw UnknownLabel("unknown label '" + label + "'");
  return it->second;
}

const std::string& LabelRegistry::label(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= labels_.size())
    throw UnknownLabel("label id " + std::to_string(id) + " is outside the registry");
  return labels_[static_cast<std::size_t>(id)];
}

std::string Registries::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::string_view s) {
    for (const char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  const std::pair<const char*, const LabelRegistry*> parts[] = {{"go", &go}, {"ipr", &ipr}, {"ec", &ec}};
  for (const auto& [name, reg] : parts) {
    feed(name);
    for (const auto& label : reg->labels()) feed(label);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json Registries::to_json() const {
  return nlohmann::json{{"go", go.labels()}, {"ipr", ipr.labels()}, {"ec", ec.labels()}, {"hash", content_hash()}};
}

Registries Registries::from_json(const nlohmann::json& j) {
  Registries r;
  r.go = LabelRegistry(j.at("go").get<std::vector<std::string>>());
  r.ipr = LabelRegistry(j.at("ipr").get<std::vector<std::string>>());
  r.ec = LabelRegistry(j.at("ec").get<std::vector<std::string>>());
  if (j.contains("hash") && j.at("hash").get<std::string>() != r.content_hash())
    throw CorruptCheckpoint("label registry hash mismatch: stored " + j.at("hash").get<std::string>() +
                            ", recomputed " + r.content_hash());
  return r;
}

}  // namespace condseq
