#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace condseq {

/// Label string <-> dense integer id for one annotation type.
class LabelRegistry {
 public:
  LabelRegistry() = default;
  explicit LabelRegistry(std::vector<std::string> labels);

  /// Returns the id of `label`, adding it when new.
  int add(const std::string& label);
  /// Throws UnknownLabel.
  int id(const std::string& label) const;
  bool contains(const std::string& label) const { return index_.count(label) != 0; }
  const std::string& label(int id) const;
  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  friend bool operator==(const LabelRegistry& a, const LabelRegistry& b) { return a.labels_ == b.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

/// GO, IPR and EC registries of one dataset. Stored with datasets and
/// checkpoints so ids stay stable between curation, training and sampling.
struct Registries {
  LabelRegistry go;
  LabelRegistry ipr;
  LabelRegistry ec;

  /// FNV-1a 64 over the ordered label lists, as 16 hex digits.
  std::string content_hash() const;

  nlohmann::json to_json() const;
  static Registries from_json(const nlohmann::json& j);

  friend bool operator==(const Registries&, const Registries&) = default;
};

}  // namespace condseq
