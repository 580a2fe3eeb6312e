#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "condseq/errors.hpp"

namespace condseq::detail {

/// Reads known keys out of a JSON object and rejects anything left over.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j.is_object()) throw InvalidConfig(what_ + " must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename V>
  void read(const std::string& key, V& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfig("bad value for " + what_ + " key '" + key + "': " + e.what());
    }
  }

  template <typename V, typename Parse>
  void read_with(const std::string& key, V& out, Parse parse) {
    if (!j_.contains(key)) return;
    std::string s;
    read(key, s);
    out = parse(s);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw InvalidConfig("unknown " + what_ + " key '" + key + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

}  // namespace condseq::detail
