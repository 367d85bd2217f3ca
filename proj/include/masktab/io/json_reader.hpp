#pragma once

#include <json.hpp>
#include <set>
#include <string>

#include "masktab/errors.hpp"

namespace masktab::io {

/// Reads an object while recording which keys were consumed, so that
/// finish() can reject anything unknown.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& obj, std::string context) : obj_(obj), context_(std::move(context)) {
    if (!obj_.is_object()) throw ProtocolError(context_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(context_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!obj_.contains(key)) throw ProtocolError(context_ + ": missing required key '" + key + "'");
    get(key, out);
  }

  ObjectReader child(const std::string& key) {
    seen_.insert(key);
    return ObjectReader(obj_.at(key), context_ + "." + key);
  }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : obj_.items()) {
      if (!seen_.count(key)) throw ProtocolError(context_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace masktab::io
