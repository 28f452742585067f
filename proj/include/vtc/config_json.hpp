#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "vtc/error.hpp"

namespace vtc {

/// Reads fields out of a JSON object and, on finish(), rejects any key that
/// was never asked for. Typos in ablation configs surface as errors instead
/// of silently falling back to defaults.
class StrictReader {
 public:
  StrictReader(const nlohmann::json& obj, std::string context) : obj_(obj), context_(std::move(context)) {
    if (!obj_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      const auto& v = obj_.at(key);
      // Programmatic json holds non-negative ints as signed; parsed text holds them as unsigned.
      const bool negative = v.is_number_integer() && !v.is_number_unsigned() && v.template get<std::int64_t>() < 0;
      if (!v.is_number_integer() || (std::is_unsigned_v<T> && negative)) {
        throw ConfigError(context_ + ": key \"" + key + "\" must be a" +
                          (std::is_unsigned_v<T> ? " non-negative" : "n") + " integer");
      }
    }
    try {
      out = obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(context_ + ": key \"" + key + "\" has the wrong type");
    }
  }

  template <class T>
  void read(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return;
    T v{};
    read(key, v);
    out = v;
  }

  bool has(const char* key) const { return obj_.contains(key); }

  void finish() const {
    for (const auto& [k, v] : obj_.items()) {
      if (!seen_.count(k)) throw ConfigError(context_ + ": unknown key \"" + k + "\"");
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string context_;
  std::set<std::string> seen_;
};

inline nlohmann::json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(what + ": " + e.what());
  }
}

}  // namespace vtc
