#pragma once

// Layered run configuration: built-in defaults, then a JSON file, then
// command-line overrides. The resolved document and its hash are written
// into every output.

#include <cstdint>
#include <cstdio>
#include <string>

#include <json.hpp>

#include "s3f/csv.hpp"
#include "s3f/errors.hpp"

namespace s3f {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

/// 16 hex digits of the FNV-1a hash of the compact JSON dump.
inline std::string config_hash(const nlohmann::json& resolved) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(resolved.dump())));
  return buf;
}

/// Recursively overlays `patch` onto `base`; only keys already in `base` are
/// accepted so that typos fail loudly.
inline void overlay(nlohmann::json& base, const nlohmann::json& patch, const std::string& where = "") {
  if (!patch.is_object()) throw ConfigError("config" + where + ": expected an object");
  for (const auto& [k, v] : patch.items()) {
    const auto path = where + "." + k;
    if (!base.contains(k)) throw ConfigError("config: unknown key '" + path.substr(1) + "'");
    if (base[k].is_object() && v.is_object())
      overlay(base[k], v, path);
    else
      base[k] = v;
  }
}

inline nlohmann::json load_config_file(const std::string& path) {
  const auto text = read_file(path);
  try {
    return nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Converts a resolved section to T, reporting type errors as ConfigError.
template <typename T>
T config_section(const nlohmann::json& resolved, const std::string& key) {
  try {
    return resolved.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config section '" + key + "': " + e.what());
  }
}

}  // namespace s3f
