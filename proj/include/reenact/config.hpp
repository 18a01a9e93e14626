#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>

#include <json.hpp>

#include "reenact/error.hpp"

namespace reenact {

/// Flat `key = value` documents. Keys are dotted paths into a nested JSON
/// object ("ulc.lr = 3e-4" sets {"ulc": {"lr": 3e-4}}). Values that parse as
/// JSON (numbers, booleans, arrays, quoted strings) keep their type; anything
/// else is taken as a bare string. Blank lines and '#' comments are ignored.
nlohmann::json parse_flat_config(std::string_view text, const std::string& origin = "<config>");
nlohmann::json read_flat_config(const std::filesystem::path& path);

/// Applies one "key=value" override in place.
void apply_override(nlohmann::json& config, std::string_view assignment);

/// Flattens back to sorted `key = value` lines.
std::string format_flat_config(const nlohmann::json& config);

/// Config error naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                const std::string& context);

/// Sub-object `key` of `j`, or an empty object.
nlohmann::json section_of(const nlohmann::json& j, const std::string& key);

/// Typed read with a default; type mismatches become config errors naming the key.
template <class T>
T get_or(const nlohmann::json& j, const std::string& key, const T& fallback,
         const std::string& context) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (it->is_number_float()) {
        const double v = it->template get<double>();
        if (v != static_cast<double>(static_cast<T>(v))) {
          fail(ErrorKind::config, context + "." + key + " must be an integer");
        }
        return static_cast<T>(v);
      }
    }
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::config, context + "." + key + " has the wrong type (" + it->dump() + ")");
  }
}

}  // namespace reenact
