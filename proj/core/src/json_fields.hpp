/*
 * Copyright 2026 The fimpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

#include "fimpp/errors.hpp"

namespace fimpp::detail {

// Typed field access that reports the full field path on failure, e.g.
// "train.steps: expected number_unsigned, got string".

template <typename T>
T field(const nlohmann::json& j, std::string_view key, std::string_view where) {
  const std::string path = std::string(where) + "." + std::string(key);
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path + ": missing required field");
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path + "." + e.what());
  }
}

template <typename T>
T field_or(const nlohmann::json& j, std::string_view key, const T& fallback, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  if (!j.contains(key)) return fallback;
  return field<T>(j, key, where);
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                           std::string_view where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || item.key() == k;
    if (!ok) throw ConfigError(std::string(where) + "." + item.key() + ": unknown field");
  }
}

}  // namespace fimpp::detail
