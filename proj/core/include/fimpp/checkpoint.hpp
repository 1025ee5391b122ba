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

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>

#include "fimpp/model.hpp"
#include "fimpp/tensor.hpp"

namespace fimpp {

inline constexpr const char* kCheckpointFormat = "fimpp-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// A manifest JSON (metadata plus tensor index) next to a flat little-endian
/// binary of 64-bit reals. `path` names the manifest; the binary shares its
/// stem with a ".bin" extension. Both files are written via temp + rename.
struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

std::filesystem::path binary_path_for(const std::filesystem::path& manifest);

void save_model(const std::filesystem::path& path, const ModelWeights& weights);
/// Loads the model part of any checkpoint (optimizer tensors are ignored).
ModelWeights load_model(const std::filesystem::path& path);

/// Builds model weights from an archive, checking names and shapes against a
/// freshly initialized model of the stored config.
ModelWeights model_from_archive(const TensorArchive& archive);
void add_model_to_archive(TensorArchive& archive, const ModelWeights& weights);

}  // namespace fimpp
