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

#include "fimpp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fimpp/errors.hpp"

namespace fimpp {
namespace {

constexpr const char* kModelPrefix = "model/";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffU) << (8 * (7 - i));
    return out;
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::filesystem::path binary_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bin_path = binary_path_for(path);
  if (bin_path == path) throw ContractError("checkpoint manifest must not use the .bin extension");

  std::string bytes;
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, tensor] : archive.tensors) {
    index.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}, {"count", tensor.size()}});
    for (double v : tensor.values()) {
      const auto word = to_little_endian(std::bit_cast<std::uint64_t>(v));
      char raw[8];
      std::memcpy(raw, &word, 8);
      bytes.append(raw, 8);
    }
    offset += tensor.size();
  }
  nlohmann::json manifest = archive.meta;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["binary"] = bin_path.filename().string();
  manifest["tensors"] = index;

  write_file_atomic(bin_path, bytes);
  write_file_atomic(path, manifest.dump(2) + "\n");
}

TensorArchive read_archive(const std::filesystem::path& path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint manifest " + path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat) {
    throw ParseError("checkpoint " + path.string() + " has no '" + kCheckpointFormat + "' format tag");
  }
  if (manifest.value("version", 0) != kCheckpointVersion) {
    throw ParseError("checkpoint " + path.string() + " has unsupported version");
  }
  const auto bin_path = path.parent_path() / manifest.at("binary").get<std::string>();
  const std::string bytes = read_file(bin_path);

  TensorArchive archive;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if ((offset + count) * 8 > bytes.size() || shape_size(shape) != count) {
      throw IntegrityError("checkpoint tensor '" + name + "' does not fit the binary payload");
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t word;
      std::memcpy(&word, bytes.data() + (offset + i) * 8, 8);
      values[i] = std::bit_cast<double>(to_little_endian(word));
    }
    archive.tensors.emplace(name, Tensor(shape, std::move(values)));
  }
  manifest.erase("tensors");
  manifest.erase("binary");
  archive.meta = std::move(manifest);
  return archive;
}

void add_model_to_archive(TensorArchive& archive, const ModelWeights& weights) {
  archive.meta["model_config"] = weights.config;
  for (const auto& [name, t] : weights.tensors) archive.tensors[kModelPrefix + name] = t.detach();
}

ModelWeights model_from_archive(const TensorArchive& archive) {
  if (!archive.meta.contains("model_config")) throw ParseError("checkpoint has no model_config");
  ModelConfig config;
  try {
    config = archive.meta.at("model_config").get<ModelConfig>();
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint model_config: ") + e.what());
  }
  ModelWeights weights = init_weights(config, 0);
  for (auto& [name, t] : weights.tensors) {
    const auto it = archive.tensors.find(kModelPrefix + name);
    if (it == archive.tensors.end()) throw IntegrityError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw IntegrityError("checkpoint tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                           ", expected " + shape_string(t.shape()));
    }
    t = it->second;
  }
  return weights;
}

void save_model(const std::filesystem::path& path, const ModelWeights& weights) {
  TensorArchive archive;
  add_model_to_archive(archive, weights);
  write_archive(path, archive);
}

ModelWeights load_model(const std::filesystem::path& path) { return model_from_archive(read_archive(path)); }

}  // namespace fimpp
