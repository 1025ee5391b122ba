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

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "fimpp/events.hpp"
#include "fimpp/hawkes.hpp"

namespace fimpp {

inline constexpr int kDatasetVersion = 1;

/// A dataset is `<name>.jsonl` (one sequence per line) described by
/// `<name>.manifest.json`, optionally with `<name>.instances.json` holding the
/// generating instances that `instance_id` indexes into.
struct DatasetManifest {
  int version = kDatasetVersion;
  std::filesystem::path data_path;
  std::size_t num_sequences = 0;
  std::size_t num_marks = 0;
  std::string time_unit;
  std::optional<std::filesystem::path> sidecar_path;
  std::string sha256;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<EventSequence> sequences;
  std::optional<std::vector<HawkesInstance>> instances;
};

std::filesystem::path manifest_path_for(const std::filesystem::path& data_path);
std::filesystem::path sidecar_path_for(const std::filesystem::path& data_path);

/// Writes data, optional sidecar, then manifest; each through a temp file and
/// rename. Throws ValidationError for invalid or K-inconsistent sequences.
DatasetManifest write_dataset(const std::filesystem::path& data_path, const std::vector<EventSequence>& sequences,
                              const std::vector<HawkesInstance>* instances = nullptr,
                              const std::string& time_unit = "");

DatasetManifest read_manifest(const std::filesystem::path& data_path);

/// Streams sequences one line at a time, validating each before the next is
/// read. The content hash is checked after the last line (IntegrityError).
/// The callback receives the 1-based line number.
void for_each_sequence(const std::filesystem::path& data_path,
                       const std::function<void(std::size_t line, EventSequence&& sequence)>& visit);

Dataset read_dataset(const std::filesystem::path& data_path);

nlohmann::json sequence_to_json(const EventSequence& sequence);
EventSequence sequence_from_json(const nlohmann::json& j);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

struct CsvImportOptions {
  std::string sequence_column = "sequence_id";
  std::string time_column = "time";
  std::string mark_column = "mark";
  char delimiter = ',';
  /// Mark names in index order; marks outside it are an error. Without it,
  /// marks are numbered in order of first appearance.
  std::optional<std::vector<std::string>> vocabulary;
  /// Overrides every sequence's window end (must cover its last event).
  std::optional<double> window_end;
  std::size_t max_marks = 8;
};

struct CsvImportResult {
  std::vector<EventSequence> sequences;
  std::vector<std::string> sequence_ids;
  std::vector<std::string> vocabulary;
  /// Events moved by the tie-breaking jitter.
  std::size_t jittered_events = 0;
};

/// Rows are grouped by sequence id (in order of first appearance), sorted by
/// time within a sequence, and shifted so the earliest event sits at 0. Equal
/// times are separated by i * 1e-9 * time_scale in arrival order, where
/// time_scale is the sequence's mean gap; an event landing on 0 counts as tied
/// with the window start.
CsvImportResult import_csv(const std::filesystem::path& path, const CsvImportOptions& options);

}  // namespace fimpp
