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

#include "fimpp/sequence_store.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_map>

#include "fimpp/errors.hpp"

namespace fimpp {
namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest, &len);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out.push_back(digits[digest[i] >> 4]);
      out.push_back(digits[digest[i] & 0xf]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
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

std::string stem_of(const std::filesystem::path& data_path) {
  auto name = data_path.filename().string();
  const std::string ext = ".jsonl";
  if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0) {
    name.resize(name.size() - ext.size());
  }
  return name;
}

std::string line_context(std::size_t line) { return "line " + std::to_string(line) + ": "; }

}  // namespace

std::filesystem::path manifest_path_for(const std::filesystem::path& data_path) {
  return data_path.parent_path() / (stem_of(data_path) + ".manifest.json");
}

std::filesystem::path sidecar_path_for(const std::filesystem::path& data_path) {
  return data_path.parent_path() / (stem_of(data_path) + ".instances.json");
}

nlohmann::json sequence_to_json(const EventSequence& s) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : s.events) events.push_back({{"t", e.time}, {"k", e.mark}});
  nlohmann::json j = {{"events", std::move(events)}, {"T", s.window_end}, {"K", s.num_marks}};
  j["instance_id"] = s.instance_id >= 0 ? nlohmann::json(s.instance_id) : nlohmann::json(nullptr);
  return j;
}

EventSequence sequence_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("sequence record must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "events" && key != "T" && key != "K" && key != "instance_id") {
      throw ParseError("unknown sequence field '" + key + "'");
    }
  }
  EventSequence s;
  try {
    s.window_end = j.at("T").get<double>();
    s.num_marks = j.at("K").get<std::size_t>();
    if (j.contains("instance_id") && !j.at("instance_id").is_null()) s.instance_id = j.at("instance_id").get<std::int64_t>();
    for (const auto& e : j.at("events")) s.events.push_back({e.at("t").get<double>(), e.at("k").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed sequence record: ") + e.what());
  }
  return s;
}

DatasetManifest write_dataset(const std::filesystem::path& data_path, const std::vector<EventSequence>& sequences,
                              const std::vector<HawkesInstance>* instances, const std::string& time_unit) {
  std::string bytes;
  DatasetManifest m;
  m.data_path = data_path;
  m.num_sequences = sequences.size();
  m.time_unit = time_unit;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    try {
      s.validate();
    } catch (const ValidationError& e) {
      throw ValidationError(line_context(i + 1) + e.what());
    }
    if (i == 0) m.num_marks = s.num_marks;
    if (s.num_marks != m.num_marks) {
      throw ValidationError(line_context(i + 1) + "K=" + std::to_string(s.num_marks) + " differs from K=" +
                            std::to_string(m.num_marks) + " of line 1");
    }
    if (instances && s.instance_id >= static_cast<std::int64_t>(instances->size())) {
      throw ValidationError(line_context(i + 1) + "instance_id out of range of the sidecar");
    }
    bytes += sequence_to_json(s).dump();
    bytes += '\n';
  }
  m.sha256 = sha256_hex(bytes);

  if (data_path.has_parent_path()) std::filesystem::create_directories(data_path.parent_path());
  write_atomic(data_path, bytes);
  nlohmann::json manifest = {{"version", m.version},
                             {"data", data_path.filename().string()},
                             {"count", m.num_sequences},
                             {"K", m.num_marks},
                             {"sha256", m.sha256}};
  if (!time_unit.empty()) manifest["time_unit"] = time_unit;
  if (instances) {
    const auto sidecar = sidecar_path_for(data_path);
    nlohmann::json doc = {{"version", kDatasetVersion}, {"instances", *instances}};
    write_atomic(sidecar, doc.dump(2) + "\n");
    manifest["sidecar"] = sidecar.filename().string();
    m.sidecar_path = sidecar;
  }
  write_atomic(manifest_path_for(data_path), manifest.dump(2) + "\n");
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& data_path) {
  const auto path = manifest_path_for(data_path);
  std::ifstream in(path);
  if (!in) throw IoError("dataset manifest " + path.string() + " not found");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.num_sequences = j.at("count").get<std::size_t>();
    m.num_marks = j.at("K").get<std::size_t>();
    m.sha256 = j.at("sha256").get<std::string>();
    m.time_unit = j.value("time_unit", "");
    if (j.contains("sidecar")) m.sidecar_path = data_path.parent_path() / j.at("sidecar").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (m.version != kDatasetVersion) throw ParseError(path.string() + ": unsupported dataset version");
  m.data_path = data_path;
  return m;
}

void for_each_sequence(const std::filesystem::path& data_path,
                       const std::function<void(std::size_t, EventSequence&&)>& visit) {
  const auto manifest = read_manifest(data_path);
  std::ifstream in(data_path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + data_path.string());
  Sha256 hash;
  std::string line;
  std::size_t number = 0;
  std::size_t k = 0;
  while (std::getline(in, line)) {
    ++number;
    hash.update(line);
    if (!in.eof()) hash.update("\n", 1);
    if (line.empty()) throw ParseError(data_path.string() + ": " + line_context(number) + "empty line");
    EventSequence s;
    try {
      s = sequence_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(data_path.string() + ": " + line_context(number) + e.what());
    } catch (const ParseError& e) {
      throw ParseError(data_path.string() + ": " + line_context(number) + e.what());
    }
    try {
      s.validate();
    } catch (const ValidationError& e) {
      throw ValidationError(data_path.string() + ": " + line_context(number) + e.what());
    }
    if (number == 1) k = s.num_marks;
    if (s.num_marks != k) {
      throw ValidationError(data_path.string() + ": " + line_context(number) + "K=" + std::to_string(s.num_marks) +
                            " differs from K=" + std::to_string(k) + " of line 1");
    }
    visit(number, std::move(s));
  }
  if (hash.hex() != manifest.sha256) {
    throw IntegrityError(data_path.string() + ": content hash does not match the manifest");
  }
  if (number != manifest.num_sequences) {
    throw IntegrityError(data_path.string() + ": manifest lists " + std::to_string(manifest.num_sequences) +
                         " sequences, file holds " + std::to_string(number));
  }
  if (number > 0 && k != manifest.num_marks) throw IntegrityError(data_path.string() + ": K disagrees with manifest");
}

Dataset read_dataset(const std::filesystem::path& data_path) {
  Dataset d;
  d.manifest = read_manifest(data_path);
  d.sequences.reserve(d.manifest.num_sequences);
  for_each_sequence(data_path, [&](std::size_t, EventSequence&& s) { d.sequences.push_back(std::move(s)); });
  if (d.manifest.sidecar_path) {
    std::ifstream in(*d.manifest.sidecar_path);
    if (!in) throw IoError("sidecar " + d.manifest.sidecar_path->string() + " not found");
    try {
      nlohmann::json doc;
      in >> doc;
      d.instances = doc.at("instances").get<std::vector<HawkesInstance>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(d.manifest.sidecar_path->string() + ": " + e.what());
    }
    for (std::size_t i = 0; i < d.sequences.size(); ++i) {
      const auto id = d.sequences[i].instance_id;
      if (id >= static_cast<std::int64_t>(d.instances->size())) {
        throw IntegrityError(data_path.string() + ": " + line_context(i + 1) + "instance_id beyond sidecar");
      }
      if (id >= 0 && (*d.instances)[static_cast<std::size_t>(id)].num_marks != d.sequences[i].num_marks) {
        throw IntegrityError(data_path.string() + ": " + line_context(i + 1) + "K disagrees with its instance");
      }
    }
  }
  return d;
}

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) h.update(buf, static_cast<std::size_t>(in.gcount()));
  return h.hex();
}

// ---------------------------------------------------------------------------
// CSV import
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line, char delimiter) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delimiter) {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back().push_back(c);
    }
  }
  return fields;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& text) {
  if (text.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (errno != 0 || end != text.c_str() + text.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

struct Row {
  double time;
  std::size_t mark;
  std::size_t arrival;
};

}  // namespace

CsvImportResult import_csv(const std::filesystem::path& path, const CsvImportOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty CSV (no header)");
  const auto header = split_csv(line, options.delimiter);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    throw ConfigError(path.string() + ": missing column '" + name + "'");
  };
  const std::size_t seq_col = column(options.sequence_column);
  const std::size_t time_col = column(options.time_column);
  const std::size_t mark_col = column(options.mark_column);

  CsvImportResult result;
  std::unordered_map<std::string, std::size_t> mark_index, seq_index;
  if (options.vocabulary) {
    result.vocabulary = *options.vocabulary;
    for (std::size_t i = 0; i < result.vocabulary.size(); ++i) mark_index[result.vocabulary[i]] = i;
  }
  std::vector<std::vector<Row>> groups;
  std::vector<std::string> row_errors;
  std::size_t row_number = 1, arrival = 0;
  while (std::getline(in, line)) {
    ++row_number;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line, options.delimiter);
    const auto need = std::max({seq_col, time_col, mark_col});
    if (fields.size() <= need) {
      row_errors.push_back("row " + std::to_string(row_number) + ": expected at least " + std::to_string(need + 1) +
                           " fields");
      continue;
    }
    const auto time = parse_number(trim(fields[time_col]));
    if (!time) {
      row_errors.push_back("row " + std::to_string(row_number) + ": unparseable timestamp '" + fields[time_col] + "'");
      continue;
    }
    const auto mark_name = trim(fields[mark_col]);
    auto it = mark_index.find(mark_name);
    if (it == mark_index.end()) {
      if (options.vocabulary) {
        row_errors.push_back("row " + std::to_string(row_number) + ": mark '" + mark_name + "' not in vocabulary");
        continue;
      }
      it = mark_index.emplace(mark_name, result.vocabulary.size()).first;
      result.vocabulary.push_back(mark_name);
    }
    const auto id = trim(fields[seq_col]);
    auto sit = seq_index.find(id);
    if (sit == seq_index.end()) {
      sit = seq_index.emplace(id, groups.size()).first;
      groups.emplace_back();
      result.sequence_ids.push_back(id);
    }
    groups[sit->second].push_back({*time, it->second, arrival++});
  }
  if (!row_errors.empty()) {
    std::ostringstream msg;
    msg << path.string() << ": " << row_errors.size() << " bad row(s)";
    for (std::size_t i = 0; i < row_errors.size() && i < 20; ++i) msg << "\n  " << row_errors[i];
    if (row_errors.size() > 20) msg << "\n  ...";
    throw ParseError(msg.str());
  }
  if (result.vocabulary.size() > options.max_marks) {
    throw ValidationError(path.string() + ": " + std::to_string(result.vocabulary.size()) +
                          " distinct marks exceed the model capacity K_max=" + std::to_string(options.max_marks));
  }
  const std::size_t K = std::max<std::size_t>(result.vocabulary.size(), 1);

  for (auto& rows : groups) {
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
    const double origin = rows.front().time;
    const double span = rows.back().time - origin;
    const double time_scale = span > 0.0 ? span / static_cast<double>(rows.size()) : 1.0;
    const double step = 1e-9 * time_scale;

    EventSequence s;
    s.num_marks = K;
    double run_value = 0.0;
    std::size_t run_index = 1;  // the window start counts as the first member of the run at 0
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double t = rows[i].time - origin;
      if (i == 0 || t != run_value) {
        run_value = t;
        run_index = t == 0.0 ? 1 : 0;
      }
      double jittered = t + static_cast<double>(run_index) * step;
      if (!s.events.empty() && !(jittered > s.events.back().time)) jittered = s.events.back().time + step;
      if (jittered != t) ++result.jittered_events;
      s.events.push_back({jittered, rows[i].mark});
      ++run_index;
    }
    s.window_end = s.events.back().time;
    if (options.window_end) {
      if (*options.window_end < s.window_end) {
        throw ValidationError(path.string() + ": window_end override " + std::to_string(*options.window_end) +
                              " precedes the last event of sequence '" +
                              result.sequence_ids[result.sequences.size()] + "'");
      }
      s.window_end = *options.window_end;
    }
    s.validate();
    result.sequences.push_back(std::move(s));
  }
  return result;
}

}  // namespace fimpp
