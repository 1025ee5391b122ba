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

#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "fimpp/errors.hpp"
#include "fimpp/sequence_store.hpp"
#include "fimpp/simulator.hpp"
#include "oracles.hpp"

namespace fimpp {
namespace {

using testing::TempDir;

std::vector<EventSequence> random_dataset(std::uint64_t seed, std::vector<HawkesInstance>* instances = nullptr) {
  PriorConfig prior;
  prior.seed = seed;
  Rng rng(seed);
  const auto inst = sample_instance(prior, 0);
  auto data = simulate_dataset(inst, static_cast<std::size_t>(rng.uniform_int(0, 6)),
                               SimulationConfig{rng.uniform(1.0, 30.0), 100000, seed});
  for (auto& s : data) s.instance_id = instances ? 0 : -1;
  if (instances) instances->push_back(inst);
  return data;
}

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

TEST(Dataset, RoundTripIsIdentity) {
  TempDir dir("store_rt");
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::vector<HawkesInstance> instances;
    const bool sidecar = seed % 2 == 0;
    const auto data = random_dataset(seed, sidecar ? &instances : nullptr);
    const auto path = dir / ("d" + std::to_string(seed) + ".jsonl");
    const auto m = write_dataset(path, data, sidecar ? &instances : nullptr);
    EXPECT_EQ(m.num_sequences, data.size());
    const auto back = read_dataset(path);
    EXPECT_EQ(back.sequences, data);
    EXPECT_EQ(back.instances.has_value(), sidecar);
    if (sidecar) EXPECT_EQ(nlohmann::json(*back.instances).dump(), nlohmann::json(instances).dump());
  }
}

TEST(Dataset, EmptyDatasetHasValidManifest) {
  TempDir dir("store_empty");
  const auto m = write_dataset(dir / "e.jsonl", {});
  EXPECT_EQ(m.num_sequences, 0u);
  const auto back = read_dataset(dir / "e.jsonl");
  EXPECT_TRUE(back.sequences.empty());
  EXPECT_FALSE(back.instances.has_value());
  const auto manifest = nlohmann::json::parse(testing::read_text(dir / "e.manifest.json"));
  EXPECT_EQ(manifest.at("count"), 0);
  EXPECT_EQ(manifest.at("sha256"), sha256_hex(""));
}

TEST(Dataset, MixedKNamesOffendingLine) {
  TempDir dir("store_mixed");
  EventSequence a, b;
  a.window_end = b.window_end = 1.0;
  a.num_marks = 1;
  b.num_marks = 2;
  try {
    write_dataset(dir / "m.jsonl", {a, a, b});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Dataset, TamperedFileIsIntegrityError) {
  TempDir dir("store_tamper");
  EventSequence s;
  s.window_end = 5.0;
  s.events = {{1.25, 0}, {2.5, 0}};
  write_dataset(dir / "t.jsonl", {s, s});
  auto text = testing::read_text(dir / "t.jsonl");
  text.replace(text.find("2.5"), 3, "2.7");
  write_text(dir / "t.jsonl", text);
  EXPECT_THROW(read_dataset(dir / "t.jsonl"), IntegrityError);
}

TEST(Dataset, MalformedLineReportsLineNumber) {
  TempDir dir("store_bad");
  EventSequence s;
  s.window_end = 5.0;
  write_dataset(dir / "b.jsonl", {s, s, s});
  write_text(dir / "b.jsonl", "{\"events\":[],\"T\":5,\"K\":1}\n{\"events\":[],\"T\":5,\"K\":1}\n{not json\n");
  try {
    read_dataset(dir / "b.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Dataset, NonMonotoneTimesAreValidationError) {
  TempDir dir("store_order");
  EventSequence s;
  s.window_end = 5.0;
  write_dataset(dir / "o.jsonl", {s});
  const std::string bad = "{\"events\":[{\"t\":2.0,\"k\":0},{\"t\":1.0,\"k\":0}],\"T\":5,\"K\":1,\"instance_id\":null}\n";
  write_text(dir / "o.jsonl", bad);
  EXPECT_THROW(read_dataset(dir / "o.jsonl"), ValidationError);
}

TEST(Dataset, MissingManifestIsIoError) {
  TempDir dir("store_missing");
  write_text(dir / "x.jsonl", "");
  EXPECT_THROW(read_dataset(dir / "x.jsonl"), IoError);
}

TEST(Dataset, StreamingValidatesBeforeReadingAhead) {
  TempDir dir("store_stream");
  std::vector<EventSequence> data(10000);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].window_end = 3.0;
    data[i].events = {{1.0 + 1e-3 * static_cast<double>(i % 100), 0}};
  }
  write_dataset(dir / "big.jsonl", data);
  // Corrupt the final line: a streaming reader must still deliver every
  // earlier line before it reaches the bad one.
  auto text = testing::read_text(dir / "big.jsonl");
  text.resize(text.size() - 5);
  text += "oops\n";
  write_text(dir / "big.jsonl", text);
  std::size_t seen = 0;
  EXPECT_THROW(for_each_sequence(dir / "big.jsonl", [&](std::size_t line, EventSequence&&) {
                 EXPECT_EQ(line, seen + 1);
                 ++seen;
               }),
               ParseError);
  EXPECT_EQ(seen, 9999u);
}

TEST(CsvImport, TwoRowsOneSequence) {
  TempDir dir("csv_two");
  write_text(dir / "a.csv", "sequence_id,time,mark\ns1,10.5,login\ns1,12.0,logout\n");
  const auto r = import_csv(dir / "a.csv", {});
  ASSERT_EQ(r.sequences.size(), 1u);
  const auto& s = r.sequences[0];
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.num_marks, 2u);
  EXPECT_EQ(s.events[0].mark, 0u);
  EXPECT_EQ(s.events[1].mark, 1u);
  EXPECT_NEAR(s.events[1].time, 1.5, 1e-12);
  EXPECT_EQ(s.window_end, s.events[1].time);
  EXPECT_EQ(r.vocabulary, (std::vector<std::string>{"login", "logout"}));
}

TEST(CsvImport, OutOfOrderRowsAreSortedAndColumnsMapped) {
  TempDir dir("csv_sort");
  write_text(dir / "b.csv", "ts;who;kind\n5;u;\"b\"\n1;u;a\n3;v;a\n2;u;a\n");
  CsvImportOptions opt;
  opt.sequence_column = "who";
  opt.time_column = "ts";
  opt.mark_column = "kind";
  opt.delimiter = ';';
  opt.vocabulary = std::vector<std::string>{"a", "b"};
  opt.window_end = 10.0;
  const auto r = import_csv(dir / "b.csv", opt);
  ASSERT_EQ(r.sequences.size(), 2u);
  EXPECT_EQ(r.sequence_ids, (std::vector<std::string>{"u", "v"}));
  const auto& u = r.sequences[0];
  ASSERT_EQ(u.size(), 3u);
  EXPECT_NEAR(u.events[1].time, 1.0, 1e-12);
  EXPECT_NEAR(u.events[2].time, 4.0, 1e-12);
  EXPECT_EQ(u.events[2].mark, 1u);
  EXPECT_EQ(u.window_end, 10.0);
}

TEST(CsvImport, TiesGetDeterministicJitter) {
  TempDir dir("csv_ties");
  write_text(dir / "c.csv", "sequence_id,time,mark\ns,0,a\ns,4,a\ns,4,b\ns,4,a\ns,8,b\n");
  const auto r1 = import_csv(dir / "c.csv", {});
  const auto r2 = import_csv(dir / "c.csv", {});
  EXPECT_EQ(r1.sequences, r2.sequences);
  const auto& s = r1.sequences[0];
  s.validate();
  const double step = 1e-9 * 8.0 / 5.0;
  EXPECT_EQ(r1.jittered_events, 3u);
  EXPECT_NEAR(s.events[0].time, step, 1e-18);
  EXPECT_EQ(s.events[1].time, 4.0);
  EXPECT_NEAR(s.events[2].time, 4.0 + step, 1e-15);
  EXPECT_NEAR(s.events[3].time, 4.0 + 2 * step, 1e-15);
  EXPECT_EQ(s.events[2].mark, 1u);  // arrival order kept among ties
}

TEST(CsvImport, BadRowsAndCapacityAreReported) {
  TempDir dir("csv_bad");
  write_text(dir / "d.csv", "sequence_id,time,mark\ns,1,a\ns,yesterday,a\ns,,b\n");
  try {
    import_csv(dir / "d.csv", {});
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos);
    EXPECT_NE(msg.find("row 4"), std::string::npos);
  }
  std::string many = "sequence_id,time,mark\n";
  for (int i = 0; i < 9; ++i) many += "s," + std::to_string(i + 1) + ",m" + std::to_string(i) + "\n";
  write_text(dir / "e.csv", many);
  EXPECT_THROW(import_csv(dir / "e.csv", {}), ValidationError);
  write_text(dir / "f.csv", "id,time,mark\n");
  EXPECT_THROW(import_csv(dir / "f.csv", {}), ConfigError);
}

}  // namespace
}  // namespace fimpp
