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

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>

#include "fimpp/checkpoint.hpp"
#include "fimpp/errors.hpp"
#include "fimpp/evaluation.hpp"
#include "fimpp/hawkes.hpp"
#include "fimpp/sequence_store.hpp"
#include "fimpp/simulator.hpp"
#include "fimpp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fimpp::cli {
namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  unsigned threads = 1;
  std::string resume;
};

std::uint64_t resolve_seed(const Globals& g, std::optional<std::uint64_t> from_config = std::nullopt) {
  if (g.seed) return *g.seed;
  if (from_config) return *from_config;
  std::random_device rd;
  const std::uint64_t seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cerr << "seed: " << seed << '\n';
  return seed;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  const fs::path path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + out);
  f << text;
}

void require_out(const Globals& g, const char* command) {
  if (g.out.empty()) throw ConfigError(std::string(command) + ": --out is required");
}

// Sections of a run config; any other top-level key is rejected.
struct RunConfig {
  PriorConfig prior;
  ModelConfig model;
  TrainConfig train;
  bool train_seed_given = false;
};

RunConfig load_run_config(const std::string& path, std::initializer_list<const char*> allowed) {
  RunConfig rc;
  if (path.empty()) return rc;
  const json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError(path + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ConfigError(path + ": unknown section '" + key + "'");
    }
  }
  if (j.contains("prior")) rc.prior = j["prior"].get<PriorConfig>();
  if (j.contains("model")) rc.model = j["model"].get<ModelConfig>();
  if (j.contains("train")) {
    rc.train = j["train"].get<TrainConfig>();
    rc.train_seed_given = j["train"].contains("seed");
  }
  return rc;
}

// A directory resumes from its newest step checkpoint.
fs::path resolve_resume(const std::string& spec) {
  const fs::path p(spec);
  if (!fs::is_directory(p)) {
    if (!fs::exists(p)) throw IoError("resume checkpoint not found: " + spec);
    return p;
  }
  const std::regex name(R"(checkpoint_step_(\d+)\.json)");
  std::optional<std::pair<std::size_t, fs::path>> best;
  for (const auto& entry : fs::directory_iterator(p)) {
    std::smatch m;
    const auto file = entry.path().filename().string();
    if (std::regex_match(file, m, name)) {
      const auto step = static_cast<std::size_t>(std::stoull(m[1]));
      if (!best || step > best->first) best = {step, entry.path()};
    }
  }
  if (!best) throw IoError("no checkpoint_step_*.json in " + spec);
  return best->second;
}

std::function<void(const StepReport&)> progress(std::size_t total) {
  const std::size_t every = std::max<std::size_t>(1, total / 100);
  return [=](const StepReport& r) {
    if (r.step % every != 0 && r.step != total) return;
    std::fprintf(stderr, "step %zu/%zu  loss/event %.5f  grad %.4f  lr %.3g  %.1fs\n", r.step, total,
                 r.loss_per_event, r.grad_norm, r.learning_rate, r.wall_time);
  };
}

// Sequences of one instance (or all when none are tagged); K must agree.
std::vector<EventSequence> select_instance(const Dataset& data, std::optional<std::int64_t> instance,
                                           std::int64_t* chosen) {
  if (data.sequences.empty()) throw ConfigError("dataset is empty");
  const std::int64_t id = instance.value_or(data.sequences.front().instance_id);
  std::vector<EventSequence> out;
  for (const auto& s : data.sequences) {
    if (s.instance_id == id) out.push_back(s);
  }
  if (out.empty()) throw ConfigError("no sequences with instance_id " + std::to_string(id));
  *chosen = id;
  return out;
}

const HawkesInstance* truth_for(const Dataset& data, std::int64_t id) {
  if (!data.instances || id < 0 || static_cast<std::size_t>(id) >= data.instances->size()) return nullptr;
  return &(*data.instances)[static_cast<std::size_t>(id)];
}

struct QueryInputs {
  std::string checkpoint;
  std::string context;
  std::string history = "empty";
  std::optional<std::int64_t> instance;
  std::size_t context_size = 31;
};

struct Query {
  ModelWeights weights;
  Dataset data;
  std::vector<EventSequence> pool;
  std::int64_t instance_id = -1;
  HistorySelection history;
  std::vector<EventSequence> context;
};

Query prepare_query(const QueryInputs& in) {
  Query q;
  q.weights = load_model(in.checkpoint);
  q.data = read_dataset(in.context);
  q.pool = select_instance(q.data, in.instance, &q.instance_id);
  q.history = parse_history_spec(in.history, q.pool);
  for (std::size_t i = 0; i < q.pool.size() && q.context.size() < in.context_size; ++i) {
    if (q.history.source && *q.history.source == i) continue;
    q.context.push_back(q.pool[i]);
  }
  if (q.context.empty()) throw ConfigError("no context sequences left after removing the history's source");
  return q;
}

void add_query_options(CLI::App* cmd, QueryInputs& in) {
  cmd->add_option("--checkpoint", in.checkpoint, "Model checkpoint (.json manifest)")->required();
  cmd->add_option("--context", in.context, "Context dataset (.jsonl)")->required();
  cmd->add_option("--history", in.history,
                  "History: 'empty', 'seq:<i>@prefix:<n>' (sequence i of the instance, left out of the "
                  "context), or inline JSON");
  cmd->add_option("--instance", in.instance, "instance_id to use from the dataset (default: first sequence's)");
  cmd->add_option("--context-size", in.context_size, "Maximum context sequences m")->check(CLI::PositiveNumber);
}

int cmd_generate(const Globals& g, std::size_t n_instances, std::size_t n_sequences, std::size_t max_events) {
  require_out(g, "generate");
  PriorConfig prior;
  bool seed_in_config = false;
  if (!g.config.empty()) {
    const json j = read_json_file(g.config);
    const json& p = j.contains("prior") ? j["prior"] : j;
    prior = p.get<PriorConfig>();
    seed_in_config = p.contains("seed");
  }
  prior.seed = resolve_seed(g, seed_in_config ? std::optional(prior.seed) : std::nullopt);
  // A dataset file holds a single K, so instances are grouped into one file per K.
  struct Part {
    std::vector<HawkesInstance> instances;
    std::vector<EventSequence> sequences;
  };
  std::map<std::size_t, Part> parts;
  for (std::size_t i = 0; i < n_instances; ++i) {
    auto inst = sample_instance(prior, static_cast<std::uint64_t>(i));
    const SimulationConfig sim{prior.window_end, max_events, derive_seed(prior.seed, streams::kSimulation, i)};
    std::vector<EventSequence> seqs;
    try {
      seqs = simulate_dataset(inst, n_sequences, sim, g.threads);
    } catch (const ExplosionError& e) {
      throw ConfigError("prior draws an explosive instance (" + std::to_string(i) + "): " + e.what() +
                        "; lower kernel weights, stability_threshold or window_end");
    }
    auto& part = parts[inst.num_marks];
    for (auto& s : seqs) {
      s.instance_id = static_cast<std::int64_t>(part.instances.size());
      part.sequences.push_back(std::move(s));
    }
    part.instances.push_back(std::move(inst));
  }
  for (const auto& [k, part] : parts) {
    fs::path path(g.out);
    if (parts.size() > 1) {
      path = path.parent_path() / (path.stem().string() + "_K" + std::to_string(k) + path.extension().string());
    }
    const auto manifest = write_dataset(path, part.sequences, &part.instances);
    std::cerr << "wrote " << manifest.num_sequences << " sequences from " << part.instances.size()
              << " instances (K=" << k << ") to " << path.string() << '\n';
  }
  return kOk;
}

int cmd_train(const Globals& g, std::optional<std::size_t> steps, std::optional<std::size_t> stop_after,
              const std::string& from_dataset) {
  require_out(g, "train");
  RunConfig rc = load_run_config(g.config, {"prior", "model", "train"});
  if (steps) {
    rc.train.steps = *steps;
    if (rc.train.warmup_steps >= rc.train.steps) rc.train.warmup_steps = rc.train.steps ? rc.train.steps - 1 : 0;
  }
  rc.train.threads = g.threads;
  rc.train.seed = resolve_seed(g, rc.train_seed_given ? std::optional(rc.train.seed) : std::nullopt);
  rc.train.validate();

  const fs::path out(g.out);
  fs::create_directories(out);
  json record = {{"prior", rc.prior}, {"model", rc.model}, {"train", rc.train}};
  record["train"].erase("threads");
  if (!from_dataset.empty()) record["from_dataset"] = fs::absolute(from_dataset).string();
  const fs::path record_path = out / "run_config.json";

  std::optional<TrainState> resume;
  if (!g.resume.empty()) {
    if (fs::exists(record_path) && read_json_file(record_path) != record) {
      throw ConfigError("resume: configuration differs from the one recorded in " + record_path.string());
    }
    const auto path = resolve_resume(g.resume);
    resume = load_train_state(path);
    std::cerr << "resuming from " << path.string() << " at step " << resume->step << '\n';
  } else {
    write_text(record_path.string(), record.dump(2) + "\n");
  }

  TrainHooks hooks{out, progress(rc.train.steps), stop_after};
  TrainState state;
  if (from_dataset.empty()) {
    state = pretrain(rc.prior, rc.model, rc.train, hooks, std::move(resume));
  } else {
    state = pretrain_from_corpus(read_dataset(from_dataset).sequences, rc.model, rc.train, hooks, std::move(resume));
  }
  std::cerr << "stopped at step " << state.step << "; checkpoints in " << out.string() << '\n';
  return kOk;
}

int cmd_finetune(const Globals& g, const std::string& checkpoint, const std::string& data_path,
                 std::optional<std::size_t> steps, std::optional<std::size_t> context_size) {
  require_out(g, "finetune");
  RunConfig rc = load_run_config(g.config, {"train"});
  if (steps) {
    rc.train.steps = *steps;
    if (rc.train.warmup_steps >= rc.train.steps) rc.train.warmup_steps = rc.train.steps ? rc.train.steps - 1 : 0;
  }
  if (context_size) rc.train.sequences_per_instance = *context_size + 1;
  rc.train.rotations_per_instance = std::min(rc.train.rotations_per_instance, rc.train.sequences_per_instance);
  rc.train.threads = g.threads;
  rc.train.seed = resolve_seed(g, rc.train_seed_given ? std::optional(rc.train.seed) : std::nullopt);
  rc.train.validate();

  const auto start = load_model(checkpoint);
  const auto data = read_dataset(data_path);
  const fs::path out(g.out);
  const auto result = finetune(start, data.sequences, rc.train, {out, progress(rc.train.steps), std::nullopt});
  const json split = {{"train", result.split.train}, {"heldout", result.split.heldout}, {"sampled", result.sampled}};
  write_text((out / "split.json").string(), split.dump() + "\n");
  for (const auto& [step, nll] : result.heldout_curve) {
    std::fprintf(stderr, "held-out NLL/event at step %zu: %.6f\n", step, nll);
  }
  return kOk;
}

int cmd_infer(const Globals& g, const QueryInputs& in, const std::string& grid_spec) {
  const auto q = prepare_query(in);
  const InferenceSession session(q.weights, q.context);
  const double T = q.pool.front().window_end;
  const auto grid = parse_grid(grid_spec.empty() ? "0:" + std::to_string(T) + ":201" : grid_spec);
  const auto curve = intensity_curve(session, q.history.history, grid, truth_for(q.data, q.instance_id));
  write_text(g.out, curve_to_csv(curve));
  return kOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& data_path, EvalOptions opts) {
  const auto weights = load_model(checkpoint);
  const auto data = read_dataset(data_path);
  opts.seed = resolve_seed(g);
  opts.threads = g.threads;
  const auto* instances = data.instances ? &*data.instances : nullptr;
  const auto report = evaluate(weights, data.sequences, instances, opts);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  json j = report;
  j["checkpoint"] = checkpoint;
  j["dataset"] = data_path;
  write_text(g.out, j.dump(2) + "\n");
  return kOk;
}

int cmd_forecast(const Globals& g, const QueryInputs& in, ForecastOptions opts) {
  const auto q = prepare_query(in);
  const InferenceSession session(q.weights, q.context);
  opts.seed = resolve_seed(g);
  const auto result = forecast(session, q.history.history, opts);
  json j = result;
  j["seed"] = opts.seed;
  write_text(g.out, j.dump() + "\n");
  return kOk;
}

int cmd_import_csv(const Globals& g, const std::string& input, CsvImportOptions opts, const std::string& delimiter,
                   const std::string& vocabulary_path, const std::string& time_unit) {
  require_out(g, "import-csv");
  if (delimiter == "\\t" || delimiter == "tab") {
    opts.delimiter = '\t';
  } else if (delimiter.size() == 1) {
    opts.delimiter = delimiter[0];
  } else {
    throw ConfigError("--delimiter must be a single character");
  }
  if (!vocabulary_path.empty()) opts.vocabulary = read_json_file(vocabulary_path).get<std::vector<std::string>>();
  const auto result = import_csv(input, opts);
  write_dataset(g.out, result.sequences, nullptr, time_unit);
  fs::path vocab_out(g.out);
  vocab_out.replace_extension(".vocab.json");
  write_text(vocab_out.string(),
             json{{"marks", result.vocabulary}, {"sequence_ids", result.sequence_ids}}.dump(2) + "\n");
  std::cerr << "imported " << result.sequences.size() << " sequences, K=" << result.vocabulary.size() << ", "
            << result.jittered_events << " tied events jittered\n";
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"fimpp: in-context intensity inference for marked temporal point processes"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (default: drawn from OS entropy and printed)");
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--resume", g.resume, "Checkpoint, or run directory, to resume training from");

  std::size_t n_instances = 1, n_sequences = 32, sim_max_events = 10000;
  auto* generate = app.add_subcommand("generate", "Sample Hawkes instances from a prior and simulate datasets");
  generate->add_option("--instances", n_instances, "Number of instances")->check(CLI::PositiveNumber);
  generate->add_option("--sequences", n_sequences, "Sequences per instance (m+1)")->check(CLI::PositiveNumber);
  generate->add_option("--max-events", sim_max_events, "Per-sequence event cap")->check(CLI::PositiveNumber);

  std::optional<std::size_t> steps, stop_after;
  std::string from_dataset;
  auto* train = app.add_subcommand("train", "Pretrain on freshly simulated prior draws");
  train->add_option("--steps", steps, "Override train.steps");
  train->add_option("--stop-after", stop_after, "Stop after this many completed steps (resumable)");
  train->add_option("--from-dataset", from_dataset, "Train on a pregenerated dataset instead of the prior");

  std::string checkpoint, data_path;
  std::optional<std::size_t> context_size;
  auto* finetune_cmd = app.add_subcommand("finetune", "Finetune a checkpoint on one dataset");
  finetune_cmd->add_option("--checkpoint", checkpoint, "Starting checkpoint")->required();
  finetune_cmd->add_option("--data", data_path, "Target dataset (.jsonl)")->required();
  finetune_cmd->add_option("--steps", steps, "Override train.steps");
  finetune_cmd->add_option("--context-size", context_size, "Context sequences m per batch")
      ->check(CLI::PositiveNumber);

  QueryInputs query;
  std::string grid;
  auto* infer = app.add_subcommand("infer", "Emit the estimated (and true, if known) intensity curve as CSV");
  add_query_options(infer, query);
  infer->add_option("--grid", grid, "'start:stop:count' or comma-separated times (default 0:T:201)");

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Zero-shot evaluation report against ground truth");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval->add_option("--data", data_path, "Evaluation dataset with sidecar")->required();
  eval->add_option("--context-size", eval_opts.context_size, "Context sequences m per instance")
      ->check(CLI::PositiveNumber);
  eval->add_option("--grid-points", eval_opts.grid_points, "Grid size for intensity RMSE")
      ->check(CLI::PositiveNumber);
  eval->add_option("--samples", eval_opts.forecast_samples, "Samples per next-event prediction");

  ForecastOptions forecast_opts;
  auto* forecast_cmd = app.add_subcommand("forecast", "Sample future trajectories from the estimated intensity");
  add_query_options(forecast_cmd, query);
  forecast_cmd->add_option("--horizon", forecast_opts.horizon, "Forecast horizon")->required();
  forecast_cmd->add_option("--samples", forecast_opts.samples, "Number of trajectories");
  forecast_cmd->add_option("--max-events", forecast_opts.max_events, "Event cap per trajectory")
      ->check(CLI::PositiveNumber);

  std::string csv_input, delimiter = ",", vocabulary_path, time_unit;
  CsvImportOptions csv;
  std::optional<double> window_end;
  auto* import = app.add_subcommand("import-csv", "Convert an event CSV into a dataset");
  import->add_option("--input", csv_input, "CSV file")->required();
  import->add_option("--sequence-column", csv.sequence_column, "Sequence id column");
  import->add_option("--time-column", csv.time_column, "Event time column");
  import->add_option("--mark-column", csv.mark_column, "Mark column");
  import->add_option("--delimiter", delimiter, "Field delimiter (single character or 'tab')");
  import->add_option("--vocabulary", vocabulary_path, "JSON array of mark names fixing the mark order");
  import->add_option("--window-end", window_end, "Window end for every sequence (default: its last event)");
  import->add_option("--max-marks", csv.max_marks, "Maximum distinct marks")->check(CLI::PositiveNumber);
  import->add_option("--time-unit", time_unit, "Time unit recorded in the manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*generate) return cmd_generate(g, n_instances, n_sequences, sim_max_events);
    if (*train) return cmd_train(g, steps, stop_after, from_dataset);
    if (*finetune_cmd) return cmd_finetune(g, checkpoint, data_path, steps, context_size);
    if (*infer) return cmd_infer(g, query, grid);
    if (*eval) return cmd_eval(g, checkpoint, data_path, eval_opts);
    if (*forecast_cmd) return cmd_forecast(g, query, forecast_opts);
    if (*import) {
      csv.window_end = window_end;
      return cmd_import_csv(g, csv_input, csv, delimiter, vocabulary_path, time_unit);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace
}  // namespace fimpp::cli

int main(int argc, char** argv) { return fimpp::cli::run(argc, argv); }
