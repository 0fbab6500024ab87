#pragma once
// Run orchestration behind the CLI: ground, train, eval and embed.
//
// A run directory holds one sub-directory per command (ground/, train/,
// eval/). A command refuses to write into a non-empty sub-directory, so a
// finished run is never overwritten.

#include "cocobm/config.hpp"
#include "cocobm/embedding_cache.hpp"
#include "cocobm/evaluate.hpp"
#include "cocobm/http_backends.hpp"

#include <filesystem>
#include <iostream>
#include <memory>
#include <set>
#include <string>

namespace cocobm {

// Labels file: one label per line, "name" or "name<TAB>superclass". Blank
// lines and lines starting with '#' are skipped.
inline std::vector<Label> read_label_manifest(const fs::path& path) {
  std::vector<Label> labels;
  std::set<std::string> seen;
  for (const auto& raw : split_lines(read_text_file(path))) {
    auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    Label l{trim(line.substr(0, tab)), tab == std::string::npos ? std::string() : trim(line.substr(tab + 1))};
    if (l.name.empty()) throw Error("labels file " + path.string() + ": empty label name");
    if (!seen.insert(l.name).second) throw Error("labels file " + path.string() + ": duplicate label '" + l.name + "'");
    labels.push_back(std::move(l));
  }
  if (labels.size() < 2) throw Error("labels file " + path.string() + " must list at least two labels");
  return labels;
}

struct ImageEntry {
  std::string key;  // "<label>/<file name>"
  fs::path path;
  std::size_t target = 0;
};

// Regular files under <root>/<label>/, sorted by name.
inline std::vector<ImageEntry> list_dataset_images(const fs::path& root, const std::vector<Label>& labels) {
  std::vector<ImageEntry> out;
  for (std::size_t y = 0; y < labels.size(); ++y) {
    fs::path dir = root / labels[y].name;
    if (!fs::is_directory(dir)) throw Error("dataset: missing image directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    if (files.empty()) throw Error("dataset: no images in " + dir.string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back({labels[y].name + "/" + f.filename().string(), f, y});
  }
  return out;
}

inline fs::path cache_path(const RunConfig& cfg) {
  if (!cfg.dataset.cache.empty()) return cfg.dataset.cache;
  if (cfg.backend == "real") return cfg.dataset.root / "embeddings.bin";
  return {};
}

struct Backend {
  std::unique_ptr<TextEncoder> text;
  std::unique_ptr<LlmClient> generator;
  std::unique_ptr<LlmClient> judge;
  Dataset data;
};

struct BackendNeeds {
  bool generator = false;
  bool judge = false;
};

inline Backend make_backend(const RunConfig& cfg, BackendNeeds needs) {
  Backend b;
  if (cfg.backend == "synthetic") {
    b.text = std::make_unique<SyntheticTextEncoder>(world_text_config(cfg.world, cfg.seed));
    b.data = generate_world_images(cfg.world, *b.text, cfg.seed);
    if (needs.generator) b.generator = std::make_unique<ScriptedLlm>(world_responder(cfg.world));
    if (needs.judge) b.judge = std::make_unique<ScriptedLlm>(world_responder(cfg.world));
    return b;
  }
  auto labels = read_label_manifest(cfg.dataset.labels);
  auto images = list_dataset_images(cfg.dataset.root, labels);
  auto path = cache_path(cfg);
  if (!fs::exists(path)) throw Error("embedding cache " + path.string() + " does not exist; run `embed` first");
  auto cache = EmbeddingCache::load(path);
  b.data.labels = labels;
  std::size_t missing = 0;
  for (const auto& img : images) {
    auto v = cache.get(img.key);
    if (!v) {
      ++missing;
      continue;
    }
    b.data.add(img.key, normalized(*v), img.target);
  }
  if (missing) throw Error(std::to_string(missing) + " images are not in " + path.string() + "; run `embed` first");
  b.text = std::make_unique<HttpTextEncoder>(cfg.real.at("encoder").get<HttpEndpoint>());
  if (needs.generator) b.generator = std::make_unique<ChatLlm>(cfg.real.at("generator").get<ChatConfig>());
  if (needs.judge) b.judge = std::make_unique<ChatLlm>(cfg.real.at("judge").get<ChatConfig>());
  return b;
}

// Creates `dir`, refusing to reuse one that already has content.
inline fs::path prepare_output_dir(const fs::path& dir) {
  if (dir.empty()) throw Error("no output directory given (use --out)");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error("output path " + dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir))
      throw Error("output directory " + dir.string() + " is not empty; choose a new --out (runs are never overwritten)");
  }
  fs::create_directories(dir);
  return dir;
}

inline json run_stamp(const RunConfig& cfg) { return json{{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}}; }

inline void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline void write_bank(const fs::path& dir, const ConceptBank& bank, const RunConfig& cfg) {
  json j = bank;
  j["run"] = run_stamp(cfg);
  write_json(dir / bank_file_name(bank.version), j);
}

struct DataSplits {
  Dataset train, val, test;
};

inline DataSplits split_data(const Dataset& data, const RunConfig& cfg) {
  auto s = split_train_val_test(data, cfg.train_fraction, cfg.val_fraction, cfg.seed);
  return {data.subset(s.train), data.subset(s.val), data.subset(s.test)};
}

inline fs::path ground_dir(const RunConfig& cfg) { return cfg.out / "ground"; }
inline fs::path train_dir(const RunConfig& cfg) { return cfg.out / "train"; }
inline fs::path eval_dir(const RunConfig& cfg) { return cfg.out / "eval"; }

// ---------------------------------------------------------------------------
// ground

struct GroundResult {
  AgentState state;
  fs::path dir;
  int exit_code = 0;  // 0 converged, 2 capped
};

inline GroundResult cmd_ground(const RunConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  if (cfg.out.empty()) throw Error("no output directory given (use --out)");
  auto backend = make_backend(cfg, {true, false});
  auto dir = prepare_output_dir(ground_dir(cfg));
  write_json(dir / "config.json", cfg);

  MemoryLog mlog(dir / "memory_log.jsonl");
  mlog.append("run", run_stamp(cfg), 0);
  LlmGateway gw(*backend.generator, cfg.gateway_options(dir / "llm_transcript.jsonl"));
  auto splits = split_data(backend.data, cfg);
  ConceptAgent agent(*backend.text, gw, splits.train, cfg.agent_config(), &mlog);

  GroundResult r;
  r.dir = dir;
  std::size_t written = 0;
  auto flush_banks = [&](const AgentState& st) {
    for (; written < st.memory.bank_history.size(); ++written) write_bank(dir, st.memory.bank_history[written], cfg);
  };

  r.state = agent.initialize();
  flush_banks(r.state);
  json init = run_stamp(cfg);
  init["selection"] = r.state.initial_selection;
  init["verified_pairs"] = r.state.initial_verified_pairs;
  init["instances"] = agent.instance_data(r.state).ids;
  init["bank_version"] = r.state.bank.version;
  write_json(dir / "init.json", init);
  if (progress)
    *progress << "init: " << r.state.bank.num_concepts() << " concepts, " << r.state.memory.generated.size()
              << " generated\n";

  while (r.state.status == AgentStatus::running) {
    agent.run_iteration(r.state);
    const auto& rec = r.state.history.back();
    json fb = rec;
    fb["run"] = run_stamp(cfg);
    write_json(dir / ("feedback_iter" + std::to_string(rec.iteration) + ".json"), fb);
    flush_banks(r.state);
    if (progress)
      *progress << "iteration " << rec.iteration << ": removed " << rec.removed_ids.size() << ", unidentifiable "
                << rec.report.insufficiency.labels.size() << ", bank v" << rec.bank_version << " ("
                << r.state.bank.num_concepts() << " concepts)\n";
  }
  save_memory(r.state.memory, dir / "memory.json");

  r.exit_code = r.state.status == AgentStatus::converged ? 0 : 2;
  json run = run_stamp(cfg);
  run["command"] = "ground";
  run["status"] = to_string(r.state.status);
  run["iterations"] = r.state.iteration;
  run["final_bank_version"] = r.state.bank.version;
  run["final_bank_hash"] = bank_hash(r.state.bank);
  run["concepts"] = r.state.bank.concept_texts();
  run["llm_calls"] = gw.client_calls();
  write_json(dir / "run.json", run);
  return r;
}

// ---------------------------------------------------------------------------
// train

struct TrainResult {
  json report;
  fs::path dir;
};

struct GroundedBank {
  ConceptBank bank;
  AgentMemory memory;
};

inline GroundedBank load_grounded_bank(const RunConfig& cfg, std::optional<int> version) {
  auto gdir = ground_dir(cfg);
  if (!fs::is_directory(gdir)) throw Error("no grounding run in " + gdir.string() + "; run `ground` first");
  auto path = version ? gdir / bank_file_name(*version) : latest_bank_file(gdir);
  GroundedBank g{load_bank(path), load_memory(gdir / "memory.json")};
  if (g.bank.num_concepts() == 0) throw Error("bank " + path.string() + " has no concepts");
  return g;
}

inline void check_labels_match(const ConceptBank& bank, const Dataset& data) {
  if (bank.label_names() != data.label_names())
    throw Error("the bank's labels do not match the dataset's labels; was it grounded with another config?");
}

inline EditableMatrix editable_for(const GroundedBank& g, bool use) {
  return use ? build_editable_matrix(g.memory, g.bank) : EditableMatrix::disabled(g.bank);
}

struct TrainedModel {
  CocoModel model;
  TrainMetrics metrics;
};

inline TrainedModel train_final_model(const RunConfig& cfg, const TextEncoder& text, const ConceptBank& bank,
                                      EditableMatrix editable, const DataSplits& splits) {
  auto model = CocoModel::for_bank(text, bank, std::move(editable), cfg.model_config());
  auto metrics = train(model, splits.train, splits.val, cfg.train_config());
  return {std::move(model), std::move(metrics)};
}

inline TrainResult cmd_train(const RunConfig& cfg, std::optional<int> bank_version = std::nullopt) {
  cfg.validate();
  auto g = load_grounded_bank(cfg, bank_version);
  auto backend = make_backend(cfg, {});
  check_labels_match(g.bank, backend.data);
  auto dir = prepare_output_dir(train_dir(cfg));
  auto splits = split_data(backend.data, cfg);
  auto tm = train_final_model(cfg, *backend.text, g.bank, editable_for(g, cfg.use_editable_matrix), splits);

  json ckpt = checkpoint_json(tm.model, g.bank);
  ckpt["run"] = run_stamp(cfg);
  ckpt["use_editable_matrix"] = cfg.use_editable_matrix;
  write_json(dir / "checkpoint.json", ckpt);

  TrainResult r;
  r.dir = dir;
  r.report = run_stamp(cfg);
  r.report["command"] = "train";
  r.report["N"] = g.bank.num_labels();
  r.report["M"] = g.bank.num_concepts();
  r.report["bank_version"] = g.bank.version;
  r.report["bank_hash"] = bank_hash(g.bank);
  r.report["use_editable_matrix"] = cfg.use_editable_matrix;
  r.report["accuracy"] = tm.model.accuracy(splits.test);
  r.report["val_accuracy"] = tm.metrics.val_accuracy;
  r.report["train_accuracy"] = tm.model.accuracy(splits.train);
  r.report["epochs_run"] = tm.metrics.epochs_run;
  r.report["best_epoch"] = tm.metrics.best_epoch;
  r.report["split_sizes"] = {splits.train.size(), splits.val.size(), splits.test.size()};
  write_json(dir / "report.json", r.report);
  return r;
}

// ---------------------------------------------------------------------------
// eval

struct EvalRow {
  std::string method;
  InterpretabilityReport report;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  json report;
  fs::path dir;
};

inline json mcq_file(const RunConfig& cfg, const McqSet& set) {
  json j = run_stamp(cfg);
  j["mcqs"] = set.mcqs;
  j["empty_profiles"] = set.empty;
  j["excluded_labels"] = set.excluded;
  return j;
}

inline json profiles_json(const std::vector<ExplanationProfile>& profiles, const std::vector<std::string>& concepts) {
  json out = json::array();
  for (const auto& p : profiles) {
    json ranked = json::array();
    for (std::size_t r = 0; r < p.ranked.size(); ++r)
      ranked.push_back({{"concept", concepts[p.ranked[r]]}, {"contribution", p.contributions[r]}});
    out.push_back({{"label", p.label}, {"samples", p.samples}, {"ranked", ranked}});
  }
  return out;
}

inline EvalResult cmd_eval(const RunConfig& cfg, bool with_no_editable_row = false) {
  cfg.validate();
  auto tdir = train_dir(cfg);
  if (!fs::exists(tdir / "checkpoint.json")) throw Error("no checkpoint in " + tdir.string() + "; run `train` first");
  json ckpt = read_json_file(tdir / "checkpoint.json");
  auto g = load_grounded_bank(cfg, ckpt.at("bank_version").get<int>());
  auto backend = make_backend(cfg, {false, true});
  check_labels_match(g.bank, backend.data);
  const bool used_e = ckpt.value("use_editable_matrix", true);
  ModelConfig mc = cfg.model_config();
  mc.logit_scale = ckpt.value("logit_scale", mc.logit_scale);
  auto model = CocoModel::for_bank(*backend.text, g.bank, editable_for(g, used_e), mc);
  load_checkpoint(model, g.bank, ckpt);

  auto dir = prepare_output_dir(eval_dir(cfg));
  auto splits = split_data(backend.data, cfg);
  LlmGateway judge(*backend.judge, cfg.gateway_options(dir / "llm_transcript.jsonl"));
  const auto mcq_seed = substream_seed(cfg.seed, "mcq");

  EvalResult r;
  r.dir = dir;
  auto run_row = [&](const std::string& method, const CocoModel& m, const std::string& suffix) {
    auto rep = evaluate_interpretability(m, g.bank.labels, splits.test, *backend.text, judge, mcq_seed, cfg.votes);
    write_json(dir / ("mcqs" + suffix + ".json"), mcq_file(cfg, rep.mcqs));
    json judged = run_stamp(cfg);
    judged["judgments"] = rep.judged;
    write_json(dir / ("judgments" + suffix + ".json"), judged);
    json prof = run_stamp(cfg);
    prof["profiles"] = profiles_json(rep.mcqs.profiles, m.concepts());
    write_json(dir / ("explanations" + suffix + ".json"), prof);
    r.rows.push_back({method, std::move(rep)});
  };
  run_row(used_e ? "cocobm" : "cocobm-no-editable-matrix", model, "");
  if (with_no_editable_row && used_e) {
    auto tm = train_final_model(cfg, *backend.text, g.bank, editable_for(g, false), splits);
    run_row("cocobm-no-editable-matrix", tm.model, "_no_editable_matrix");
  }

  std::vector<TableRow> table;
  json rows = json::array();
  for (const auto& row : r.rows) {
    table.push_back({row.method, row.report.mcqs.accuracy, row.report.score});
    rows.push_back({{"method", row.method},
                    {"accuracy", row.report.mcqs.accuracy},
                    {"score", row.report.score},
                    {"warnings", row.report.mcqs.warnings}});
  }
  auto csv = interpretability_table_csv(table);
  write_text_file(dir / "table.csv", "# config_hash=" + config_hash(cfg) + " seed=" + std::to_string(cfg.seed) + "\n" + csv);
  r.report = run_stamp(cfg);
  r.report["command"] = "eval";
  r.report["bank_version"] = g.bank.version;
  r.report["rows"] = rows;
  r.report["judge_calls"] = judge.client_calls();
  write_json(dir / "report.json", r.report);
  return r;
}

// ---------------------------------------------------------------------------
// embed

struct EmbedResult {
  fs::path cache;
  std::size_t rows = 0;
  std::size_t new_encodings = 0;
};

// Adds every dataset image missing from the cache. Synthetic runs store the
// generated world images; real runs encode image files through the service.
inline EmbedResult cmd_embed(const RunConfig& cfg, fs::path cache_file = {}) {
  cfg.validate();
  if (cache_file.empty()) cache_file = cache_path(cfg);
  if (cache_file.empty()) throw Error("no cache file given (set dataset.cache or use --out)");
  EmbedResult r{cache_file, 0, 0};
  if (cfg.backend == "synthetic") {
    SyntheticTextEncoder text(world_text_config(cfg.world, cfg.seed));
    auto cache = EmbeddingCache::load_or_create(cache_file, text.dim());
    auto data = generate_world_images(cfg.world, text, cfg.seed);
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!cache.contains(data.ids[i])) {
        cache.put(data.ids[i], data.images[i]);
        ++r.new_encodings;
      }
    r.rows = cache.size();
    cache.save(cache_file);
    return r;
  }
  auto labels = read_label_manifest(cfg.dataset.labels);
  auto images = list_dataset_images(cfg.dataset.root, labels);
  HttpTextEncoder text(cfg.real.at("encoder").get<HttpEndpoint>());
  HttpImageEncoder enc(cfg.real.at("encoder").get<HttpEndpoint>(), text.dim());
  auto cache = EmbeddingCache::load_or_create(cache_file, enc.dim());
  for (const auto& img : images) {
    if (cache.contains(img.key)) continue;
    cache.put(img.key, enc.encode({img.key, img.path, std::nullopt}));
    ++r.new_encodings;
    if (r.new_encodings % 64 == 0) cache.save(cache_file);
  }
  r.rows = cache.size();
  cache.save(cache_file);
  return r;
}

}  // namespace cocobm
