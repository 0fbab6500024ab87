#pragma once
// Run configuration: backend choice, dataset, hyperparameters and output
// directory, loaded from JSON with strict key checking. The config hash
// covers everything except the output directory.

#include "cocobm/agent.hpp"
#include "cocobm/synthetic_world.hpp"

#include <filesystem>
#include <set>
#include <string>

namespace cocobm {

struct DatasetConfig {
  std::filesystem::path root;    // one sub-directory per label
  std::filesystem::path labels;  // "name[<TAB>superclass]" per line
  std::filesystem::path cache;   // embedding cache; default <root>/embeddings.bin
};

struct RunConfig {
  std::string backend = "synthetic";
  std::uint64_t seed = 0;
  std::filesystem::path out;
  WorldSpec world = planted_world();
  DatasetConfig dataset;
  json real = json::object();  // {"encoder": {...}, "generator": {...}, "judge": {...}}

  // Agent
  std::size_t q = 8;
  double ta = 0.1;
  double tm = 0.3;
  std::size_t beta = 16;
  std::size_t k_per_selection = 0;
  int max_iterations = 10;
  double instance_split = 0.5;
  bool use_editable_matrix = true;
  std::size_t verify_workers = 1;
  TrainConfig perception_train;
  double perception_logit_scale = 1.0;
  DictionaryConfig selection;

  // Final training
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  TrainConfig train;
  double logit_scale = 1.0;

  int votes = 3;
  RetryPolicy retry;
  double generation_temperature = 0.7;
  double judge_temperature = 0.0;
  int min_interval_ms = 0;

  void validate() const {
    if (backend != "synthetic" && backend != "real")
      throw Error("config: backend must be 'synthetic' or 'real', got '" + backend + "'");
    if (!(ta >= 0.0 && ta <= 1.0)) throw Error("config: t_a must lie in [0, 1], got " + std::to_string(ta));
    if (!(tm >= 0.0)) throw Error("config: t_m must be >= 0, got " + std::to_string(tm));
    if (q < 1) throw Error("config: q must be >= 1");
    if (beta < 1) throw Error("config: beta must be >= 1");
    if (max_iterations < 1) throw Error("config: max_iterations must be >= 1");
    if (!(instance_split > 0.0 && instance_split < 1.0)) throw Error("config: instance_split must lie in (0, 1)");
    if (!(train_fraction > 0.0 && val_fraction > 0.0 && train_fraction + val_fraction < 1.0))
      throw Error("config: split fractions must be positive and sum to less than 1");
    for (const auto* t : {&perception_train, &train}) {
      if (t->batch_size == 0) throw Error("config: batch_size must be positive");
      if (t->epochs == 0) throw Error("config: epochs must be positive");
      if (!(t->learning_rate > 0.0)) throw Error("config: learning_rate must be positive");
    }
    if (!(logit_scale > 0.0 && perception_logit_scale > 0.0)) throw Error("config: logit_scale must be positive");
    if (selection.epochs == 0 || !(selection.learning_rate > 0.0))
      throw Error("config: selection epochs and learning_rate must be positive");
    if (votes < 1) throw Error("config: votes must be >= 1");
    if (retry.attempts < 1) throw Error("config: llm attempts must be >= 1");
    if (min_interval_ms < 0) throw Error("config: min_interval_ms must be >= 0");
    if (backend == "synthetic") {
      world.validate();
    } else {
      if (dataset.root.empty() || dataset.labels.empty())
        throw Error("config: the real backend needs dataset.root and dataset.labels");
      for (const char* key : {"encoder", "generator", "judge"})
        if (!real.contains(key)) throw Error(std::string("config: real backend section is missing '") + key + "'");
      if (!real["encoder"].contains("base_url")) throw Error("config: real.encoder.base_url is required");
      for (const char* key : {"generator", "judge"})
        if (!real[key].contains("model")) throw Error(std::string("config: real.") + key + ".model is required");
    }
  }

  AgentConfig agent_config() const {
    AgentConfig a;
    a.planner = {ta, tm};
    a.beta = beta;
    a.k_per_selection = k_per_selection;
    a.max_iterations = max_iterations;
    a.perception.model.q = q;
    a.perception.model.logit_scale = perception_logit_scale;
    a.perception.train = perception_train;
    a.perception.split_ratio = instance_split;
    a.selection = selection;
    a.use_editable_matrix = use_editable_matrix;
    a.verify_workers = verify_workers;
    a.seed = seed;
    return a;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.q = q;
    m.logit_scale = logit_scale;
    m.seed = substream_seed(seed, "final/model");
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = substream_seed(seed, "final/train");
    return t;
  }

  GatewayOptions gateway_options(const std::filesystem::path& transcript = {}) const {
    GatewayOptions g;
    g.retry = retry;
    g.min_interval = std::chrono::milliseconds(min_interval_ms);
    g.generation_temperature = generation_temperature;
    g.judge_temperature = judge_temperature;
    g.transcript_path = transcript;
    return g;
  }
};

// The planted-world run: the final model trains with a CLIP-style logit
// scale and small batches, so the few hundred images get enough steps.
inline RunConfig planted_run_config(double noise = 0.0, std::uint64_t seed = 0) {
  RunConfig c;
  c.seed = seed;
  c.world = planted_world(noise);
  c.train.batch_size = 32;
  c.logit_scale = 10.0;
  return c;
}

namespace detail {

inline void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error("config: '" + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw Error("config: unknown key '" + k + "' in " + section);
}

inline json train_to_json(const TrainConfig& t, double logit_scale) {
  return json{{"learning_rate", t.learning_rate},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"patience", t.patience},
              {"logit_scale", logit_scale}};
}

inline void train_from_json(const json& j, const std::string& section, TrainConfig& t, double& logit_scale,
                            std::initializer_list<const char*> extra = {}) {
  std::vector<const char*> keys = {"learning_rate", "batch_size", "epochs", "patience", "logit_scale"};
  keys.insert(keys.end(), extra.begin(), extra.end());
  std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw Error("config: unknown key '" + k + "' in " + section);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.epochs = j.value("epochs", t.epochs);
  t.patience = j.value("patience", t.patience);
  logit_scale = j.value("logit_scale", logit_scale);
}

}  // namespace detail

inline void to_json(json& j, const RunConfig& c) {
  json train = detail::train_to_json(c.train, c.logit_scale);
  train["split"] = {c.train_fraction, c.val_fraction};
  j = json{{"backend", c.backend},
           {"seed", c.seed},
           {"out", c.out.string()},
           {"agent",
            {{"q", c.q},
             {"t_a", c.ta},
             {"t_m", c.tm},
             {"beta", c.beta},
             {"k_per_selection", c.k_per_selection},
             {"max_iterations", c.max_iterations},
             {"instance_split", c.instance_split},
             {"use_editable_matrix", c.use_editable_matrix},
             {"verify_workers", c.verify_workers},
             {"perception", detail::train_to_json(c.perception_train, c.perception_logit_scale)},
             {"selection", {{"epochs", c.selection.epochs}, {"learning_rate", c.selection.learning_rate}}}}},
           {"train", train},
           {"eval", {{"votes", c.votes}}},
           {"llm",
            {{"attempts", c.retry.attempts},
             {"backoff_ms", c.retry.base_delay.count()},
             {"generation_temperature", c.generation_temperature},
             {"judge_temperature", c.judge_temperature},
             {"min_interval_ms", c.min_interval_ms}}}};
  if (c.backend == "synthetic") {
    j["world"] = c.world;
  } else {
    j["dataset"] = {{"root", c.dataset.root.string()},
                    {"labels", c.dataset.labels.string()},
                    {"cache", c.dataset.cache.string()}};
    j["real"] = c.real;
  }
}

inline void from_json(const json& j, RunConfig& c) {
  detail::check_keys(j, "config", {"backend", "seed", "out", "world", "dataset", "real", "agent", "train", "eval", "llm"});
  c = RunConfig{};
  c.backend = j.value("backend", c.backend);
  c.seed = j.value("seed", c.seed);
  c.out = j.value("out", std::string());
  if (j.contains("world")) c.world = j.at("world").get<WorldSpec>();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::check_keys(d, "dataset", {"root", "labels", "cache"});
    c.dataset.root = d.value("root", std::string());
    c.dataset.labels = d.value("labels", std::string());
    c.dataset.cache = d.value("cache", std::string());
  }
  if (j.contains("real")) c.real = j.at("real");
  if (j.contains("agent")) {
    const auto& a = j.at("agent");
    detail::check_keys(a, "agent",
                       {"q", "t_a", "t_m", "beta", "k_per_selection", "max_iterations", "instance_split",
                        "use_editable_matrix", "verify_workers", "perception", "selection"});
    c.q = a.value("q", c.q);
    c.ta = a.value("t_a", c.ta);
    c.tm = a.value("t_m", c.tm);
    c.beta = a.value("beta", c.beta);
    c.k_per_selection = a.value("k_per_selection", c.k_per_selection);
    c.max_iterations = a.value("max_iterations", c.max_iterations);
    c.instance_split = a.value("instance_split", c.instance_split);
    c.use_editable_matrix = a.value("use_editable_matrix", c.use_editable_matrix);
    c.verify_workers = a.value("verify_workers", c.verify_workers);
    if (a.contains("perception"))
      detail::train_from_json(a.at("perception"), "agent.perception", c.perception_train, c.perception_logit_scale);
    if (a.contains("selection")) {
      const auto& s = a.at("selection");
      detail::check_keys(s, "agent.selection", {"epochs", "learning_rate"});
      c.selection.epochs = s.value("epochs", c.selection.epochs);
      c.selection.learning_rate = s.value("learning_rate", c.selection.learning_rate);
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::train_from_json(t, "train", c.train, c.logit_scale, {"split"});
    if (t.contains("split")) {
      c.train_fraction = t.at("split").at(0).get<double>();
      c.val_fraction = t.at("split").at(1).get<double>();
    }
  }
  if (j.contains("eval")) {
    detail::check_keys(j.at("eval"), "eval", {"votes"});
    c.votes = j.at("eval").value("votes", c.votes);
  }
  if (j.contains("llm")) {
    const auto& l = j.at("llm");
    detail::check_keys(l, "llm",
                       {"attempts", "backoff_ms", "generation_temperature", "judge_temperature", "min_interval_ms"});
    c.retry.attempts = l.value("attempts", c.retry.attempts);
    c.retry.base_delay = std::chrono::milliseconds(l.value("backoff_ms", 0));
    c.generation_temperature = l.value("generation_temperature", c.generation_temperature);
    c.judge_temperature = l.value("judge_temperature", c.judge_temperature);
    c.min_interval_ms = l.value("min_interval_ms", c.min_interval_ms);
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  json j = read_json_file(path);
  try {
    return j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
}

// Hash of the canonical JSON without the output directory.
inline std::string config_hash(const RunConfig& c) {
  json j = c;
  j.erase("out");
  return hex64(fnv1a64(j.dump()));
}

}  // namespace cocobm
