#pragma once
// Agent actions: concept generation, dictionary-based selection, fact
// verification, and environment perception through a freshly trained
// conditional model on the fixed instance set.

#include "cocobm/bank.hpp"
#include "cocobm/dataset.hpp"
#include "cocobm/dictionary.hpp"
#include "cocobm/encoders.hpp"
#include "cocobm/kmeans.hpp"
#include "cocobm/llm.hpp"
#include "cocobm/model.hpp"

#include <future>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace cocobm {

// Deleted concepts that came from this label's own prompt.
inline std::vector<std::string> exclusions_for(const AgentMemory& memory, std::string_view source_label) {
  std::vector<std::string> out;
  for (const auto& c : memory.deleted)
    if (c.source_label == source_label) out.push_back(c.text);
  return out;
}

inline std::vector<Concept> generate_for_label(const ConceptBank& bank, AgentMemory& memory, LlmGateway& llm,
                                               const std::string& label, int iteration, MemoryLog* log = nullptr) {
  const Label& l = bank.labels.at(bank.label_index(label));
  auto phrases = llm_generate_concepts(llm, l.name, l.superclass, exclusions_for(memory, l.name));
  auto added = add_concepts(bank, memory, phrases, l.name, iteration);
  if (log && !added.empty()) log->append("add", {{"source_label", l.name}, {"concepts", added}}, iteration);
  return added;
}

inline std::vector<Concept> generate_for_confusable(const ConceptBank& bank, AgentMemory& memory, LlmGateway& llm,
                                                    const std::vector<std::string>& labels, int iteration,
                                                    MemoryLog* log = nullptr) {
  if (labels.size() < 2) throw Error("generate_for_confusable: need at least two labels");
  for (const auto& l : labels) (void)bank.label_index(l);
  auto phrases = llm_generate_concepts_for_group(llm, labels, exclusions_for(memory, kMultiLabelSource));
  auto added = add_concepts(bank, memory, phrases, std::string(kMultiLabelSource), iteration);
  if (log && !added.empty())
    log->append("add", {{"source_label", kMultiLabelSource}, {"labels", labels}, {"concepts", added}}, iteration);
  return added;
}

struct ConceptSelection {
  std::vector<Concept> selected;
  std::size_t head_width = 0;
};

// Picks `count` concepts from `pool` using the dictionary search over the
// given images. `targets` switches to repair mode.
inline ConceptSelection select_from_pool(const std::vector<Concept>& pool, std::size_t count, const Dataset& images,
                                         const TextEncoder& encoder,
                                         const std::optional<std::vector<std::size_t>>& targets,
                                         const DictionaryConfig& cfg) {
  std::vector<Vector> embs;
  for (const auto& c : pool) embs.push_back(encoder.encode_text(c.text));
  auto res = select_concepts(embs, count, images.images, images.targets, images.num_labels(), targets, cfg);
  ConceptSelection out;
  out.head_width = res.head_width;
  for (auto i : res.selected) out.selected.push_back(pool[i]);
  return out;
}

// Verifies every (label, active concept) pair missing from M_f. Returns the
// number of pairs sent to the LLM. Verdicts obtained before a failure are
// kept.
inline std::size_t verify_all(const ConceptBank& bank, AgentMemory& memory, LlmGateway& llm, int iteration,
                              MemoryLog* log = nullptr, std::size_t workers = 1) {
  if (bank.num_concepts() == 0) throw Error("verify_all: bank is empty");
  std::vector<std::pair<const Label*, const Concept*>> todo;
  for (const auto& l : bank.labels)
    for (const auto& c : bank.concepts)
      if (!memory.fact_verified.count({l.name, c.id})) todo.emplace_back(&l, &c);

  std::mutex mu;
  std::vector<std::optional<Verdict>> verdicts(todo.size());
  auto run_range = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < todo.size(); i += stride) {
      auto v = llm_verify_fact(llm, todo[i].second->text, todo[i].first->name);
      std::lock_guard lock(mu);
      verdicts[i] = v;
    }
  };
  auto commit = [&] {
    json payload = json::array();
    for (std::size_t i = 0; i < todo.size(); ++i) {
      if (!verdicts[i]) continue;
      memory.fact_verified[{todo[i].first->name, todo[i].second->id}] = *verdicts[i];
      payload.push_back({{"label", todo[i].first->name}, {"concept_id", todo[i].second->id},
                         {"concept", todo[i].second->text}, {"verdict", to_string(*verdicts[i])}});
    }
    if (log && !payload.empty()) log->append("verify", payload, iteration);
  };

  try {
    if (workers <= 1 || todo.size() < 2) {
      run_range(0, 1);
    } else {
      std::vector<std::future<void>> futures;
      for (std::size_t w = 0; w < std::min(workers, todo.size()); ++w)
        futures.push_back(std::async(std::launch::async, run_range, w, std::min(workers, todo.size())));
      std::exception_ptr first_error;
      for (auto& f : futures) {
        try {
          f.get();
        } catch (...) {
          if (!first_error) first_error = std::current_exception();
        }
      }
      if (first_error) std::rethrow_exception(first_error);
    }
  } catch (...) {
    commit();
    throw;
  }
  commit();
  return todo.size();
}

struct PerceptionConfig {
  ModelConfig model;
  TrainConfig train;
  double split_ratio = 0.5;
  std::uint64_t seed = 0;
};

struct Perception {
  std::vector<Matrix> feedback;  // N x M contribution tensor per validation instance
  double val_accuracy = 0.0;
  std::size_t epochs_run = 0;
};

// Trains a fresh conditional model on the instance training split and
// returns the validation score tensors. No labels are returned.
inline Perception perceive(const Dataset& instances, const ConceptBank& bank, const EditableMatrix& editable,
                           const TextEncoder& encoder, const PerceptionConfig& cfg) {
  if (bank.num_concepts() == 0) throw Error("perceive: bank is empty");
  auto [train_idx, val_idx] = stratified_split(instances, cfg.split_ratio, cfg.seed, "perceive/split");
  auto model = CocoModel::for_bank(encoder, bank, editable, cfg.model);
  auto metrics = train(model, instances.subset(train_idx), instances.subset(val_idx), cfg.train);
  Perception p{{}, metrics.val_accuracy, metrics.epochs_run};
  for (const auto& x : instances.subset(val_idx).images) p.feedback.push_back(model.contributions(x));
  return p;
}

}  // namespace cocobm
