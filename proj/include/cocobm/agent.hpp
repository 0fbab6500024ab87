#pragma once
// The concept agent's control loop.
//
// Initialization selects the fixed instances, prompts for every label,
// selects one concept per prompt label and verifies all pairs. Each
// iteration then perceives (trains on the instances), analyses the
// validation feedback, deletes redundant concepts and, when some labels are
// unidentifiable, generates and selects repair concepts before verifying
// the new pairs. It stops once the feedback shows no redundancy and no
// unidentifiable label, or reports "capped" after max_iterations.

#include "cocobm/actions.hpp"
#include "cocobm/planner.hpp"

#include <functional>
#include <set>
#include <string>
#include <vector>

namespace cocobm {

struct AgentConfig {
  PlannerConfig planner;
  std::size_t beta = 16;
  std::size_t k_per_selection = 0;  // 0: one concept per prompt label
  int max_iterations = 10;
  PerceptionConfig perception;
  DictionaryConfig selection;
  bool use_editable_matrix = true;
  std::size_t verify_workers = 1;
  std::uint64_t seed = 0;
};

enum class AgentStatus { running, converged, capped };

inline std::string to_string(AgentStatus s) {
  switch (s) {
    case AgentStatus::running: return "running";
    case AgentStatus::converged: return "converged";
    case AgentStatus::capped: return "did-not-converge";
  }
  return "?";
}

struct SelectionRecord {
  std::string mode;  // "initial" or "repair"
  std::vector<std::string> targets;
  std::size_t head_width = 0;
  std::size_t pool_size = 0;
  std::size_t requested = 0;
  std::vector<std::string> selected_ids;
};

inline void to_json(json& j, const SelectionRecord& s) {
  j = json{{"mode", s.mode},           {"targets", s.targets},     {"head_width", s.head_width},
           {"pool_size", s.pool_size}, {"requested", s.requested}, {"selected", s.selected_ids}};
}

struct IterationRecord {
  int iteration = 0;
  FeedbackReport report;
  std::vector<std::string> removed_ids;
  std::vector<std::string> generated_ids;
  std::vector<SelectionRecord> selections;
  std::size_t verified_pairs = 0;
  int bank_version = 0;
  double val_accuracy = 0.0;
};

inline void to_json(json& j, const IterationRecord& r) {
  j = json{{"iteration", r.iteration},           {"feedback", r.report},
           {"removed", r.removed_ids},           {"generated", r.generated_ids},
           {"selections", r.selections},         {"verified_pairs", r.verified_pairs},
           {"bank_version", r.bank_version},     {"instance_val_accuracy", r.val_accuracy}};
}

struct AgentState {
  ConceptBank bank;
  AgentMemory memory;
  InstanceSet instances;
  int iteration = 0;
  AgentStatus status = AgentStatus::running;
  SelectionRecord initial_selection;
  std::size_t initial_verified_pairs = 0;
  std::vector<IterationRecord> history;
};

class ConceptAgent {
 public:
  ConceptAgent(const TextEncoder& encoder, LlmGateway& llm, const Dataset& train_pool, AgentConfig cfg,
               MemoryLog* log = nullptr)
      : encoder_(encoder), llm_(llm), pool_(train_pool), cfg_(std::move(cfg)), log_(log) {
    if (cfg_.max_iterations < 1) throw Error("max_iterations must be at least 1");
  }

  const AgentConfig& config() const { return cfg_; }

  // Iteration 0: instances, generation for every label, selection, verification.
  AgentState initialize() const {
    AgentState st;
    std::tie(st.bank, st.memory) = make_empty_bank(pool_.labels);
    st.instances = select_instances(pool_, cfg_.beta, cfg_.seed);
    Dataset inst = instance_data(st);
    for (const auto& l : st.bank.labels) generate_for_label(st.bank, st.memory, llm_, l.name, 0, log_);
    auto pool = st.memory.candidates();
    if (pool.empty()) throw Error("initialization produced no candidate concepts");
    std::size_t want = cfg_.k_per_selection ? cfg_.k_per_selection : st.bank.num_labels();
    st.initial_selection = select_and_activate(st, pool, std::min(want, pool.size()), inst, std::nullopt, "initial", {}, 0);
    st.initial_verified_pairs = verify_all(st.bank, st.memory, llm_, 0, log_, cfg_.verify_workers);
    return st;
  }

  EditableMatrix editable_for(const AgentState& st) const {
    return cfg_.use_editable_matrix ? build_editable_matrix(st.memory, st.bank) : EditableMatrix::disabled(st.bank);
  }

  Dataset instance_data(const AgentState& st) const { return pool_.subset(st.instances.indices()); }

  void run_iteration(AgentState& st) const {
    if (st.status != AgentStatus::running) return;
    const int it = ++st.iteration;
    IterationRecord rec;
    rec.iteration = it;
    Dataset inst = instance_data(st);

    if (st.bank.num_concepts() == 0) {
      // Nothing to perceive with: every label is unsupported.
      rec.report.iteration = it;
      rec.report.label_names = st.bank.label_names();
      rec.report.patterns = Matrix::Zero(static_cast<Eigen::Index>(st.bank.num_labels()), 0);
      for (std::size_t j = 0; j < st.bank.num_labels(); ++j)
        rec.report.insufficiency.labels.push_back({j, "no-active-concept"});
    } else {
      auto perception = perceive(inst, st.bank, editable_for(st), encoder_, perception_config(it));
      rec.val_accuracy = perception.val_accuracy;
      rec.report = analyze_feedback(perception.feedback, st.bank, cfg_.planner, it);
    }

    rec.removed_ids = rec.report.redundant_ids();
    if (!rec.removed_ids.empty()) {
      json payload = json::array();
      for (const auto& r : rec.report.redundant)
        payload.push_back({{"id", rec.report.concept_ids[r.concept_index]},
                           {"text", rec.report.concept_texts[r.concept_index]},
                           {"reason", r.reason}});
      delete_concepts(st.bank, st.memory, rec.removed_ids);
      if (log_) log_->append("delete", payload, it);
    }

    if (rec.report.terminate) {
      st.status = AgentStatus::converged;
      rec.bank_version = st.bank.version;
      st.history.push_back(std::move(rec));
      return;
    }

    const auto& insuff = rec.report.insufficiency;
    if (!insuff.labels.empty()) {
      std::set<std::size_t> grouped;
      for (const auto& g : insuff.confusable_groups) grouped.insert(g.begin(), g.end());
      std::vector<std::size_t> targets;
      std::set<std::string> sources;
      for (const auto& u : insuff.labels) {
        targets.push_back(u.label_index);
        sources.insert(st.bank.labels[u.label_index].name);
        if (grouped.count(u.label_index)) continue;
        for (const auto& c : generate_for_label(st.bank, st.memory, llm_, st.bank.labels[u.label_index].name, it, log_))
          rec.generated_ids.push_back(c.id);
      }
      for (const auto& g : insuff.confusable_groups) {
        std::vector<std::string> names;
        for (auto j : g) names.push_back(st.bank.labels[j].name);
        for (const auto& c : generate_for_confusable(st.bank, st.memory, llm_, names, it, log_))
          rec.generated_ids.push_back(c.id);
        sources.insert(std::string(kMultiLabelSource));
      }
      std::vector<Concept> pool;
      for (const auto& c : st.memory.candidates())
        if (sources.count(c.source_label)) pool.push_back(c);
      std::size_t want = cfg_.k_per_selection ? cfg_.k_per_selection : targets.size();
      std::vector<std::string> target_names;
      for (auto j : targets) target_names.push_back(st.bank.labels[j].name);
      if (pool.empty()) {
        rec.selections.push_back({"repair", target_names, targets.size() + 1, 0, want, {}});
      } else {
        rec.selections.push_back(
            select_and_activate(st, pool, std::min(want, pool.size()), inst, targets, "repair", target_names, it));
        rec.verified_pairs = verify_all(st.bank, st.memory, llm_, it, log_, cfg_.verify_workers);
      }
    }

    rec.bank_version = st.bank.version;
    st.history.push_back(std::move(rec));
    if (st.iteration >= cfg_.max_iterations) st.status = AgentStatus::capped;
  }

  AgentState run() const {
    AgentState st = initialize();
    run_until_done(st);
    return st;
  }

  void run_until_done(AgentState& st) const {
    while (st.status == AgentStatus::running) run_iteration(st);
  }

 private:
  PerceptionConfig perception_config(int iteration) const {
    PerceptionConfig p = cfg_.perception;
    // The split is shared by all iterations; model init and batches vary.
    p.seed = cfg_.seed;
    p.model.seed = substream_seed(cfg_.seed, "perceive/model/" + std::to_string(iteration));
    p.train.seed = substream_seed(cfg_.seed, "perceive/train/" + std::to_string(iteration));
    return p;
  }

  SelectionRecord select_and_activate(AgentState& st, const std::vector<Concept>& pool, std::size_t count,
                                      const Dataset& inst, const std::optional<std::vector<std::size_t>>& targets,
                                      std::string mode, std::vector<std::string> target_names, int iteration) const {
    DictionaryConfig dc = cfg_.selection;
    dc.seed = substream_seed(cfg_.seed, "select/" + std::to_string(iteration));
    auto sel = select_from_pool(pool, count, inst, encoder_, targets, dc);
    SelectionRecord rec{std::move(mode), std::move(target_names), sel.head_width, pool.size(), count, {}};
    for (const auto& c : sel.selected) rec.selected_ids.push_back(c.id);
    activate_concepts(st.bank, st.memory, rec.selected_ids);
    if (log_) log_->append("add", {{"stage", "select"}, {"selection", rec}, {"bank_version", st.bank.version}}, iteration);
    return rec;
  }

  const TextEncoder& encoder_;
  LlmGateway& llm_;
  const Dataset& pool_;
  AgentConfig cfg_;
  MemoryLog* log_;
};

}  // namespace cocobm
