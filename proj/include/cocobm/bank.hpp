#pragma once
// Concept bank, agent memory (generated / deleted / fact-verified lists plus
// bank history) and the editable fact mask derived from verdicts.

#include "cocobm/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cocobm {

using json = nlohmann::json;

inline constexpr std::string_view kMultiLabelSource = "multi-label";

enum class ConceptStatus { candidate, active, deleted };

inline std::string to_string(ConceptStatus s) {
  switch (s) {
    case ConceptStatus::candidate: return "candidate";
    case ConceptStatus::active: return "active";
    case ConceptStatus::deleted: return "deleted";
  }
  return "?";
}

inline ConceptStatus parse_status(const std::string& s) {
  if (s == "candidate") return ConceptStatus::candidate;
  if (s == "active") return ConceptStatus::active;
  if (s == "deleted") return ConceptStatus::deleted;
  throw Error("unknown concept status '" + s + "'");
}

// Fact-verification outcome for one (label, concept) pair.
enum class Verdict { critical, occasional, unrelated };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::critical: return "critical";
    case Verdict::occasional: return "occasional";
    case Verdict::unrelated: return "unrelated";
  }
  return "?";
}

inline Verdict parse_verdict(const std::string& s) {
  if (s == "critical") return Verdict::critical;
  if (s == "occasional") return Verdict::occasional;
  if (s == "unrelated") return Verdict::unrelated;
  throw Error("unknown verdict '" + s + "'");
}

inline std::string concept_id(std::string_view text) { return hex64(fnv1a64(normalize_text(text))); }

struct Concept {
  std::string id;
  std::string text;
  std::string source_label;
  ConceptStatus status = ConceptStatus::candidate;
  int created_iteration = 0;

  static Concept make(std::string text, std::string source_label, int iteration) {
    Concept c;
    c.id = concept_id(text);
    c.text = std::move(text);
    c.source_label = std::move(source_label);
    c.created_iteration = iteration;
    return c;
  }

  friend bool operator==(const Concept&, const Concept&) = default;
};

struct Label {
  std::string name;
  std::string superclass;  // empty when unknown

  friend bool operator==(const Label&, const Label&) = default;
};

struct ConceptBank {
  int version = 0;
  std::vector<Label> labels;
  std::vector<Concept> concepts;  // active only, stable order

  std::size_t num_labels() const { return labels.size(); }
  std::size_t num_concepts() const { return concepts.size(); }

  std::optional<std::size_t> concept_index(std::string_view id) const {
    for (std::size_t k = 0; k < concepts.size(); ++k)
      if (concepts[k].id == id) return k;
    return std::nullopt;
  }

  bool contains(std::string_view id) const { return concept_index(id).has_value(); }

  std::size_t label_index(std::string_view name) const {
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (labels[j].name == name) return j;
    throw Error("unknown label '" + std::string(name) + "'");
  }

  std::vector<std::string> label_names() const {
    std::vector<std::string> out;
    for (const auto& l : labels) out.push_back(l.name);
    return out;
  }

  std::vector<std::string> concept_texts() const {
    std::vector<std::string> out;
    for (const auto& c : concepts) out.push_back(c.text);
    return out;
  }

  friend bool operator==(const ConceptBank&, const ConceptBank&) = default;
};

using PairKey = std::pair<std::string, std::string>;  // (label name, concept id)

struct AgentMemory {
  std::vector<Concept> generated;                // M_g
  std::vector<Concept> deleted;                  // M_d
  std::map<PairKey, Verdict> fact_verified;      // M_f
  std::vector<ConceptBank> bank_history;

  const Concept* find_generated(std::string_view id) const {
    for (const auto& c : generated)
      if (c.id == id) return &c;
    return nullptr;
  }

  Concept* find_generated(std::string_view id) {
    for (auto& c : generated)
      if (c.id == id) return &c;
    return nullptr;
  }

  bool is_deleted(std::string_view id) const {
    return std::any_of(deleted.begin(), deleted.end(), [&](const Concept& c) { return c.id == id; });
  }

  std::vector<Concept> candidates() const {
    std::vector<Concept> out;
    for (const auto& c : generated)
      if (c.status == ConceptStatus::candidate) out.push_back(c);
    return out;
  }

  void record_snapshot(const ConceptBank& bank) {
    if (!bank_history.empty() && bank_history.back().version + 1 != bank.version)
      throw Error("bank history must be gap-free: last " + std::to_string(bank_history.back().version) +
                  ", new " + std::to_string(bank.version));
    bank_history.push_back(bank);
  }

  friend bool operator==(const AgentMemory&, const AgentMemory&) = default;
};

// A fresh bank at version 0 with its snapshot recorded.
inline std::pair<ConceptBank, AgentMemory> make_empty_bank(std::vector<Label> labels) {
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (l.name.empty()) throw Error("label names must be non-empty");
    if (!seen.insert(l.name).second) throw Error("duplicate label name '" + l.name + "'");
  }
  ConceptBank bank;
  bank.labels = std::move(labels);
  AgentMemory memory;
  memory.record_snapshot(bank);
  return {std::move(bank), std::move(memory)};
}

// Appends fresh candidates to M_g. Phrases whose id is already active, in
// M_d, or in M_g are skipped. The bank itself is not touched.
inline std::vector<Concept> add_concepts(const ConceptBank& bank, AgentMemory& memory,
                                         std::span<const std::string> phrases,
                                         const std::string& source_label, int iteration) {
  std::vector<Concept> added;
  for (const auto& phrase : phrases) {
    if (normalize_text(phrase).empty()) throw Error("concept phrases must be non-empty");
    Concept c = Concept::make(trim(phrase), source_label, iteration);
    if (bank.contains(c.id) || memory.is_deleted(c.id) || memory.find_generated(c.id)) continue;
    memory.generated.push_back(c);
    added.push_back(std::move(c));
  }
  return added;
}

// Moves candidates into the bank (candidate -> active). One version bump.
inline void activate_concepts(ConceptBank& bank, AgentMemory& memory, std::span<const std::string> ids) {
  if (ids.empty()) return;
  std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw Error("activate_concepts: duplicate ids");
  for (const auto& id : ids) {
    const Concept* c = memory.find_generated(id);
    if (!c) throw Error("activate_concepts: unknown concept id " + id);
    if (c->status != ConceptStatus::candidate)
      throw Error("activate_concepts: concept " + id + " is " + to_string(c->status) + ", not a candidate");
  }
  for (const auto& id : ids) {
    Concept* c = memory.find_generated(id);
    c->status = ConceptStatus::active;
    bank.concepts.push_back(*c);
  }
  ++bank.version;
  memory.record_snapshot(bank);
}

// Removes active concepts from the bank and appends them to M_d.
inline void delete_concepts(ConceptBank& bank, AgentMemory& memory, std::span<const std::string> ids) {
  if (ids.empty()) return;
  for (const auto& id : ids)
    if (!bank.contains(id)) throw Error("delete_concepts: concept id " + id + " is not active in the bank");
  std::set<std::string> doomed(ids.begin(), ids.end());
  std::vector<Concept> kept;
  for (auto& c : bank.concepts) {
    if (!doomed.count(c.id)) {
      kept.push_back(c);
      continue;
    }
    Concept d = c;
    d.status = ConceptStatus::deleted;
    if (Concept* g = memory.find_generated(c.id)) {
      g->status = ConceptStatus::deleted;
    } else {
      memory.generated.push_back(d);
    }
    memory.deleted.push_back(std::move(d));
  }
  bank.concepts = std::move(kept);
  ++bank.version;
  memory.record_snapshot(bank);
}

// N x M binary mask; entry 1 marks a factually incompatible pair.
struct EditableMatrix {
  using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Mask entries;
  std::vector<std::string> label_names;
  std::vector<std::string> concept_ids;

  std::size_t rows() const { return static_cast<std::size_t>(entries.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(entries.cols()); }
  bool masked(std::size_t j, std::size_t k) const { return entries(j, k) != 0; }

  // All-zero mask: the "without editable matrix" ablation.
  static EditableMatrix disabled(const ConceptBank& bank) {
    EditableMatrix e;
    e.entries = Mask::Zero(bank.num_labels(), bank.num_concepts());
    e.label_names = bank.label_names();
    for (const auto& c : bank.concepts) e.concept_ids.push_back(c.id);
    return e;
  }
};

inline EditableMatrix build_editable_matrix(const AgentMemory& memory, const ConceptBank& bank) {
  EditableMatrix e = EditableMatrix::disabled(bank);
  std::vector<std::string> missing;
  for (std::size_t j = 0; j < bank.num_labels(); ++j) {
    for (std::size_t k = 0; k < bank.num_concepts(); ++k) {
      auto it = memory.fact_verified.find({bank.labels[j].name, bank.concepts[k].id});
      if (it == memory.fact_verified.end()) {
        missing.push_back("(" + bank.labels[j].name + ", " + bank.concepts[k].text + ")");
        continue;
      }
      e.entries(j, k) = it->second == Verdict::unrelated ? 1 : 0;
    }
  }
  if (!missing.empty()) {
    std::string msg = "build_editable_matrix: missing verdicts for";
    for (const auto& m : missing) msg += " " + m;
    throw Error(msg);
  }
  return e;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(json& j, const Concept& c) {
  j = json{{"id", c.id},
           {"text", c.text},
           {"source_label", c.source_label},
           {"status", to_string(c.status)},
           {"created_iteration", c.created_iteration}};
}

inline void from_json(const json& j, Concept& c) {
  c.id = j.at("id").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.source_label = j.at("source_label").get<std::string>();
  c.status = parse_status(j.at("status").get<std::string>());
  c.created_iteration = j.at("created_iteration").get<int>();
  if (c.id != concept_id(c.text)) throw Error("concept id " + c.id + " does not match its text '" + c.text + "'");
}

inline void to_json(json& j, const Label& l) { j = json{{"name", l.name}, {"superclass", l.superclass}}; }

inline void from_json(const json& j, Label& l) {
  l.name = j.at("name").get<std::string>();
  l.superclass = j.value("superclass", "");
}

inline void to_json(json& j, const ConceptBank& b) {
  j = json{{"version", b.version}, {"labels", b.labels}, {"concepts", b.concepts}};
}

inline void from_json(const json& j, ConceptBank& b) {
  b.version = j.at("version").get<int>();
  b.labels = j.at("labels").get<std::vector<Label>>();
  b.concepts = j.at("concepts").get<std::vector<Concept>>();
  std::set<std::string> ids;
  for (const auto& c : b.concepts)
    if (!ids.insert(c.id).second) throw Error("bank file lists concept " + c.id + " twice");
}

inline void to_json(json& j, const AgentMemory& m) {
  json verified = json::array();
  for (const auto& [key, v] : m.fact_verified)
    verified.push_back({{"label", key.first}, {"concept_id", key.second}, {"verdict", to_string(v)}});
  j = json{{"generated", m.generated},
           {"deleted", m.deleted},
           {"fact_verified", verified},
           {"bank_history", m.bank_history}};
}

inline void from_json(const json& j, AgentMemory& m) {
  m.generated = j.at("generated").get<std::vector<Concept>>();
  m.deleted = j.at("deleted").get<std::vector<Concept>>();
  m.fact_verified.clear();
  for (const auto& e : j.at("fact_verified"))
    m.fact_verified[{e.at("label").get<std::string>(), e.at("concept_id").get<std::string>()}] =
        parse_verdict(e.at("verdict").get<std::string>());
  m.bank_history = j.at("bank_history").get<std::vector<ConceptBank>>();
  for (std::size_t i = 1; i < m.bank_history.size(); ++i)
    if (m.bank_history[i].version != m.bank_history[i - 1].version + 1)
      throw Error("memory file: bank history is not gap-free");
}

// Stable digest of the active concept set and label list, used to pin
// checkpoints to the bank they were trained against.
inline std::string bank_hash(const ConceptBank& bank) {
  json j = bank;
  return hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Persistence

namespace fs = std::filesystem;

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json_file(const fs::path& path) {
  auto text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline fs::path bank_file_name(int version) { return "bank_v" + std::to_string(version) + ".json"; }

inline fs::path save_bank(const ConceptBank& bank, const fs::path& dir) {
  auto path = dir / bank_file_name(bank.version);
  write_text_file(path, json(bank).dump(2) + "\n");
  return path;
}

inline ConceptBank load_bank(const fs::path& path) {
  if (!fs::exists(path)) throw Error("bank file " + path.string() + " does not exist; run `ground` first");
  try {
    return read_json_file(path).get<ConceptBank>();
  } catch (const json::exception& e) {
    throw Error("invalid bank file " + path.string() + ": " + e.what());
  }
}

// Highest-versioned bank_v*.json in a run directory.
inline fs::path latest_bank_file(const fs::path& dir) {
  int best = -1;
  fs::path best_path;
  if (!fs::is_directory(dir)) throw Error("run directory " + dir.string() + " does not exist");
  for (const auto& entry : fs::directory_iterator(dir)) {
    auto name = entry.path().filename().string();
    if (name.rfind("bank_v", 0) != 0 || entry.path().extension() != ".json") continue;
    int v = std::stoi(name.substr(6));
    if (v > best) {
      best = v;
      best_path = entry.path();
    }
  }
  if (best < 0) throw Error("no bank_v*.json files in " + dir.string());
  return best_path;
}

inline void save_memory(const AgentMemory& memory, const fs::path& path) {
  write_text_file(path, json(memory).dump(2) + "\n");
}

inline AgentMemory load_memory(const fs::path& path) {
  try {
    return read_json_file(path).get<AgentMemory>();
  } catch (const json::exception& e) {
    throw Error("invalid memory file " + path.string() + ": " + e.what());
  }
}

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Append-only JSON-lines log of memory operations.
class MemoryLog {
 public:
  MemoryLog() = default;
  explicit MemoryLog(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  }

  void append(std::string_view op, json payload, int iteration) {
    json rec{{"op", op}, {"payload", std::move(payload)}, {"iteration", iteration}, {"timestamp", utc_timestamp()}};
    records_.push_back(rec);
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot append to memory log " + path_.string());
    out << rec.dump() << "\n";
  }

  const std::vector<json>& records() const { return records_; }

  static std::vector<json> read(const fs::path& path) {
    std::vector<json> out;
    for (const auto& line : split_lines(read_text_file(path)))
      if (!trim(line).empty()) out.push_back(json::parse(line));
    return out;
  }

 private:
  fs::path path_;
  std::vector<json> records_;
};

}  // namespace cocobm
