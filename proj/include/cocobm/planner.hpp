#pragma once
// Feedback analysis over the validation contribution tensors (per pair,
// logit_scale * W_jk * clamped score). Each sample is normalized per column,
// then averaged into patterns that drive redundancy removal and
// insufficiency detection. Labels of the samples are never used.

#include "cocobm/bank.hpp"
#include "cocobm/core.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

namespace cocobm {

// Each column (one concept across labels) of one sample's N x M tensor:
// positives divided by the column's largest positive, negatives by the
// column's largest magnitude negative, zeros kept.
inline Matrix normalize_sample(const Matrix& scores) {
  if (!scores.allFinite()) throw Error("normalize_sample: non-finite scores");
  Matrix out = Matrix::Zero(scores.rows(), scores.cols());
  for (Eigen::Index k = 0; k < scores.cols(); ++k) {
    double max_pos = 0.0, max_neg = 0.0;
    for (Eigen::Index j = 0; j < scores.rows(); ++j) {
      double s = scores(j, k);
      if (s > 0.0) max_pos = std::max(max_pos, s);
      if (s < 0.0) max_neg = std::max(max_neg, -s);
    }
    for (Eigen::Index j = 0; j < scores.rows(); ++j) {
      double s = scores(j, k);
      if (s > 0.0) out(j, k) = s / max_pos;
      else if (s < 0.0) out(j, k) = s / max_neg;
    }
  }
  return out;
}

// N x M matrix whose column k is concept k's score pattern: the per-label
// mean of normalized scores over validation samples.
inline Matrix score_patterns(const std::vector<Matrix>& tensors) {
  if (tensors.empty()) throw Error("score_patterns: need at least one validation sample");
  Matrix acc = Matrix::Zero(tensors.front().rows(), tensors.front().cols());
  for (const auto& t : tensors) {
    if (t.rows() != acc.rows() || t.cols() != acc.cols()) throw Error("score_patterns: inconsistent tensor shapes");
    acc += normalize_sample(t);
  }
  return acc / static_cast<double>(tensors.size());
}

inline Vector score_pattern(const std::vector<Matrix>& tensors, std::size_t concept_index) {
  if (tensors.empty()) throw Error("score_pattern: need at least one validation sample");
  return score_patterns(tensors).col(static_cast<Eigen::Index>(concept_index));
}

using Activation = std::vector<std::uint8_t>;

// a_j = 1 iff mean > t_a. At t_a = 1 the strict test is unreachable, so the
// argmax label(s) with positive mean activate instead.
inline Activation activation_pattern(const Vector& pattern, double ta) {
  if (!(ta >= 0.0 && ta <= 1.0)) throw Error("activation threshold must lie in [0, 1]");
  Activation a(static_cast<std::size_t>(pattern.size()), 0);
  if (ta >= 1.0) {
    if (pattern.size() == 0) return a;
    double mx = pattern.maxCoeff();
    if (mx <= 0.0) return a;
    for (Eigen::Index j = 0; j < pattern.size(); ++j) a[static_cast<std::size_t>(j)] = pattern(j) == mx;
    return a;
  }
  for (Eigen::Index j = 0; j < pattern.size(); ++j) a[static_cast<std::size_t>(j)] = pattern(j) > ta;
  return a;
}

inline std::vector<Activation> activation_patterns(const Matrix& patterns, double ta) {
  std::vector<Activation> out;
  for (Eigen::Index k = 0; k < patterns.cols(); ++k) out.push_back(activation_pattern(patterns.col(k), ta));
  return out;
}

// P_sc o P_act
inline Vector masked_pattern(const Vector& pattern, const Activation& act) {
  Vector h = pattern;
  for (Eigen::Index j = 0; j < h.size(); ++j)
    if (!act[static_cast<std::size_t>(j)]) h(j) = 0.0;
  return h;
}

inline double total_contribution(const Vector& pattern, const Activation& act) { return masked_pattern(pattern, act).sum(); }

inline double manhattan(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().sum(); }

struct Redundancy {
  std::size_t concept_index = 0;
  std::string reason;                      // "inactive" or "duplicate-pattern"
  std::optional<std::size_t> kept_instead;
  double distance = 0.0;
};

// Inactive concepts (no label activated) are redundant. Among the rest,
// visited in descending total contribution, a concept whose activation
// pattern equals an already kept concept's and whose masked pattern lies
// within Manhattan distance t_m of it is redundant.
inline std::vector<Redundancy> find_redundant(const Matrix& patterns, const std::vector<Activation>& acts, double tm) {
  if (tm < 0.0) throw Error("redundancy threshold t_m must be non-negative");
  const auto M = static_cast<std::size_t>(patterns.cols());
  std::vector<Redundancy> out;
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < M; ++k) {
    if (std::none_of(acts[k].begin(), acts[k].end(), [](std::uint8_t a) { return a != 0; })) {
      out.push_back({k, "inactive", std::nullopt, 0.0});
    } else {
      active.push_back(k);
    }
  }
  std::vector<double> contrib(M, 0.0);
  std::vector<Vector> masked(M);
  for (auto k : active) {
    masked[k] = masked_pattern(patterns.col(static_cast<Eigen::Index>(k)), acts[k]);
    contrib[k] = masked[k].sum();
  }
  std::stable_sort(active.begin(), active.end(), [&](std::size_t a, std::size_t b) { return contrib[a] > contrib[b]; });
  std::vector<std::size_t> kept;
  for (auto k : active) {
    bool redundant = false;
    for (auto s : kept) {
      if (acts[s] != acts[k]) continue;
      double dist = manhattan(masked[k], masked[s]);
      if (dist < tm) {
        out.push_back({k, "duplicate-pattern", s, dist});
        redundant = true;
        break;
      }
    }
    if (!redundant) kept.push_back(k);
  }
  std::sort(out.begin(), out.end(), [](const Redundancy& a, const Redundancy& b) { return a.concept_index < b.concept_index; });
  return out;
}

struct Unidentifiable {
  std::size_t label_index = 0;
  std::string reason;  // "no-active-concept" or "identical-support"
};

struct Insufficiency {
  std::vector<Unidentifiable> labels;
  std::vector<std::vector<std::size_t>> confusable_groups;  // maximal, size >= 2
};

// `surviving[k]` false excludes concept k (already removed as redundant).
inline Insufficiency find_insufficient(const std::vector<Activation>& acts, const std::vector<bool>& surviving,
                                       std::size_t n_labels) {
  std::vector<std::set<std::size_t>> support(n_labels);
  for (std::size_t k = 0; k < acts.size(); ++k) {
    if (!surviving[k]) continue;
    for (std::size_t j = 0; j < n_labels; ++j)
      if (acts[k][j]) support[j].insert(k);
  }
  Insufficiency out;
  std::map<std::set<std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t j = 0; j < n_labels; ++j)
    if (!support[j].empty()) groups[support[j]].push_back(j);
  std::vector<std::uint8_t> flagged(n_labels, 0);
  for (std::size_t j = 0; j < n_labels; ++j) {
    if (support[j].empty()) {
      out.labels.push_back({j, "no-active-concept"});
    } else if (groups[support[j]].size() > 1) {
      out.labels.push_back({j, "identical-support"});
    }
  }
  for (auto& [s, members] : groups)
    if (members.size() > 1) out.confusable_groups.push_back(members);
  std::sort(out.confusable_groups.begin(), out.confusable_groups.end());
  return out;
}

struct FeedbackReport {
  int iteration = 0;
  std::vector<std::string> concept_ids;
  std::vector<std::string> concept_texts;
  std::vector<std::string> label_names;
  Matrix patterns;                   // N x M
  std::vector<Activation> activations;
  std::vector<Redundancy> redundant;
  Insufficiency insufficiency;
  bool terminate = false;

  std::vector<std::string> redundant_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : redundant) ids.push_back(concept_ids[r.concept_index]);
    return ids;
  }

  std::vector<std::size_t> unidentifiable_labels() const {
    std::vector<std::size_t> out;
    for (const auto& u : insufficiency.labels) out.push_back(u.label_index);
    return out;
  }
};

struct PlannerConfig {
  double ta = 0.1;
  double tm = 0.3;
};

inline FeedbackReport analyze_feedback(const std::vector<Matrix>& tensors, const ConceptBank& bank,
                                       const PlannerConfig& cfg, int iteration = 0) {
  FeedbackReport r;
  r.iteration = iteration;
  r.label_names = bank.label_names();
  for (const auto& c : bank.concepts) {
    r.concept_ids.push_back(c.id);
    r.concept_texts.push_back(c.text);
  }
  if (bank.num_concepts() == 0) {
    r.patterns = Matrix::Zero(static_cast<Eigen::Index>(bank.num_labels()), 0);
  } else {
    r.patterns = score_patterns(tensors);
    if (static_cast<std::size_t>(r.patterns.rows()) != bank.num_labels() ||
        static_cast<std::size_t>(r.patterns.cols()) != bank.num_concepts())
      throw Error("feedback tensors do not match the bank shape");
  }
  r.activations = activation_patterns(r.patterns, cfg.ta);
  r.redundant = find_redundant(r.patterns, r.activations, cfg.tm);
  std::vector<bool> surviving(bank.num_concepts(), true);
  for (const auto& red : r.redundant) surviving[red.concept_index] = false;
  r.insufficiency = find_insufficient(r.activations, surviving, bank.num_labels());
  r.terminate = r.redundant.empty() && r.insufficiency.labels.empty();
  return r;
}

inline void to_json(json& j, const FeedbackReport& r) {
  json concepts = json::array();
  for (std::size_t k = 0; k < r.concept_ids.size(); ++k) {
    std::vector<double> psc;
    for (Eigen::Index l = 0; l < r.patterns.rows(); ++l) psc.push_back(r.patterns(l, static_cast<Eigen::Index>(k)));
    std::vector<int> act(r.activations[k].begin(), r.activations[k].end());
    concepts.push_back({{"id", r.concept_ids[k]}, {"text", r.concept_texts[k]}, {"P_sc", psc}, {"P_act", act}});
  }
  json removals = json::array();
  for (const auto& red : r.redundant) {
    json e{{"id", r.concept_ids[red.concept_index]}, {"text", r.concept_texts[red.concept_index]}, {"reason", red.reason}};
    if (red.kept_instead) {
      e["kept_instead"] = r.concept_ids[*red.kept_instead];
      e["distance"] = red.distance;
    }
    removals.push_back(std::move(e));
  }
  json unident = json::array();
  for (const auto& u : r.insufficiency.labels)
    unident.push_back({{"label", r.label_names[u.label_index]}, {"reason", u.reason}});
  json groups = json::array();
  for (const auto& g : r.insufficiency.confusable_groups) {
    json names = json::array();
    for (auto j2 : g) names.push_back(r.label_names[j2]);
    groups.push_back(std::move(names));
  }
  j = json{{"iteration", r.iteration},     {"labels", r.label_names},  {"concepts", concepts},
           {"removals", removals},         {"unidentifiable_labels", unident},
           {"confusable_groups", groups},  {"terminate", r.terminate}};
}

}  // namespace cocobm
