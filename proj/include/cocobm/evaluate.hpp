#pragma once
// Interpretability evaluation. Per-label explanations are built from the
// clamped concept scores of the predicted label on held-out samples;
// an LLM judge then answers truthfulness MCQs (one per contribution
// threshold) and distinguishability MCQs (distractors from text and visual
// label similarity, plus random ones).

#include "cocobm/bank.hpp"
#include "cocobm/dataset.hpp"
#include "cocobm/encoders.hpp"
#include "cocobm/llm.hpp"
#include "cocobm/model.hpp"
#include "cocobm/prompts.hpp"

#include <array>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace cocobm {

inline constexpr std::array<double, 5> kTruthThresholds = {0.0, 0.25, 0.5, 0.75, 1.0};
inline constexpr std::size_t kSimilarPool = 8;
inline constexpr std::size_t kDistractors = 4;

// Zeroes non-positive entries, then min-max normalizes the row. The minimum
// is 0 whenever any entry was non-positive.
inline Vector local_normalize(const Vector& row) {
  Vector v = row.cwiseMax(0.0);
  if (v.size() == 0) return v;
  double lo = v.minCoeff(), hi = v.maxCoeff();
  if (hi <= 0.0) return Vector::Zero(v.size());
  if (hi == lo) return Vector::Ones(v.size());
  return (v.array() - lo) / (hi - lo);
}

struct ExplanationProfile {
  std::size_t label_index = 0;
  std::string label;
  std::size_t samples = 0;          // held-out samples predicted as this label
  Vector normalized;                // globally normalized score per concept
  std::vector<std::size_t> ranked;  // concepts with contribution > 0, descending
  std::vector<double> contributions;

  bool excluded() const { return samples == 0; }
  bool empty() const { return ranked.empty(); }
};

// `tensors[i]` is sample i's clamped N x M score matrix, `predictions[i]`
// its predicted label. Labels never predicted come back excluded.
inline std::vector<ExplanationProfile> extract_explanations(const std::vector<Matrix>& tensors,
                                                            const std::vector<std::size_t>& predictions,
                                                            const std::vector<std::string>& labels,
                                                            std::vector<std::string>* warnings = nullptr) {
  if (tensors.size() != predictions.size()) throw Error("extract_explanations: one prediction per sample required");
  const auto N = labels.size();
  const Eigen::Index M = tensors.empty() ? 0 : tensors.front().cols();
  std::vector<ExplanationProfile> out(N);
  std::vector<Vector> sums(N, Vector::Zero(M));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto p = predictions[i];
    if (p >= N || static_cast<std::size_t>(tensors[i].rows()) != N || tensors[i].cols() != M)
      throw Error("extract_explanations: tensor or prediction does not match the label set");
    sums[p] += local_normalize(tensors[i].row(static_cast<Eigen::Index>(p)).transpose());
    ++out[p].samples;
  }
  for (std::size_t j = 0; j < N; ++j) {
    auto& prof = out[j];
    prof.label_index = j;
    prof.label = labels[j];
    prof.normalized = Vector::Zero(M);
    if (prof.excluded()) {
      if (warnings) warnings->push_back("label '" + labels[j] + "' has no predicted samples; excluded");
      continue;
    }
    Vector mean = sums[j] / static_cast<double>(prof.samples);
    double lo = mean.size() ? mean.minCoeff() : 0.0, hi = mean.size() ? mean.maxCoeff() : 0.0;
    if (hi <= 0.0) continue;
    prof.normalized = hi == lo ? Vector::Ones(M).eval() : ((mean.array() - lo) / (hi - lo)).matrix().eval();
    for (Eigen::Index k = 0; k < M; ++k)
      if (prof.normalized(k) > 0.0) prof.ranked.push_back(static_cast<std::size_t>(k));
    std::stable_sort(prof.ranked.begin(), prof.ranked.end(), [&](std::size_t a, std::size_t b) {
      return prof.normalized(static_cast<Eigen::Index>(a)) > prof.normalized(static_cast<Eigen::Index>(b));
    });
    for (auto k : prof.ranked) prof.contributions.push_back(prof.normalized(static_cast<Eigen::Index>(k)));
  }
  return out;
}

struct Mcq {
  std::string label;
  std::string kind;  // "truthfulness" or "distinguishability"
  std::string mode;  // threshold tag or distractor mode
  std::optional<double> threshold;
  std::vector<std::string> features;
  std::vector<std::string> options;
  std::optional<std::size_t> correct;
  std::string prompt;

  std::string template_id() const {
    return std::string(kind == "truthfulness" ? prompts::kTruthfulnessId : prompts::kDistinguishabilityId);
  }

  json args() const {
    if (kind == "truthfulness") return json{{"label", label}, {"features", features}};
    return json{{"features", features}, {"options", options}};
  }
};

inline void to_json(json& j, const Mcq& m) {
  j = json{{"label", m.label},       {"kind", m.kind},        {"mode", m.mode},
           {"features", m.features}, {"options", m.options},  {"prompt", m.prompt},
           {"threshold", m.threshold ? json(*m.threshold) : json(nullptr)},
           {"correct", m.correct ? json(*m.correct) : json(nullptr)}};
}

// Concepts in the ranked profile above the threshold; at 1 the concepts
// whose contribution equals 1.
inline std::vector<std::string> features_at(const ExplanationProfile& prof, const std::vector<std::string>& concepts,
                                            double tc) {
  std::vector<std::string> out;
  for (std::size_t r = 0; r < prof.ranked.size(); ++r) {
    double s = prof.contributions[r];
    if (tc >= 1.0 ? s >= 1.0 : s > tc) out.push_back(concepts[prof.ranked[r]]);
  }
  return out;
}

inline std::string threshold_tag(double tc) {
  std::ostringstream os;
  os << "t_c=" << tc;
  return os.str();
}

inline std::vector<Mcq> truthfulness_mcqs(const ExplanationProfile& prof, const std::vector<std::string>& concepts) {
  if (prof.empty()) throw Error("truthfulness_mcqs: label '" + prof.label + "' has an empty explanation");
  std::vector<Mcq> out;
  for (double tc : kTruthThresholds) {
    Mcq m;
    m.label = prof.label;
    m.kind = "truthfulness";
    m.mode = threshold_tag(tc);
    m.threshold = tc;
    m.features = features_at(prof, concepts, tc);
    if (m.features.empty()) throw Error("truthfulness_mcqs: empty concept subset at " + m.mode);
    m.options = {"Overall aligns with facts.",
                 "Most features do not align with facts or are contradictory to each other."};
    m.prompt = prompts::render_truthfulness(m.label, m.features);
    out.push_back(std::move(m));
  }
  return out;
}

// Other labels ordered by descending cosine similarity to `j`; ties by index.
inline std::vector<std::size_t> similarity_ranking(const std::vector<Vector>& embeddings, std::size_t j) {
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    if (i != j) others.push_back(i);
  std::vector<double> sim(embeddings.size(), 0.0);
  const Vector a = embeddings[j].normalized();
  for (auto i : others) sim[i] = a.dot(embeddings[i].normalized());
  std::stable_sort(others.begin(), others.end(), [&](std::size_t x, std::size_t y) { return sim[x] > sim[y]; });
  return others;
}

struct LabelSimilarity {
  std::vector<Vector> text;    // label-name embeddings
  std::vector<Vector> visual;  // per-label mean image embeddings
};

inline LabelSimilarity label_similarity(const std::vector<Label>& labels, const TextEncoder& encoder,
                                        const Dataset& images) {
  LabelSimilarity s;
  for (const auto& l : labels) s.text.push_back(encoder.encode_text(l.name));
  auto by_label = images.indices_by_label();
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (by_label.size() <= j || by_label[j].empty())
      throw Error("label_similarity: no images for label '" + labels[j].name + "'");
    Vector mean = Vector::Zero(images.images[by_label[j].front()].size());
    for (auto i : by_label[j]) mean += images.images[i];
    s.visual.push_back(mean / static_cast<double>(by_label[j].size()));
  }
  return s;
}

inline std::vector<Mcq> distinguishability_mcqs(const ExplanationProfile& prof, const std::vector<std::string>& concepts,
                                                const std::vector<Label>& labels, const LabelSimilarity& sim,
                                                std::uint64_t seed, std::vector<std::string>* warnings = nullptr) {
  if (prof.empty()) throw Error("distinguishability_mcqs: label '" + prof.label + "' has an empty explanation");
  std::set<std::string> names;
  for (const auto& l : labels)
    if (!names.insert(l.name).second) throw Error("distinguishability_mcqs: duplicate label name '" + l.name + "'");
  if (labels.size() < 2) throw Error("distinguishability_mcqs: need at least two labels");
  if (sim.text.size() != labels.size() || sim.visual.size() != labels.size())
    throw Error("distinguishability_mcqs: similarity embeddings do not match the label set");
  const auto j = prof.label_index;
  if (labels.size() < kSimilarPool + 1 && warnings)
    warnings->push_back("only " + std::to_string(labels.size()) +
                        " labels; similar-label pools shrink and distinguishability MCQs may coincide");

  std::vector<std::string> features;
  for (auto k : prof.ranked) features.push_back(concepts[k]);

  auto make = [&](std::string mode, std::vector<std::size_t> distractors) {
    std::vector<std::size_t> opts = std::move(distractors);
    opts.push_back(j);
    Rng rng = make_rng(seed, "mcq/shuffle/" + prof.label + "/" + mode);
    seeded_shuffle(opts, rng);
    Mcq m;
    m.label = prof.label;
    m.kind = "distinguishability";
    m.mode = std::move(mode);
    m.features = features;
    for (std::size_t o = 0; o < opts.size(); ++o) {
      m.options.push_back(labels[opts[o]].name);
      if (opts[o] == j) m.correct = o;
    }
    m.prompt = prompts::render_distinguishability(m.features, labels[j].superclass, m.options);
    return m;
  };

  std::vector<Mcq> out;
  for (const auto& [modality, embs] : {std::pair{"text", &sim.text}, std::pair{"visual", &sim.visual}}) {
    auto ranked = similarity_ranking(*embs, j);
    ranked.resize(std::min(ranked.size(), kSimilarPool));
    const std::size_t n = std::min(kDistractors, ranked.size());
    out.push_back(make(std::string("hard-") + modality, {ranked.begin(), ranked.begin() + static_cast<long>(n)}));
    out.push_back(make(std::string("easy-") + modality, {ranked.end() - static_cast<long>(n), ranked.end()}));
  }
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (i != j) others.push_back(i);
  Rng rng = make_rng(seed, "mcq/random/" + prof.label);
  seeded_shuffle(others, rng);
  others.resize(std::min(others.size(), kDistractors));
  out.push_back(make("random", others));
  return out;
}

struct JudgedMcq {
  Mcq mcq;
  McqVote vote;
  bool success = false;  // aligns with facts / picked the true label
};

inline void to_json(json& j, const JudgedMcq& r) {
  json answers = json::array();
  for (const auto& a : r.vote.answers) answers.push_back(a ? json(*a) : json(nullptr));
  j = r.mcq;
  j["answers"] = answers;
  j["majority"] = r.vote.majority;
  j["success"] = r.success;
}

inline JudgedMcq judge_mcq(LlmGateway& judge, const Mcq& m, int votes = 3) {
  JudgedMcq r{m, llm_answer_mcq(judge, m.template_id(), m.args(), m.prompt, m.options.size(), votes), false};
  r.success = m.kind == "truthfulness" ? r.vote.majority == 0 : (m.correct && r.vote.majority == *m.correct);
  return r;
}

struct LabelScore {
  std::string label;
  double truthfulness = 0.0;
  double distinguishability = 0.0;
  double overall = 0.0;
  bool empty_profile = false;
};

struct InterpretabilityScore {
  double truthfulness = 0.0;
  double distinguishability = 0.0;
  double overall = 0.0;
  std::vector<LabelScore> per_label;
  std::vector<std::string> excluded;
};

inline void to_json(json& j, const LabelScore& s) {
  j = json{{"label", s.label},
           {"truthfulness", s.truthfulness},
           {"distinguishability", s.distinguishability},
           {"overall", s.overall},
           {"empty_profile", s.empty_profile}};
}

inline void to_json(json& j, const InterpretabilityScore& s) {
  j = json{{"truthfulness", s.truthfulness},
           {"distinguishability", s.distinguishability},
           {"overall", s.overall},
           {"per_label", s.per_label},
           {"excluded", s.excluded}};
}

// Labels in `empty` score 0; labels in `excluded` are left out of the
// averages. Every other label needs 5 judged MCQs of each kind.
inline InterpretabilityScore score_interpretability(const std::vector<JudgedMcq>& judged,
                                                    const std::vector<std::string>& labels,
                                                    const std::set<std::string>& empty = {},
                                                    const std::set<std::string>& excluded = {}) {
  std::map<std::string, std::pair<std::vector<bool>, std::vector<bool>>> by_label;
  for (const auto& r : judged) {
    auto& slot = by_label[r.mcq.label];
    (r.mcq.kind == "truthfulness" ? slot.first : slot.second).push_back(r.success);
  }
  InterpretabilityScore s;
  std::vector<std::string> missing;
  auto frac = [](const std::vector<bool>& v) {
    return static_cast<double>(std::count(v.begin(), v.end(), true)) / static_cast<double>(v.size());
  };
  for (const auto& l : labels) {
    if (excluded.count(l)) {
      s.excluded.push_back(l);
      continue;
    }
    LabelScore ls;
    ls.label = l;
    if (empty.count(l)) {
      ls.empty_profile = true;
    } else {
      const auto& slot = by_label[l];
      if (slot.first.size() != kTruthThresholds.size() || slot.second.size() != 5) {
        missing.push_back(l + " (" + std::to_string(slot.first.size()) + " truthfulness, " +
                          std::to_string(slot.second.size()) + " distinguishability)");
        continue;
      }
      ls.truthfulness = frac(slot.first);
      ls.distinguishability = frac(slot.second);
    }
    ls.overall = (ls.truthfulness + ls.distinguishability) / 2.0;
    s.per_label.push_back(ls);
  }
  if (!missing.empty()) throw Error("score_interpretability: missing judgments for " + prompts::join(missing, ", "));
  if (s.per_label.empty()) throw Error("score_interpretability: no label could be scored");
  for (const auto& ls : s.per_label) {
    s.truthfulness += ls.truthfulness;
    s.distinguishability += ls.distinguishability;
  }
  s.truthfulness /= static_cast<double>(s.per_label.size());
  s.distinguishability /= static_cast<double>(s.per_label.size());
  s.overall = (s.truthfulness + s.distinguishability) / 2.0;
  return s;
}

// MCQ construction for a trained model on held-out data.
struct McqSet {
  std::vector<ExplanationProfile> profiles;
  std::vector<Mcq> mcqs;
  std::set<std::string> empty;
  std::set<std::string> excluded;
  std::vector<std::string> warnings;
  double accuracy = 0.0;
};

inline McqSet build_mcqs(const CocoModel& model, const std::vector<Label>& labels, const Dataset& eval,
                         const TextEncoder& encoder, std::uint64_t seed) {
  if (eval.empty()) throw Error("build_mcqs: empty evaluation set");
  McqSet set;
  std::vector<Matrix> tensors;
  std::vector<std::size_t> preds;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    tensors.push_back(model.scores(eval.images[i]));
    preds.push_back(model.predict(eval.images[i]));
    hits += preds.back() == eval.targets[i];
  }
  set.accuracy = static_cast<double>(hits) / static_cast<double>(eval.size());
  std::vector<std::string> names;
  for (const auto& l : labels) names.push_back(l.name);
  set.profiles = extract_explanations(tensors, preds, names, &set.warnings);
  auto sim = label_similarity(labels, encoder, eval);
  bool warned = false;
  for (const auto& prof : set.profiles) {
    if (prof.excluded()) {
      set.excluded.insert(prof.label);
      continue;
    }
    if (prof.empty()) {
      set.empty.insert(prof.label);
      set.warnings.push_back("label '" + prof.label + "' has an empty explanation; scored 0");
      continue;
    }
    for (auto& m : truthfulness_mcqs(prof, model.concepts())) set.mcqs.push_back(std::move(m));
    for (auto& m : distinguishability_mcqs(prof, model.concepts(), labels, sim, seed, warned ? nullptr : &set.warnings))
      set.mcqs.push_back(std::move(m));
    warned = true;
  }
  return set;
}

struct InterpretabilityReport {
  McqSet mcqs;
  std::vector<JudgedMcq> judged;
  InterpretabilityScore score;
};

inline InterpretabilityReport evaluate_interpretability(const CocoModel& model, const std::vector<Label>& labels,
                                                        const Dataset& eval, const TextEncoder& encoder,
                                                        LlmGateway& judge, std::uint64_t seed, int votes = 3) {
  InterpretabilityReport r;
  r.mcqs = build_mcqs(model, labels, eval, encoder, seed);
  for (const auto& m : r.mcqs.mcqs) r.judged.push_back(judge_mcq(judge, m, votes));
  std::vector<std::string> names;
  for (const auto& l : labels) names.push_back(l.name);
  r.score = score_interpretability(r.judged, names, r.mcqs.empty, r.mcqs.excluded);
  return r;
}

// Plot-ready accuracy vs interpretability rows.
struct TableRow {
  std::string method;
  double accuracy = 0.0;
  InterpretabilityScore score;
};

inline std::string interpretability_table_csv(const std::vector<TableRow>& rows) {
  std::ostringstream os;
  os << "method,accuracy,truthfulness,distinguishability,interpretability\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& r : rows)
    os << r.method << ',' << r.accuracy << ',' << r.score.truthfulness << ',' << r.score.distinguishability << ','
       << r.score.overall << '\n';
  return os.str();
}

}  // namespace cocobm
