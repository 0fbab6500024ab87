#pragma once
// Planted synthetic environment. Each label owns a set of ground-truth
// concepts; an image is normalize(sum_c w_c T(c) + sigma * noise) over its
// label's planted concepts. A scripted LLM answers every template from the
// same ground truth, so the whole agent loop runs offline.

#include "cocobm/bank.hpp"
#include "cocobm/dataset.hpp"
#include "cocobm/encoders.hpp"
#include "cocobm/llm.hpp"
#include "cocobm/prompts.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace cocobm {

struct PlantedLabel {
  std::string name;
  std::vector<std::string> planted;
  std::vector<std::string> decoys;
  // What the generation prompt returns; empty means planted + decoys.
  std::vector<std::string> response;

  std::vector<std::string> generation_response() const {
    if (!response.empty()) return response;
    auto out = planted;
    out.insert(out.end(), decoys.begin(), decoys.end());
    return out;
  }
};

struct GroupResponse {
  std::vector<std::string> labels;
  std::vector<std::string> concepts;
};

struct WorldSpec {
  std::string superclass = "animal";
  std::vector<PlantedLabel> labels;
  std::vector<GroupResponse> group_responses;
  std::size_t images_per_label = 40;
  double noise = 0.0;
  double weight_lo = 0.7;
  double weight_hi = 1.0;
  SyntheticTextConfig text{256, 256, 0, 0.35, 512.0};

  std::vector<Label> bank_labels() const {
    std::vector<Label> out;
    for (const auto& l : labels) out.push_back({l.name, superclass});
    return out;
  }

  const PlantedLabel* find(std::string_view name) const {
    for (const auto& l : labels)
      if (l.name == name) return &l;
    return nullptr;
  }

  bool is_planted(std::string_view label, std::string_view concept_text) const {
    const auto* l = find(label);
    if (!l) return false;
    auto key = normalize_text(concept_text);
    return std::any_of(l->planted.begin(), l->planted.end(),
                       [&](const std::string& p) { return normalize_text(p) == key; });
  }

  // Planted for at least one label.
  bool is_planted_anywhere(std::string_view concept_text) const {
    return std::any_of(labels.begin(), labels.end(),
                       [&](const PlantedLabel& l) { return is_planted(l.name, concept_text); });
  }

  void validate() const {
    if (labels.size() < 2) throw Error("world: need at least two labels");
    std::set<std::string> names;
    for (const auto& l : labels) {
      if (trim(l.name).empty()) throw Error("world: empty label name");
      if (!names.insert(l.name).second) throw Error("world: duplicate label '" + l.name + "'");
      if (l.planted.empty()) throw Error("world: label '" + l.name + "' has no planted concepts");
    }
    if (images_per_label == 0) throw Error("world: images_per_label must be positive");
    if (noise < 0.0) throw Error("world: noise must be non-negative");
    if (!(weight_lo > 0.0 && weight_lo <= weight_hi)) throw Error("world: need 0 < weight_lo <= weight_hi");
    for (const auto& g : group_responses)
      for (const auto& n : g.labels)
        if (!names.count(n)) throw Error("world: group response names unknown label '" + n + "'");
  }
};

inline void to_json(json& j, const PlantedLabel& l) {
  j = json{{"name", l.name}, {"planted", l.planted}, {"decoys", l.decoys}};
  if (!l.response.empty()) j["response"] = l.response;
}

inline void from_json(const json& j, PlantedLabel& l) {
  l.name = j.at("name").get<std::string>();
  l.planted = j.at("planted").get<std::vector<std::string>>();
  l.decoys = j.value("decoys", std::vector<std::string>{});
  l.response = j.value("response", std::vector<std::string>{});
}

inline void to_json(json& j, const WorldSpec& w) {
  json groups = json::array();
  for (const auto& g : w.group_responses) groups.push_back({{"labels", g.labels}, {"concepts", g.concepts}});
  j = json{{"superclass", w.superclass},
           {"labels", w.labels},
           {"group_responses", groups},
           {"images_per_label", w.images_per_label},
           {"noise", w.noise},
           {"weight_range", {w.weight_lo, w.weight_hi}},
           {"text",
            {{"dim", w.text.dim},
             {"token_dim", w.text.token_dim},
             {"token_offset", w.text.token_offset},
             {"token_scale", w.text.token_scale}}}};
}

inline void from_json(const json& j, WorldSpec& w) {
  w = WorldSpec{};
  w.superclass = j.value("superclass", w.superclass);
  w.labels = j.at("labels").get<std::vector<PlantedLabel>>();
  if (j.contains("group_responses"))
    for (const auto& g : j.at("group_responses"))
      w.group_responses.push_back(
          {g.at("labels").get<std::vector<std::string>>(), g.at("concepts").get<std::vector<std::string>>()});
  w.images_per_label = j.value("images_per_label", w.images_per_label);
  w.noise = j.value("noise", w.noise);
  if (j.contains("weight_range")) {
    w.weight_lo = j.at("weight_range").at(0).get<double>();
    w.weight_hi = j.at("weight_range").at(1).get<double>();
  }
  if (j.contains("text")) {
    const auto& t = j.at("text");
    w.text.dim = t.value("dim", w.text.dim);
    w.text.token_dim = t.value("token_dim", w.text.token_dim);
    w.text.token_offset = t.value("token_offset", w.text.token_offset);
    w.text.token_scale = t.value("token_scale", w.text.token_scale);
  }
  w.validate();
}

// Six animals, four planted concepts each. husky and wolf share two planted
// concepts and their own prompts return only those (plus decoys), so the
// pair stays confusable until the group prompt supplies the rest.
inline WorldSpec planted_world(double noise = 0.0) {
  WorldSpec w;
  w.noise = noise;
  w.labels = {
      {"cardinal",
       {"crimson pointed crest", "stout conical beak", "black facial mask", "scarlet body plumage"},
       {"vintage leather saddlebag", "neon billboard signage"},
       {}},
      {"flamingo",
       {"pink curved neck", "slender stilted legs", "downturned banded bill", "rosy feathered wings"},
       {"ceramic kitchen tiles", "plastic garden hose"},
       {}},
      {"penguin",
       {"tuxedo countershaded coat", "flipper shaped forelimbs", "upright waddling posture", "icy rocky shoreline"},
       {"marble courthouse columns", "rusty bicycle chain"},
       {}},
      {"toucan",
       {"oversized rainbow mandible", "yellow throat bib", "tropical canopy perch", "glossy ebony back"},
       {"folded paper origami", "digital wristwatch display"},
       {}},
      {"husky",
       {"thick double undercoat", "erect triangular ears", "piercing pale eyes", "curled plumed tail"},
       {"striped beach umbrella", "wooden picket fence"},
       {"thick double undercoat", "erect triangular ears", "striped beach umbrella", "wooden picket fence"}},
      {"wolf",
       {"thick double undercoat", "erect triangular ears", "grizzled grey pelt", "long narrow muzzle"},
       {"copper tea kettle", "velvet theater curtain"},
       {"thick double undercoat", "erect triangular ears", "copper tea kettle", "velvet theater curtain"}},
  };
  w.group_responses = {
      {{"husky", "wolf"}, {"piercing pale eyes", "curled plumed tail", "grizzled grey pelt", "long narrow muzzle"}}};
  return w;
}

inline SyntheticTextConfig world_text_config(const WorldSpec& w, std::uint64_t seed) {
  SyntheticTextConfig t = w.text;
  t.seed = substream_seed(seed, "text");
  return t;
}

// Per-label images; ids are "<label>/<index>".
inline Dataset generate_world_images(const WorldSpec& w, const TextEncoder& encoder, std::uint64_t seed) {
  w.validate();
  Dataset data;
  data.labels = w.bank_labels();
  const auto d = static_cast<Eigen::Index>(encoder.dim());
  for (std::size_t y = 0; y < w.labels.size(); ++y) {
    const auto& l = w.labels[y];
    std::vector<Vector> planted;
    for (const auto& c : l.planted) planted.push_back(encoder.encode_text(c));
    Rng rng = make_rng(seed, "world/images/" + l.name);
    Gaussian g(rng);
    for (std::size_t i = 0; i < w.images_per_label; ++i) {
      Vector x = Vector::Zero(d);
      for (const auto& p : planted) x += (w.weight_lo + (w.weight_hi - w.weight_lo) * uniform01(rng)) * p;
      if (w.noise > 0.0)
        for (Eigen::Index k = 0; k < d; ++k) x(k) += w.noise * g();
      char id[32];
      std::snprintf(id, sizeof id, "/%04zu", i);
      data.add(l.name + id, normalized(x), y);
    }
  }
  return data;
}

// Scripted LLM that answers from the planted truth.
//   generate        -> the label's generation response
//   generate_group  -> the matching group response, else each label's planted concepts
//   verify          -> A when planted for the label, else C
//   truthfulness    -> A when at least half of the features are planted for the label
//   distinguishability -> the option sharing most features with its planted set (lowest index on ties)
inline ScriptedLlm::Responder world_responder(WorldSpec w) {
  return [w = std::move(w)](const LlmRequest& req) -> std::string {
    const auto& a = req.args;
    auto lines = [](const std::vector<std::string>& v) { return prompts::join(v, "\n"); };
    if (req.template_id == prompts::kGenerateId) {
      const auto* l = w.find(a.at("label").get<std::string>());
      return l ? lines(l->generation_response()) : std::string();
    }
    if (req.template_id == prompts::kGenerateGroupId) {
      auto names = a.at("labels").get<std::vector<std::string>>();
      std::set<std::string> want(names.begin(), names.end());
      for (const auto& g : w.group_responses)
        if (std::set<std::string>(g.labels.begin(), g.labels.end()) == want) return lines(g.concepts);
      std::vector<std::string> out;
      for (const auto& n : names)
        if (const auto* l = w.find(n)) out.insert(out.end(), l->planted.begin(), l->planted.end());
      return lines(out);
    }
    if (req.template_id == prompts::kVerifyId)
      return w.is_planted(a.at("label").get<std::string>(), a.at("concept").get<std::string>()) ? "A" : "C";
    if (req.template_id == prompts::kTruthfulnessId) {
      auto label = a.at("label").get<std::string>();
      auto features = a.at("features").get<std::vector<std::string>>();
      std::size_t hits = 0;
      for (const auto& f : features) hits += w.is_planted(label, f);
      return !features.empty() && 2 * hits >= features.size() ? "A" : "B";
    }
    if (req.template_id == prompts::kDistinguishabilityId) {
      auto features = a.at("features").get<std::vector<std::string>>();
      auto options = a.at("options").get<std::vector<std::string>>();
      std::size_t best = 0, best_hits = 0;
      for (std::size_t i = 0; i < options.size(); ++i) {
        std::size_t hits = 0;
        for (const auto& f : features) hits += w.is_planted(options[i], f);
        if (hits > best_hits) {
          best_hits = hits;
          best = i;
        }
      }
      return std::string(1, prompts::option_letter(best));
    }
    return "unsupported template";
  };
}

}  // namespace cocobm
