#pragma once
// Prompt templates for concept generation, fact verification and the two
// interpretability judgments. Slots are the bracketed placeholders; the
// surrounding text is rendered verbatim.

#include "cocobm/core.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace cocobm::prompts {

inline constexpr std::string_view kGenerateId = "generate";
inline constexpr std::string_view kGenerateGroupId = "generate_group";
inline constexpr std::string_view kVerifyId = "verify";
inline constexpr std::string_view kTruthfulnessId = "truthfulness";
inline constexpr std::string_view kDistinguishabilityId = "distinguishability";

inline constexpr std::string_view kGenerate =
    "What are the helpful visual features to distinguish \"[class name]\" from other \"[superclass]\"?\n"
    "\n"
    "Each feature should be a longish modifier noun phrase. The noun should represent a single visually "
    "observable aspect, depicting one characteristic or attribute. The modifiers should be rich and specific, "
    "highlighting the unique presentation of this aspect and avoiding vague terms like \"distinctive\" or "
    "\"signature\".\n"
    "\n"
    "Do not use the word \"[class name]\" or any specific instance names from \"[class name]\". \n"
    "\n"
    "List each feature on a new line with no additional content or numbering.\n"
    "\n"
    "Note: Please ensure that your listed features do not overlap with the following features:";

inline constexpr std::string_view kGenerateGroup =
    "What are the helpful visual features to distinguish between \"[class name list]\"?\n"
    "\n"
    "Each feature should be a longish modifier noun phrase. The noun should represent a single visually "
    "observable aspect, depicting one characteristic or attribute. The modifiers should be rich and specific, "
    "highlighting the unique presentation of this aspect and avoiding vague terms like \"distinctive\" or "
    "\"signature\".\n"
    "\n"
    "List each feature on a new line with no additional content or numbering.\n"
    "\n"
    "Note: Please ensure that your listed features do not overlap with the following features:";

inline constexpr std::string_view kVerify =
    "Is the phrase \"[concept]\" a feature that helps identify the presence of \"[class name]\" in photos?\n"
    "\n"
    "Select the most appropriate option without providing an explanation.\n"
    "\n"
    "A. This feature is critical and highly prominent.\n"
    "B. This feature may occasionally appear, but it is typically not significant.\n"
    "C. This feature is unrelated to the described object and unhelpful for identification.";

inline constexpr std::string_view kTruthfulness =
    "I have a batch of images of \"[class name]\". Someone has summarized several critical features, ranked by "
    "prominence (with the most prominent features listed first) for recognizing \"[class name]\":\n"
    "\"[feature list]\"\n"
    "\n"
    "Please evaluate whether the summarized features align with objective facts or real-world knowledge? Select "
    "the most appropriate option without providing an explanation.\n"
    "\n"
    "A. Overall aligns with facts.\n"
    "B. Most features do not align with facts or are contradictory to each other.";

inline constexpr std::string_view kDistinguishability =
    "I have a batch of images characterized by the following features, ranked by prominence (with the most "
    "prominent features listed first):\n"
    "\"[feature list]\"\n"
    "\n"
    "Which of the following \"[superclass]\" is most likely to appear in these images? Please select the most "
    "appropriate answer without providing an explanation.\n"
    "\n"
    "[options]";

// Used for [superclass] when a label has none.
inline constexpr std::string_view kDefaultSuperclass = "objects";

inline std::string replace_all(std::string text, std::string_view slot, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(slot, pos)) != std::string::npos) {
    text.replace(pos, slot.size(), value);
    pos += value.size();
  }
  return text;
}

inline std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

inline std::string with_exclusions(std::string text, const std::vector<std::string>& exclusions) {
  for (const auto& e : exclusions) text += "\n" + e;
  return text;
}

inline std::string render_generate(std::string_view label, std::string_view superclass,
                                   const std::vector<std::string>& exclusions) {
  auto text = replace_all(std::string(kGenerate), "[class name]", label);
  text = replace_all(std::move(text), "[superclass]", superclass.empty() ? kDefaultSuperclass : superclass);
  return with_exclusions(std::move(text), exclusions);
}

inline std::string render_generate_group(const std::vector<std::string>& labels,
                                         const std::vector<std::string>& exclusions) {
  auto text = replace_all(std::string(kGenerateGroup), "[class name list]", join(labels, ", "));
  return with_exclusions(std::move(text), exclusions);
}

inline std::string render_verify(std::string_view concept_text, std::string_view label) {
  auto text = replace_all(std::string(kVerify), "[concept]", concept_text);
  return replace_all(std::move(text), "[class name]", label);
}

inline std::string render_truthfulness(std::string_view label, const std::vector<std::string>& features) {
  auto text = replace_all(std::string(kTruthfulness), "[class name]", label);
  return replace_all(std::move(text), "[feature list]", join(features, ", "));
}

inline char option_letter(std::size_t i) { return static_cast<char>('A' + i); }

inline std::string render_distinguishability(const std::vector<std::string>& features, std::string_view superclass,
                                             const std::vector<std::string>& options) {
  if (options.empty() || options.size() > 5) throw Error("distinguishability MCQs take 1 to 5 options");
  std::string line;
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (i) line += "; ";
    line += option_letter(i);
    line += ". " + options[i];
  }
  auto text = replace_all(std::string(kDistinguishability), "[feature list]", join(features, ", "));
  text = replace_all(std::move(text), "[superclass]", superclass.empty() ? kDefaultSuperclass : superclass);
  return replace_all(std::move(text), "[options]", line);
}

}  // namespace cocobm::prompts
