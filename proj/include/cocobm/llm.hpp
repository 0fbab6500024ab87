#pragma once
// LLM access: a client interface, a scripted client for offline runs, and a
// gateway that adds caching, retries with format validation, rate limiting
// and transcripts. The typed operations (concept generation, fact
// verification, majority-vote MCQ answering) sit on top of the gateway.

#include "cocobm/bank.hpp"
#include "cocobm/prompts.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace cocobm {

struct LlmRequest {
  std::string template_id;
  json args;            // filled slot values, structured
  std::string prompt;   // rendered text
  double temperature = 0.0;
  int sample = 0;       // independent-sample index for voting
  int attempt = 0;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const LlmRequest& request) = 0;
};

// Answers from a callback; counts calls.
class ScriptedLlm final : public LlmClient {
 public:
  using Responder = std::function<std::string(const LlmRequest&)>;

  explicit ScriptedLlm(Responder responder) : responder_(std::move(responder)) {}

  std::string complete(const LlmRequest& request) override {
    ++calls_;
    return responder_(request);
  }

  std::size_t calls() const { return calls_; }

 private:
  Responder responder_;
  std::atomic<std::size_t> calls_{0};
};

// One prompt/response pair as recorded in transcripts.
struct LlmExchange {
  std::string template_id;
  json args;
  std::string prompt;
  std::string raw_response;
  std::optional<json> parsed;
  int retries_used = 0;
  bool cached = false;
};

inline void to_json(json& j, const LlmExchange& e) {
  j = json{{"template", e.template_id}, {"args", e.args},     {"prompt", e.prompt},
           {"response", e.raw_response}, {"parsed", e.parsed ? *e.parsed : json(nullptr)},
           {"retries", e.retries_used}, {"cached", e.cached}};
}

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{0};  // doubled after each failed attempt
};

struct GatewayOptions {
  RetryPolicy retry;
  std::chrono::milliseconds min_interval{0};  // rate limit between client calls
  double generation_temperature = 0.7;
  double judge_temperature = 0.0;
  std::filesystem::path transcript_path;      // JSON lines; empty disables
};

// Raised when a response still fails validation after all retries.
class LlmFormatError : public Error {
 public:
  LlmFormatError(const std::string& what, std::string last_response)
      : Error(what), last_response_(std::move(last_response)) {}
  const std::string& last_response() const { return last_response_; }

 private:
  std::string last_response_;
};

class LlmGateway {
 public:
  explicit LlmGateway(LlmClient& client, GatewayOptions options = {})
      : client_(client), options_(std::move(options)) {}

  const GatewayOptions& options() const { return options_; }

  // Sends the request, validating with `parse` (which returns nullopt on a
  // malformed response). Valid responses are cached per
  // (template, args, sample); malformed ones are retried.
  template <typename T, typename Parse>
  T request(LlmRequest req, Parse&& parse) {
    const std::string key = req.template_id + '\x1f' + req.args.dump() + '\x1f' + std::to_string(req.sample);
    {
      std::lock_guard lock(cache_mutex_);
      auto it = cache_.find(key);
      if (it != cache_.end()) {
        std::optional<T> hit = parse(it->second);
        if (hit) {
          ++cache_hits_;
          record({req.template_id, req.args, req.prompt, it->second, to_json_value(*hit), 0, true});
          return *hit;
        }
      }
    }
    std::string last;
    auto delay = options_.retry.base_delay;
    for (int attempt = 0; attempt < std::max(1, options_.retry.attempts); ++attempt) {
      req.attempt = attempt;
      last = call_client(req);
      std::optional<T> parsed = parse(last);
      if (parsed) {
        {
          std::lock_guard lock(cache_mutex_);
          cache_.emplace(key, last);
        }
        record({req.template_id, req.args, req.prompt, last, to_json_value(*parsed), attempt, false});
        return *parsed;
      }
      record({req.template_id, req.args, req.prompt, last, std::nullopt, attempt, false});
      if (delay.count() > 0 && attempt + 1 < options_.retry.attempts) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
    throw LlmFormatError("LLM response for template '" + req.template_id + "' failed validation after " +
                             std::to_string(options_.retry.attempts) + " attempts; last response: \"" + last + "\"",
                         last);
  }

  std::size_t client_calls() const { return client_calls_; }
  std::size_t cache_hits() const { return cache_hits_; }

  std::vector<LlmExchange> transcript() const {
    std::lock_guard lock(transcript_mutex_);
    return transcript_;
  }

 private:
  template <typename T>
  static json to_json_value(const T& v) {
    if constexpr (std::is_same_v<T, Verdict>) {
      return to_string(v);
    } else {
      return json(v);
    }
  }

  std::string call_client(const LlmRequest& req) {
    std::lock_guard lock(client_mutex_);
    if (options_.min_interval.count() > 0 && last_call_) {
      auto next = *last_call_ + options_.min_interval;
      auto now = std::chrono::steady_clock::now();
      if (now < next) std::this_thread::sleep_for(next - now);
    }
    last_call_ = std::chrono::steady_clock::now();
    ++client_calls_;
    return client_.complete(req);
  }

  void record(LlmExchange exchange) {
    std::lock_guard lock(transcript_mutex_);
    if (!options_.transcript_path.empty()) {
      std::ofstream out(options_.transcript_path, std::ios::app);
      if (out) out << json(exchange).dump() << "\n";
    }
    transcript_.push_back(std::move(exchange));
  }

  LlmClient& client_;
  GatewayOptions options_;
  std::mutex client_mutex_;
  std::optional<std::chrono::steady_clock::time_point> last_call_;
  mutable std::mutex cache_mutex_;
  std::map<std::string, std::string> cache_;
  mutable std::mutex transcript_mutex_;
  std::vector<LlmExchange> transcript_;
  std::atomic<std::size_t> client_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

// ---------------------------------------------------------------------------
// Response parsing

// Newline-separated phrases; strips bullets, numbering and wrapping quotes.
inline std::vector<std::string> parse_phrase_list(std::string_view response) {
  static const std::regex bullet(R"(^\s*(?:[-*•]+|\d+[.)]|\(\d+\))\s*)");
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto line : split_lines(response)) {
    line = std::regex_replace(line, bullet, "");
    line = trim(line);
    while (line.size() >= 2 && (line.front() == '"' || line.front() == '\'') && line.back() == line.front())
      line = trim(line.substr(1, line.size() - 2));
    if (!line.empty() && line.back() == '.') line.pop_back();
    if (normalize_text(line).empty()) continue;
    if (!seen.insert(normalize_text(line)).second) continue;
    out.push_back(line);
  }
  return out;
}

// Leading option letter among the first `num_options`, e.g. "B", "(b)",
// "C. unrelated", "Answer: A".
inline std::optional<std::size_t> parse_option_letter(std::string_view response, std::size_t num_options) {
  std::string text = trim(response);
  static const std::regex answer_prefix(R"(^(?:answer|option)\s*[:\-]?\s*)", std::regex::icase);
  text = std::regex_replace(text, answer_prefix, "");
  std::size_t i = 0;
  while (i < text.size() && (text[i] == '(' || text[i] == '[' || text[i] == '*')) ++i;
  if (i >= text.size()) return std::nullopt;
  char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i])));
  if (c < 'A' || c >= static_cast<char>('A' + num_options)) return std::nullopt;
  if (i + 1 < text.size() && std::isalpha(static_cast<unsigned char>(text[i + 1]))) return std::nullopt;
  return static_cast<std::size_t>(c - 'A');
}

// ---------------------------------------------------------------------------
// Typed operations

inline std::vector<std::string> filter_exclusions(std::vector<std::string> phrases,
                                                  const std::vector<std::string>& exclusions) {
  std::set<std::string> banned;
  for (const auto& e : exclusions) banned.insert(normalize_text(e));
  std::erase_if(phrases, [&](const std::string& p) { return banned.count(normalize_text(p)) > 0; });
  return phrases;
}

inline std::vector<std::string> llm_generate_concepts(LlmGateway& llm, const std::string& label,
                                                      const std::string& superclass,
                                                      const std::vector<std::string>& exclusions) {
  if (trim(label).empty()) throw Error("llm_generate_concepts: label must be non-empty");
  LlmRequest req;
  req.template_id = prompts::kGenerateId;
  req.args = {{"label", label}, {"superclass", superclass}, {"exclusions", exclusions}};
  req.prompt = prompts::render_generate(label, superclass, exclusions);
  req.temperature = llm.options().generation_temperature;
  auto phrases = llm.request<std::vector<std::string>>(req, [](const std::string& r) {
    auto p = parse_phrase_list(r);
    return p.empty() ? std::nullopt : std::optional(p);
  });
  return filter_exclusions(std::move(phrases), exclusions);
}

inline std::vector<std::string> llm_generate_concepts_for_group(LlmGateway& llm, const std::vector<std::string>& labels,
                                                                const std::vector<std::string>& exclusions) {
  if (labels.size() < 2) throw Error("llm_generate_concepts_for_group: need at least two labels");
  LlmRequest req;
  req.template_id = prompts::kGenerateGroupId;
  req.args = {{"labels", labels}, {"exclusions", exclusions}};
  req.prompt = prompts::render_generate_group(labels, exclusions);
  req.temperature = llm.options().generation_temperature;
  auto phrases = llm.request<std::vector<std::string>>(req, [](const std::string& r) {
    auto p = parse_phrase_list(r);
    return p.empty() ? std::nullopt : std::optional(p);
  });
  return filter_exclusions(std::move(phrases), exclusions);
}

inline Verdict llm_verify_fact(LlmGateway& llm, const std::string& concept_text, const std::string& label) {
  if (trim(concept_text).empty() || trim(label).empty())
    throw Error("llm_verify_fact: concept and label must be non-empty");
  LlmRequest req;
  req.template_id = prompts::kVerifyId;
  req.args = {{"concept", concept_text}, {"label", label}};
  req.prompt = prompts::render_verify(concept_text, label);
  req.temperature = llm.options().judge_temperature;
  return llm.request<Verdict>(req, [](const std::string& r) -> std::optional<Verdict> {
    auto idx = parse_option_letter(r, 3);
    if (!idx) return std::nullopt;
    static constexpr Verdict order[] = {Verdict::critical, Verdict::occasional, Verdict::unrelated};
    return order[*idx];
  });
}

struct McqVote {
  std::vector<std::optional<std::size_t>> answers;  // one per sample
  std::size_t majority = 0;
};

// Lowest index wins among tied counts.
inline std::size_t majority_vote(const std::vector<std::optional<std::size_t>>& answers, std::size_t num_options) {
  std::vector<int> counts(num_options, 0);
  bool any = false;
  for (const auto& a : answers)
    if (a && *a < num_options) {
      ++counts[*a];
      any = true;
    }
  if (!any) throw Error("majority_vote: no parseable answers");
  std::size_t best = 0;
  for (std::size_t i = 1; i < num_options; ++i)
    if (counts[i] > counts[best]) best = i;
  return best;
}

// Asks `votes` independent samples and returns the majority answer.
inline McqVote llm_answer_mcq(LlmGateway& llm, std::string template_id, json args, const std::string& prompt,
                              std::size_t num_options, int votes = 3) {
  if (num_options < 2 || num_options > 5) throw Error("llm_answer_mcq: MCQs take 2 to 5 options");
  McqVote vote;
  for (int s = 0; s < votes; ++s) {
    LlmRequest req;
    req.template_id = template_id;
    req.args = args;
    req.prompt = prompt;
    req.temperature = llm.options().judge_temperature;
    req.sample = s;
    try {
      vote.answers.push_back(llm.request<std::size_t>(
          req, [num_options](const std::string& r) { return parse_option_letter(r, num_options); }));
    } catch (const LlmFormatError&) {
      vote.answers.push_back(std::nullopt);
    }
  }
  bool any = std::any_of(vote.answers.begin(), vote.answers.end(), [](const auto& a) { return a.has_value(); });
  if (!any) throw Error("llm_answer_mcq: all " + std::to_string(votes) + " samples were unparseable");
  vote.majority = majority_vote(vote.answers, num_options);
  return vote;
}

}  // namespace cocobm
