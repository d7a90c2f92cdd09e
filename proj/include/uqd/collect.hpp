// Copyright 2026 The uqd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "uqd/backends.hpp"
#include "uqd/detail/fs.hpp"
#include "uqd/detail/log.hpp"
#include "uqd/detail/parallel.hpp"
#include "uqd/records.hpp"

namespace uqd {

inline constexpr std::string_view kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Paraphrase prompt and parsing

inline std::string paraphrase_system_prompt(std::size_t k = 5) {
  return "For question Q, provide " + std::to_string(k) +
         " semantically equivalent questions. Preserve the original meaning and context of the "
         "question while changing the structure and words. Output format: {0: \"question1\", 1: "
         "\"question2\", 2: \"question3\", ...}.";
}

inline std::string paraphrase_input_prompt(std::string_view question) {
  return "Q: " + std::string(question);
}

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline constexpr std::string_view kLeftCurly = "\xE2\x80\x9C";   // U+201C
inline constexpr std::string_view kRightCurly = "\xE2\x80\x9D";  // U+201D

// Index of the '}' matching the '{' at `open`, honoring quoted strings; npos if unbalanced.
inline std::size_t matching_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  char quote = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (quote) {
      if (c == '\\') ++i;
      else if (c == quote) quote = 0;
      continue;
    }
    if (c == '"') quote = c;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

// Scans `{0: "a", '1': 'b', ...}`-like text. A quoted value ends at the first
// matching quote followed (after spaces) by ',', '}' or the end of the text, so
// apostrophes inside single-quoted values survive.
inline std::map<int, std::string> scan_indexed_map(std::string_view s) {
  std::map<int, std::string> out;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < s.size() && is_space(s[i])) ++i;
  };
  auto at_value_end = [&](std::size_t pos) {
    while (pos < s.size() && is_space(s[pos])) ++pos;
    return pos >= s.size() || s[pos] == ',' || s[pos] == '}';
  };
  while (i < s.size()) {
    skip_ws();
    if (i < s.size() && (s[i] == ',' || s[i] == '{')) {
      ++i;
      continue;
    }
    if (i >= s.size() || s[i] == '}') break;
    // key
    char key_quote = 0;
    if (s[i] == '"' || s[i] == '\'') key_quote = s[i++];
    const std::size_t key_start = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i == key_start) {
      // not an entry; resynchronize at the next separator
      while (i < s.size() && s[i] != ',' && s[i] != '}') ++i;
      continue;
    }
    const int key = std::stoi(std::string(s.substr(key_start, i - key_start)));
    if (key_quote) {
      if (i >= s.size() || s[i] != key_quote) continue;
      ++i;
    }
    skip_ws();
    if (i >= s.size() || s[i] != ':') continue;
    ++i;
    skip_ws();
    // value
    std::string_view close;
    if (s.substr(i).starts_with(kLeftCurly)) {
      close = kRightCurly;
      i += kLeftCurly.size();
    } else if (i < s.size() && (s[i] == '"' || s[i] == '\'')) {
      close = s.substr(i, 1);
      ++i;
    } else {
      const std::size_t start = i;
      while (i < s.size() && s[i] != ',' && s[i] != '}') ++i;
      out.emplace(key, trim(s.substr(start, i - start)));
      continue;
    }
    std::string value;
    bool closed = false;
    while (i < s.size()) {
      if (s[i] == '\\' && i + 1 < s.size()) {
        const char n = s[i + 1];
        value.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n);
        i += 2;
        continue;
      }
      if (s.substr(i).starts_with(close) && at_value_end(i + close.size())) {
        i += close.size();
        closed = true;
        break;
      }
      value.push_back(s[i++]);
    }
    if (!closed) value = trim(value);
    out.emplace(key, std::move(value));
  }
  return out;
}

}  // namespace detail

// Extracts k paraphrases, in index order, from the model's indexed-map output.
// Strict JSON is tried first, then a tolerant bracket/quote scan.
inline std::vector<std::string> parse_paraphrases(std::string_view raw, std::size_t k) {
  const std::size_t open = raw.find('{');
  if (open == std::string_view::npos) throw ParaphraseParseError(std::string(raw));
  const std::size_t close = detail::matching_brace(raw, open);
  const std::string_view body =
      close == std::string_view::npos ? raw.substr(open) : raw.substr(open, close - open + 1);

  std::map<int, std::string> entries;
  try {
    const json j = json::parse(body);
    if (j.is_object()) {
      for (const auto& [key, v] : j.items()) {
        if (!v.is_string() || key.empty() ||
            !std::all_of(key.begin(), key.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
          continue;
        entries.emplace(std::stoi(key), v.get<std::string>());
      }
    }
  } catch (const json::exception&) {
  }
  if (entries.empty()) entries = detail::scan_indexed_map(body);
  if (entries.empty()) throw ParaphraseParseError(std::string(raw));

  std::vector<std::string> out;
  for (auto& [idx, text] : entries) {
    std::string t = detail::trim(text);
    if (!t.empty()) out.push_back(std::move(t));
  }
  if (out.size() < k) throw InsufficientParaphrasesError(k, out.size());
  out.resize(k);
  return out;
}

struct GenerationSettings {
  int max_tokens = 256;
  bool want_logprobs = false;
};

// Asks the paraphraser for k rewrites. An unparsable reply is retried once with
// the same prompt; too few parsed entries is an error straight away.
inline std::vector<std::string> generate_paraphrases(const PromptRecord& prompt, std::size_t k,
                                                     Backend& paraphraser,
                                                     const GenerationSettings& settings = {},
                                                     std::size_t* calls = nullptr) {
  GenerationRequest req;
  req.prompt_text = paraphrase_input_prompt(prompt.question);
  req.system_text = paraphrase_system_prompt(k);
  req.policy = DecodingPolicy::greedy();
  req.max_tokens = std::max(settings.max_tokens, 512);
  req.backend_id = paraphraser.id();
  for (int attempt = 1;; ++attempt) {
    if (calls) ++*calls;
    const GenerationRecord rec = paraphraser.generate(req);
    try {
      return parse_paraphrases(rec.text, k);
    } catch (const ParaphraseParseError&) {
      if (attempt >= 2) throw;
      log().warn("event=paraphrase_parse_retry prompt_id={}", prompt.id);
    }
  }
}

// ---------------------------------------------------------------------------
// Bundle collection. Each returns the persisted form; a member failure yields an
// incomplete file holding the records gathered so far.

namespace detail {

inline constexpr std::string_view kTransportTag = "transport: ";

// Error text for persisted bundles and failure lists; transport-level failures
// carry a tag so exit codes can tell them apart.
inline std::string error_text(const std::exception& e) {
  if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const HttpError*>(&e))
    return std::string(kTransportTag) + e.what();
  return e.what();
}

struct MemberCall {
  std::string variant_key;
  GenerationRequest request;
  Backend* backend;
};

inline BundleFile run_members(const PromptRecord& prompt, Axis axis, const std::string& policy_dir,
                              std::string fixed_context, const std::vector<MemberCall>& calls,
                              std::atomic<std::size_t>* counter) {
  BundleFile file;
  file.header.prompt_id = prompt.id;
  file.header.axis = axis;
  file.header.policy = policy_dir;
  file.header.fixed_context = std::move(fixed_context);
  file.header.expected = calls.size();
  for (const auto& call : calls) {
    try {
      if (counter) ++*counter;
      GenerationRecord rec = call.backend->generate(call.request);
      rec.prompt_id = prompt.id;
      rec.variant_key = call.variant_key;
      file.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      file.header.errors.push_back(call.variant_key + ": " + error_text(e));
    }
  }
  file.header.status = file.header.errors.empty() ? BundleStatus::complete : BundleStatus::incomplete;
  if (file.complete()) {
    try {
      (void)file.to_bundle();
    } catch (const ValidationError& e) {
      file.header.status = BundleStatus::incomplete;
      file.header.errors.push_back(e.what());
    }
  }
  return file;
}

inline std::string describe(const DecodingPolicy& p) { return json(p).dump(); }

}  // namespace detail

// One greedy response per paraphrase from the target. Variant keys are the
// paraphrase indices; with `original_first` the unparaphrased question takes
// slot "original" and the paraphrase list supplies the rest.
inline BundleFile collect_input_bundle(const PromptRecord& prompt,
                                       const std::vector<std::string>& variants, Backend& target,
                                       const GenerationSettings& settings = {},
                                       bool original_first = false,
                                       std::atomic<std::size_t>* counter = nullptr) {
  const DecodingPolicy policy = DecodingPolicy::greedy();
  std::vector<detail::MemberCall> calls;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    GenerationRequest req{variants[i], std::nullopt, policy, settings.max_tokens,
                          settings.want_logprobs, target.id()};
    std::string key = std::to_string(original_first ? i - 1 : i);
    if (original_first && i == 0) key = "original";
    calls.push_back({std::move(key), std::move(req), &target});
  }
  return detail::run_members(prompt, Axis::input, "greedy",
                             "backend=" + target.id() + " policy=" + detail::describe(policy), calls,
                             counter);
}

// One greedy response from each ensemble member on the literal question.
inline BundleFile collect_knowledge_bundle(const PromptRecord& prompt,
                                           const std::vector<Backend*>& members,
                                           const GenerationSettings& settings = {},
                                           const DecodingPolicy& policy = DecodingPolicy::greedy(),
                                           std::atomic<std::size_t>* counter = nullptr) {
  if (members.size() < 2) throw ValidationError("knowledge bundles need at least 2 ensemble members");
  std::vector<detail::MemberCall> calls;
  for (Backend* m : members) {
    GenerationRequest req{prompt.question, std::nullopt, policy, settings.max_tokens,
                          settings.want_logprobs, m->id()};
    calls.push_back({m->id(), std::move(req), m});
  }
  return detail::run_members(prompt, Axis::knowledge, std::string(to_string(policy.kind())),
                             "prompt=original policy=" + detail::describe(policy), calls, counter);
}

// n seeded generations under one policy from the target.
inline BundleFile collect_decoding_bundle(const PromptRecord& prompt, Backend& target,
                                          const DecodingPolicy& policy,
                                          const std::vector<std::int64_t>& seeds,
                                          const GenerationSettings& settings = {},
                                          std::atomic<std::size_t>* counter = nullptr) {
  if (seeds.size() < 2) throw ValidationError("decoding bundles need n >= 2");
  std::set<std::int64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) throw ValidationError("decoding seeds must be distinct");
  std::vector<detail::MemberCall> calls;
  for (std::int64_t seed : seeds) {
    GenerationRequest req{prompt.question, std::nullopt, policy.with_seed(seed), settings.max_tokens,
                          settings.want_logprobs, target.id()};
    calls.push_back({std::to_string(seed), std::move(req), &target});
  }
  return detail::run_members(
      prompt, Axis::decoding, std::string(to_string(policy.kind())),
      "prompt=original backend=" + target.id() + " policy=" + detail::describe(policy.with_seed(std::nullopt)),
      calls, counter);
}

// ---------------------------------------------------------------------------
// Collection plan and resumable runs

struct CollectionPlan {
  std::filesystem::path dataset;
  std::vector<Axis> axes{Axis::input, Axis::knowledge, Axis::decoding};
  std::size_t K = 5;
  std::size_t M = 5;
  std::size_t N = 5;
  std::vector<DecodingPolicy> decoding_policies{
      DecodingPolicy::greedy(), DecodingPolicy::beam(), DecodingPolicy::temperature(),
      DecodingPolicy::top_k(), DecodingPolicy::top_p()};
  std::string paraphraser;
  std::string target;
  std::vector<std::string> ensemble;
  std::filesystem::path out_dir;
  bool prepend_original = false;
  std::vector<std::int64_t> seeds;  // empty means 1..N
  GenerationSettings settings;
  std::size_t concurrency = 8;

  bool has_axis(Axis a) const { return std::find(axes.begin(), axes.end(), a) != axes.end(); }

  std::vector<std::int64_t> effective_seeds() const {
    if (!seeds.empty()) return seeds;
    std::vector<std::int64_t> s;
    for (std::size_t i = 1; i <= N; ++i) s.push_back(static_cast<std::int64_t>(i));
    return s;
  }

  bool has_greedy_decoding() const {
    if (!has_axis(Axis::decoding)) return false;
    return std::any_of(decoding_policies.begin(), decoding_policies.end(),
                       [](const DecodingPolicy& p) { return p.kind() == PolicyKind::greedy; });
  }

  void validate() const {
    if (axes.empty()) throw ValidationError("plan: no axes selected");
    if (K < 2 || M < 2 || N < 2) throw ValidationError("plan: K, M and N must be >= 2");
    if (has_axis(Axis::knowledge) && ensemble.size() < 2)
      throw ValidationError("plan: knowledge axis needs at least 2 ensemble backends");
    if (has_axis(Axis::knowledge) && ensemble.size() != M)
      throw ValidationError("plan: M=" + std::to_string(M) + " but " +
                            std::to_string(ensemble.size()) + " ensemble backends configured");
    if (has_axis(Axis::input) && paraphraser.empty())
      throw ValidationError("plan: input axis needs a paraphraser backend");
    if (target.empty()) throw ValidationError("plan: no target backend");
    if (has_axis(Axis::decoding) && decoding_policies.empty())
      throw ValidationError("plan: decoding axis with no policies");
    std::set<PolicyKind> kinds;
    for (const auto& p : decoding_policies)
      if (!kinds.insert(p.kind()).second)
        throw ValidationError("plan: policy kind '" + std::string(to_string(p.kind())) +
                              "' listed twice");
    if (!seeds.empty()) {
      if (seeds.size() != N) throw ValidationError("plan: seeds list length differs from N");
      std::set<std::int64_t> d(seeds.begin(), seeds.end());
      if (d.size() != seeds.size()) throw ValidationError("plan: seeds must be distinct");
    }
  }
};

inline std::filesystem::path bundle_path(const std::filesystem::path& out, Axis axis,
                                         std::string_view policy, std::string_view prompt_id) {
  return out / "bundles" / std::string(to_string(axis)) / std::string(policy) /
         (std::string(prompt_id) + ".jsonl");
}

inline std::filesystem::path answer_path(const std::filesystem::path& out, std::string_view prompt_id) {
  return out / "answers" / (std::string(prompt_id) + ".json");
}

inline std::filesystem::path paraphrase_path(const std::filesystem::path& out,
                                             std::string_view prompt_id) {
  return out / "paraphrases" / (std::string(prompt_id) + ".json");
}

// (axis, policy directory) pairs a plan produces, in a fixed order.
inline std::vector<std::pair<Axis, std::string>> plan_slots(const CollectionPlan& plan) {
  std::vector<std::pair<Axis, std::string>> slots;
  if (plan.has_axis(Axis::input)) slots.emplace_back(Axis::input, "greedy");
  if (plan.has_axis(Axis::knowledge)) slots.emplace_back(Axis::knowledge, "greedy");
  if (plan.has_axis(Axis::decoding))
    for (const auto& p : plan.decoding_policies)
      slots.emplace_back(Axis::decoding, std::string(to_string(p.kind())));
  return slots;
}

struct CallCount {
  std::size_t generation = 0;   // target + ensemble calls
  std::size_t paraphraser = 0;
  std::size_t total() const { return generation + paraphraser; }
};

// Exact call count of a fresh run:
//   prompts * (K*[input] + M*[knowledge] + sum_policies N*[decoding] + [answer]) + paraphraser
// The answer term is zero whenever greedy decoding is collected, because the
// labeled answer is then the first greedy sample.
inline CallCount planned_calls(const CollectionPlan& plan, std::size_t prompts) {
  CallCount c;
  std::size_t per_prompt = 0;
  if (plan.has_axis(Axis::input)) per_prompt += plan.K;
  if (plan.has_axis(Axis::knowledge)) per_prompt += plan.M;
  if (plan.has_axis(Axis::decoding)) per_prompt += plan.decoding_policies.size() * plan.N;
  if (!plan.has_greedy_decoding()) per_prompt += 1;
  c.generation = prompts * per_prompt;
  c.paraphraser = plan.has_axis(Axis::input) ? prompts : 0;
  return c;
}

struct PromptFailure {
  std::string prompt_id;
  std::string slot;  // "input/greedy", "answer", ...
  std::string error;
  bool transport = false;
};

struct CollectionResult {
  json manifest;
  CallCount calls;
  std::vector<PromptFailure> failures;
  bool complete() const {
    for (const auto& [slot, counts] : manifest.at("bundles").items())
      if (counts.at("complete").get<std::size_t>() != manifest.at("prompts").get<std::size_t>())
        return false;
    return manifest.at("answers").at("complete") == manifest.at("prompts");
  }
};

using BackendRegistry = std::map<std::string, std::shared_ptr<Backend>>;

namespace detail {

inline Backend& backend_for(const BackendRegistry& reg, const std::string& id) {
  auto it = reg.find(id);
  if (it == reg.end()) throw ValidationError("backend '" + id + "' is not configured");
  return *it->second;
}

inline std::optional<BundleFile> read_bundle_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    return parse_bundle_jsonl(read_file(path));
  } catch (const std::exception& e) {
    log().warn("event=bundle_unreadable path={} error=\"{}\"", path.string(), e.what());
    return std::nullopt;
  }
}

inline bool is_transport(const std::string& msg) {
  return msg.find(kTransportTag) != std::string::npos;
}

}  // namespace detail

// Scans the output directory and summarizes what is on disk for `prompts`.
inline json build_manifest(const CollectionPlan& plan, const std::vector<PromptRecord>& prompts,
                           const json& config_echo) {
  json bundles = json::object();
  json failures = json::array();
  for (const auto& [axis, policy] : plan_slots(plan)) {
    std::size_t complete = 0, incomplete = 0, missing = 0;
    for (const auto& p : prompts) {
      const auto file = detail::read_bundle_file(bundle_path(plan.out_dir, axis, policy, p.id));
      if (!file) {
        ++missing;
      } else if (file->complete()) {
        ++complete;
      } else {
        ++incomplete;
        failures.push_back({{"prompt_id", p.id},
                            {"slot", std::string(to_string(axis)) + "/" + policy},
                            {"errors", file->header.errors}});
      }
    }
    bundles[std::string(to_string(axis)) + "/" + policy] = {
        {"complete", complete}, {"incomplete", incomplete}, {"missing", missing}};
  }
  std::size_t answers = 0;
  for (const auto& p : prompts)
    if (std::filesystem::exists(answer_path(plan.out_dir, p.id))) ++answers;
  return json{{"tool", "uqd"},
              {"version", kToolVersion},
              {"config", config_echo},
              {"prompts", prompts.size()},
              {"bundles", bundles},
              {"answers", {{"complete", answers}, {"missing", prompts.size() - answers}}},
              {"failures", failures}};
}

// Paraphrases for one prompt, generated once and cached under paraphrases/.
inline std::vector<std::string> ensure_paraphrases(const CollectionPlan& plan,
                                                   const PromptRecord& prompt, Backend& paraphraser,
                                                   std::atomic<std::size_t>* counter = nullptr) {
  const auto path = paraphrase_path(plan.out_dir, prompt.id);
  const std::size_t wanted = plan.prepend_original ? plan.K - 1 : plan.K;
  if (std::filesystem::exists(path)) {
    auto cached = json::parse(detail::read_file(path)).at("paraphrases").get<std::vector<std::string>>();
    if (cached.size() == wanted) return cached;
  }
  std::size_t calls = 0;
  std::vector<std::string> paraphrases;
  try {
    paraphrases = generate_paraphrases(prompt, wanted, paraphraser, plan.settings, &calls);
  } catch (...) {
    if (counter) *counter += calls;
    throw;
  }
  if (counter) *counter += calls;
  detail::atomic_write(path, json{{"prompt_id", prompt.id},
                                  {"question", prompt.question},
                                  {"paraphrases", paraphrases}}
                                     .dump() + "\n");
  return paraphrases;
}

struct RunOptions {
  std::stop_token stop;
  json config_echo = json::object();
};

// Collects every bundle the plan asks for, skipping work already persisted as
// complete. Each bundle is written atomically, so an interrupted run leaves only
// whole files behind and a rerun picks up where it stopped.
inline CollectionResult run_collection(const CollectionPlan& plan, const BackendRegistry& backends,
                                       const RunOptions& options = {}) {
  plan.validate();
  const std::vector<PromptRecord> prompts = load_dataset(plan.dataset);

  Backend& target = detail::backend_for(backends, plan.target);
  Backend* paraphraser =
      plan.has_axis(Axis::input) ? &detail::backend_for(backends, plan.paraphraser) : nullptr;
  std::vector<Backend*> ensemble;
  if (plan.has_axis(Axis::knowledge))
    for (const auto& id : plan.ensemble) ensemble.push_back(&detail::backend_for(backends, id));

  std::atomic<std::size_t> generation_calls{0};
  std::atomic<std::size_t> paraphraser_calls{0};
  std::mutex failures_mutex;
  std::vector<PromptFailure> failures;
  auto note_failure = [&](const std::string& prompt_id, const std::string& slot,
                          const std::string& error) {
    std::lock_guard lock(failures_mutex);
    failures.push_back({prompt_id, slot, error, detail::is_transport(error)});
    log().warn("event=collect_failure prompt_id={} slot={} error=\"{}\"", prompt_id, slot, error);
  };
  auto persist = [&](const BundleFile& file) {
    detail::atomic_write(
        bundle_path(plan.out_dir, file.header.axis, file.header.policy, file.header.prompt_id),
        to_jsonl(file));
    if (!file.complete()) {
      for (const auto& e : file.header.errors)
        note_failure(file.header.prompt_id,
                     std::string(to_string(file.header.axis)) + "/" + file.header.policy, e);
    }
  };
  auto already_complete = [&](Axis axis, const std::string& policy, const std::string& id) {
    const auto f = detail::read_bundle_file(bundle_path(plan.out_dir, axis, policy, id));
    return f && f->complete();
  };

  const auto seeds = plan.effective_seeds();
  detail::parallel_for(prompts.size(), plan.concurrency, [&](std::size_t i) {
    if (options.stop.stop_requested()) return;
    const PromptRecord& prompt = prompts[i];

    if (plan.has_axis(Axis::input) && !already_complete(Axis::input, "greedy", prompt.id)) {
      std::optional<std::vector<std::string>> paraphrases;
      try {
        paraphrases = ensure_paraphrases(plan, prompt, *paraphraser, &paraphraser_calls);
      } catch (const std::exception& e) {
        BundleFile failed;
        failed.header = {prompt.id, Axis::input, "greedy", "", BundleStatus::incomplete, plan.K,
                         {"paraphrasing: " + detail::error_text(e)}};
        persist(failed);
      }
      if (paraphrases) {
        std::vector<std::string> variants;
        if (plan.prepend_original) variants.push_back(prompt.question);
        variants.insert(variants.end(), paraphrases->begin(), paraphrases->end());
        persist(collect_input_bundle(prompt, variants, target, plan.settings, plan.prepend_original,
                                     &generation_calls));
      }
    }

    if (options.stop.stop_requested()) return;
    if (plan.has_axis(Axis::knowledge) && !already_complete(Axis::knowledge, "greedy", prompt.id)) {
      persist(collect_knowledge_bundle(prompt, ensemble, plan.settings, DecodingPolicy::greedy(),
                                       &generation_calls));
    }

    if (plan.has_axis(Axis::decoding)) {
      for (const auto& policy : plan.decoding_policies) {
        if (options.stop.stop_requested()) return;
        const std::string dir(to_string(policy.kind()));
        if (already_complete(Axis::decoding, dir, prompt.id)) continue;
        persist(collect_decoding_bundle(prompt, target, policy, seeds, plan.settings,
                                        &generation_calls));
      }
    }

    // The labeled answer: greedy response of the target to the original question.
    const auto apath = answer_path(plan.out_dir, prompt.id);
    if (std::filesystem::exists(apath)) return;
    if (plan.has_greedy_decoding()) {
      const auto f = detail::read_bundle_file(bundle_path(plan.out_dir, Axis::decoding, "greedy", prompt.id));
      if (f && f->complete()) {
        detail::atomic_write(apath, json(f->records.front()).dump() + "\n");
      } else {
        note_failure(prompt.id, "answer", "greedy decoding bundle incomplete");
      }
      return;
    }
    try {
      ++generation_calls;
      GenerationRequest req{prompt.question, std::nullopt, DecodingPolicy::greedy(),
                            plan.settings.max_tokens, plan.settings.want_logprobs, target.id()};
      GenerationRecord rec = target.generate(req);
      rec.prompt_id = prompt.id;
      rec.variant_key = "answer";
      detail::atomic_write(apath, json(rec).dump() + "\n");
    } catch (const std::exception& e) {
      note_failure(prompt.id, "answer", detail::error_text(e));
    }
  });

  CollectionResult result;
  result.calls.generation = generation_calls.load();
  result.calls.paraphraser = paraphraser_calls.load();
  result.failures = std::move(failures);
  std::sort(result.failures.begin(), result.failures.end(),
            [](const PromptFailure& a, const PromptFailure& b) {
              return std::tie(a.prompt_id, a.slot, a.error) < std::tie(b.prompt_id, b.slot, b.error);
            });
  result.manifest = build_manifest(plan, prompts, options.config_echo);
  detail::atomic_write(plan.out_dir / "manifest.json", result.manifest.dump(2) + "\n");
  return result;
}

}  // namespace uqd
