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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "uqd/detail/fs.hpp"
#include "uqd/errors.hpp"

namespace uqd {

using json = nlohmann::json;

// The factor a bundle varies while the others are held fixed.
enum class Axis { input, knowledge, decoding };

inline constexpr Axis kAllAxes[] = {Axis::input, Axis::knowledge, Axis::decoding};

inline std::string_view to_string(Axis axis) {
  switch (axis) {
    case Axis::input: return "input";
    case Axis::knowledge: return "knowledge";
    case Axis::decoding: return "decoding";
  }
  return "?";
}

inline Axis parse_axis(std::string_view s) {
  if (s == "input") return Axis::input;
  if (s == "knowledge") return Axis::knowledge;
  if (s == "decoding") return Axis::decoding;
  throw ValidationError("unknown axis '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// PromptRecord

struct PromptRecord {
  std::string id;
  std::string question;
  std::string reference_answer;
  std::string dataset_tag;
  std::map<std::string, std::string> metadata;

  bool operator==(const PromptRecord&) const = default;
};

namespace detail {

inline const json& require_field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + name + "'");
  return *it;
}

inline std::string require_string(const json& j, const char* name) {
  const json& v = require_field(j, name);
  if (!v.is_string()) throw ValidationError(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

inline std::string optional_string(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) throw ValidationError(std::string("field '") + name + "' must be a string");
  return it->get<std::string>();
}

}  // namespace detail

inline void to_json(json& j, const PromptRecord& r) {
  j = json{{"id", r.id},
           {"question", r.question},
           {"reference_answer", r.reference_answer},
           {"dataset_tag", r.dataset_tag},
           {"metadata", r.metadata}};
}

inline void from_json(const json& j, PromptRecord& r) {
  if (!j.is_object()) throw ValidationError("record is not a JSON object");
  r.id = detail::require_string(j, "id");
  r.question = detail::require_string(j, "question");
  r.reference_answer = detail::require_string(j, "reference_answer");
  r.dataset_tag = detail::optional_string(j, "dataset_tag");
  r.metadata.clear();
  if (auto it = j.find("metadata"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw ValidationError("field 'metadata' must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw ValidationError("metadata value '" + k + "' must be a string");
      r.metadata.emplace(k, v.get<std::string>());
    }
  }
  if (r.id.empty()) throw ValidationError("field 'id' is empty");
  if (r.question.empty()) throw ValidationError("field 'question' is empty");
}

// ---------------------------------------------------------------------------
// DecodingPolicy

enum class PolicyKind { greedy, beam, temperature, top_k, top_p };

inline constexpr PolicyKind kAllPolicyKinds[] = {PolicyKind::greedy, PolicyKind::beam,
                                                 PolicyKind::temperature, PolicyKind::top_k,
                                                 PolicyKind::top_p};

inline std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::greedy: return "greedy";
    case PolicyKind::beam: return "beam";
    case PolicyKind::temperature: return "temperature";
    case PolicyKind::top_k: return "top_k";
    case PolicyKind::top_p: return "top_p";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(std::string_view s) {
  for (PolicyKind k : kAllPolicyKinds) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown decoding policy '" + std::string(s) + "'");
}

struct GreedyParams {
  bool operator==(const GreedyParams&) const = default;
};
struct BeamParams {
  int num_beams = 5;
  double length_penalty = 1.0;
  bool early_stopping = true;
  bool operator==(const BeamParams&) const = default;
};
struct TemperatureParams {
  double temperature = 0.7;
  bool operator==(const TemperatureParams&) const = default;
};
struct TopKParams {
  int k = 50;
  bool operator==(const TopKParams&) const = default;
};
struct TopPParams {
  double p = 0.9;
  bool operator==(const TopPParams&) const = default;
};

// A generation procedure. The parameter variant makes "only the parameters of
// the declared kind are set" hold by construction.
class DecodingPolicy {
 public:
  using Params = std::variant<GreedyParams, BeamParams, TemperatureParams, TopKParams, TopPParams>;

  DecodingPolicy() = default;

  static DecodingPolicy greedy() { return DecodingPolicy(GreedyParams{}); }
  static DecodingPolicy beam(int num_beams = 5, double length_penalty = 1.0,
                             bool early_stopping = true) {
    if (num_beams <= 0) throw ValidationError("num_beams must be positive");
    return DecodingPolicy(BeamParams{num_beams, length_penalty, early_stopping});
  }
  static DecodingPolicy temperature(double t = 0.7) {
    if (!(t >= 0.0)) throw ValidationError("temperature must be >= 0");
    return DecodingPolicy(TemperatureParams{t});
  }
  static DecodingPolicy top_k(int k = 50) {
    if (k <= 0) throw ValidationError("top_k k must be positive");
    return DecodingPolicy(TopKParams{k});
  }
  static DecodingPolicy top_p(double p = 0.9) {
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("top_p p must be in (0, 1]");
    return DecodingPolicy(TopPParams{p});
  }
  static DecodingPolicy defaults(PolicyKind kind) {
    switch (kind) {
      case PolicyKind::greedy: return greedy();
      case PolicyKind::beam: return beam();
      case PolicyKind::temperature: return temperature();
      case PolicyKind::top_k: return top_k();
      case PolicyKind::top_p: return top_p();
    }
    return greedy();
  }

  PolicyKind kind() const { return static_cast<PolicyKind>(params_.index()); }
  const Params& params() const { return params_; }

  const std::optional<std::int64_t>& seed() const { return seed_; }
  DecodingPolicy with_seed(std::optional<std::int64_t> seed) const {
    DecodingPolicy copy = *this;
    copy.seed_ = seed;
    return copy;
  }

  // Same kind and parameters; seed ignored.
  bool same_procedure(const DecodingPolicy& other) const { return params_ == other.params_; }

  bool operator==(const DecodingPolicy&) const = default;

 private:
  explicit DecodingPolicy(Params p) : params_(std::move(p)) {}

  Params params_{GreedyParams{}};
  std::optional<std::int64_t> seed_;
};

inline void to_json(json& j, const DecodingPolicy& p) {
  j = json::object();
  j["kind"] = std::string(to_string(p.kind()));
  std::visit(
      [&](const auto& params) {
        using T = std::decay_t<decltype(params)>;
        if constexpr (std::is_same_v<T, BeamParams>) {
          j["num_beams"] = params.num_beams;
          j["length_penalty"] = params.length_penalty;
          j["early_stopping"] = params.early_stopping;
        } else if constexpr (std::is_same_v<T, TemperatureParams>) {
          j["temperature"] = params.temperature;
        } else if constexpr (std::is_same_v<T, TopKParams>) {
          j["k"] = params.k;
        } else if constexpr (std::is_same_v<T, TopPParams>) {
          j["p"] = params.p;
        }
      },
      p.params());
  if (p.seed()) j["seed"] = *p.seed();
}

// Accepts either a bare kind string ("top_p") or an object. Missing parameters take
// their defaults; parameters belonging to another kind are rejected.
inline void from_json(const json& j, DecodingPolicy& p) {
  if (j.is_string()) {
    p = DecodingPolicy::defaults(parse_policy_kind(j.get<std::string>()));
    return;
  }
  if (!j.is_object()) throw ValidationError("policy must be a string or an object");
  const PolicyKind kind = parse_policy_kind(detail::require_string(j, "kind"));
  static const std::map<PolicyKind, std::set<std::string>> allowed = {
      {PolicyKind::greedy, {}},
      {PolicyKind::beam, {"num_beams", "length_penalty", "early_stopping"}},
      {PolicyKind::temperature, {"temperature"}},
      {PolicyKind::top_k, {"k"}},
      {PolicyKind::top_p, {"p"}},
  };
  for (const auto& [key, _] : j.items()) {
    if (key == "kind" || key == "seed") continue;
    if (!allowed.at(kind).contains(key)) {
      throw ValidationError("parameter '" + key + "' is not valid for policy '" +
                            std::string(to_string(kind)) + "'");
    }
  }
  switch (kind) {
    case PolicyKind::greedy: p = DecodingPolicy::greedy(); break;
    case PolicyKind::beam:
      p = DecodingPolicy::beam(j.value("num_beams", 5), j.value("length_penalty", 1.0),
                               j.value("early_stopping", true));
      break;
    case PolicyKind::temperature: p = DecodingPolicy::temperature(j.value("temperature", 0.7)); break;
    case PolicyKind::top_k: p = DecodingPolicy::top_k(j.value("k", 50)); break;
    case PolicyKind::top_p: p = DecodingPolicy::top_p(j.value("p", 0.9)); break;
  }
  if (auto it = j.find("seed"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw ValidationError("policy seed must be an integer");
    p = p.with_seed(it->get<std::int64_t>());
  }
}

// ---------------------------------------------------------------------------
// GenerationRecord

struct GenerationRecord {
  std::string prompt_id;
  std::string variant_key;
  // Literal text sent to the model (paraphrase, or the original question).
  std::optional<std::string> prompt_text;
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
  std::string backend_id;
  DecodingPolicy policy;
  // Informational only. Excluded from equality.
  std::string timestamp;

  bool operator==(const GenerationRecord& o) const {
    return prompt_id == o.prompt_id && variant_key == o.variant_key &&
           prompt_text == o.prompt_text && text == o.text && token_logprobs == o.token_logprobs &&
           backend_id == o.backend_id && policy == o.policy;
  }
};

inline void to_json(json& j, const GenerationRecord& r) {
  j = json{{"prompt_id", r.prompt_id},   {"variant_key", r.variant_key}, {"text", r.text},
           {"backend_id", r.backend_id}, {"policy", r.policy},           {"timestamp", r.timestamp}};
  j["token_logprobs"] = r.token_logprobs ? json(*r.token_logprobs) : json(nullptr);
  if (r.prompt_text) j["prompt_text"] = *r.prompt_text;
}

inline void from_json(const json& j, GenerationRecord& r) {
  if (!j.is_object()) throw ValidationError("generation record is not a JSON object");
  r.prompt_id = detail::require_string(j, "prompt_id");
  r.variant_key = detail::require_string(j, "variant_key");
  r.text = detail::require_string(j, "text");
  r.backend_id = detail::require_string(j, "backend_id");
  r.policy = detail::require_field(j, "policy").get<DecodingPolicy>();
  r.timestamp = detail::optional_string(j, "timestamp");
  r.prompt_text.reset();
  if (auto it = j.find("prompt_text"); it != j.end() && !it->is_null()) {
    r.prompt_text = it->get<std::string>();
  }
  r.token_logprobs.reset();
  if (auto it = j.find("token_logprobs"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ValidationError("field 'token_logprobs' must be an array");
    std::vector<double> lps;
    lps.reserve(it->size());
    for (const auto& v : *it) {
      if (!v.is_number()) throw ValidationError("token_logprobs entries must be numbers");
      const double lp = v.get<double>();
      if (!(lp <= 0.0)) throw ValidationError("token log-probability > 0");
      lps.push_back(lp);
    }
    r.token_logprobs = std::move(lps);
  }
}

// ---------------------------------------------------------------------------
// ResponseBundle

// Records that vary exactly one factor. Invariants are enforced on construction;
// an existing bundle is always valid.
class ResponseBundle {
 public:
  ResponseBundle(std::string prompt_id, Axis axis, std::vector<GenerationRecord> records,
                 std::string fixed_context = {})
      : prompt_id_(std::move(prompt_id)),
        axis_(axis),
        records_(std::move(records)),
        fixed_context_(std::move(fixed_context)) {
    check();
  }

  const std::string& prompt_id() const { return prompt_id_; }
  Axis axis() const { return axis_; }
  const std::vector<GenerationRecord>& records() const { return records_; }
  const std::string& fixed_context() const { return fixed_context_; }
  std::size_t size() const { return records_.size(); }

 private:
  void fail(const std::string& what) const {
    throw ValidationError("invalid " + std::string(to_string(axis_)) + " bundle for prompt '" +
                          prompt_id_ + "': " + what);
  }

  void check() const {
    if (records_.size() < 2) fail("needs at least 2 records");
    const GenerationRecord& first = records_.front();
    for (const auto& r : records_) {
      if (r.prompt_id != prompt_id_) fail("record for prompt '" + r.prompt_id + "'");
    }
    std::set<std::string> seen;
    switch (axis_) {
      case Axis::input:
        for (const auto& r : records_) {
          if (r.backend_id != first.backend_id) fail("backend_id differs across paraphrases");
          if (!r.policy.same_procedure(first.policy) || r.policy.seed() != first.policy.seed())
            fail("policy differs across paraphrases");
          if (!seen.insert(r.variant_key).second) fail("duplicate variant_key '" + r.variant_key + "'");
        }
        break;
      case Axis::knowledge:
        for (const auto& r : records_) {
          if (r.prompt_text != first.prompt_text) fail("prompt text differs across members");
          if (!r.policy.same_procedure(first.policy)) fail("policy differs across members");
          if (!seen.insert(r.backend_id).second) fail("duplicate backend_id '" + r.backend_id + "'");
        }
        break;
      case Axis::decoding:
        for (const auto& r : records_) {
          if (r.prompt_text != first.prompt_text) fail("prompt text differs across samples");
          if (r.backend_id != first.backend_id) fail("backend_id differs across samples");
          if (!r.policy.same_procedure(first.policy)) fail("policy differs across samples");
          if (!r.policy.seed()) fail("sample without a seed");
          if (!seen.insert(std::to_string(*r.policy.seed())).second)
            fail("duplicate seed " + std::to_string(*r.policy.seed()));
        }
        break;
    }
  }

  std::string prompt_id_;
  Axis axis_;
  std::vector<GenerationRecord> records_;
  std::string fixed_context_;
};

// ---------------------------------------------------------------------------
// Persisted bundle files: one header line, then one GenerationRecord per line.

enum class BundleStatus { complete, incomplete };

struct BundleHeader {
  std::string prompt_id;
  Axis axis = Axis::input;
  std::string policy;  // directory name the bundle lives under
  std::string fixed_context;
  BundleStatus status = BundleStatus::complete;
  std::size_t expected = 0;
  std::vector<std::string> errors;
};

struct BundleFile {
  BundleHeader header;
  std::vector<GenerationRecord> records;

  bool complete() const { return header.status == BundleStatus::complete; }
  ResponseBundle to_bundle() const {
    return ResponseBundle(header.prompt_id, header.axis, records, header.fixed_context);
  }
};

inline std::string to_jsonl(const BundleFile& file) {
  const auto& h = file.header;
  json header = {{"bundle",
                  {{"prompt_id", h.prompt_id},
                   {"axis", std::string(to_string(h.axis))},
                   {"policy", h.policy},
                   {"fixed_context", h.fixed_context},
                   {"status", h.status == BundleStatus::complete ? "complete" : "incomplete"},
                   {"expected", h.expected},
                   {"errors", h.errors}}}};
  std::string out = header.dump() + "\n";
  for (const auto& r : file.records) out += json(r).dump() + "\n";
  return out;
}

inline BundleFile parse_bundle_jsonl(std::string_view text) {
  auto lines = detail::split_lines(text);
  if (lines.empty()) throw ValidationError("empty bundle file");
  BundleFile file;
  const json header = json::parse(lines.front());
  const json& b = detail::require_field(header, "bundle");
  file.header.prompt_id = detail::require_string(b, "prompt_id");
  file.header.axis = parse_axis(detail::require_string(b, "axis"));
  file.header.policy = detail::require_string(b, "policy");
  file.header.fixed_context = detail::optional_string(b, "fixed_context");
  const std::string status = detail::require_string(b, "status");
  file.header.status = status == "complete" ? BundleStatus::complete : BundleStatus::incomplete;
  file.header.expected = b.value("expected", std::size_t{0});
  file.header.errors = b.value("errors", std::vector<std::string>{});
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    file.records.push_back(json::parse(lines[i]).get<GenerationRecord>());
  }
  return file;
}

// ---------------------------------------------------------------------------
// Dataset validation

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct ValidationReport {
  std::size_t total = 0;
  std::size_t valid = 0;
  std::size_t invalid = 0;
  std::vector<LineError> errors;
};

inline void to_json(json& j, const ValidationReport& r) {
  json errs = json::array();
  for (const auto& e : r.errors) errs.push_back({{"line", e.line}, {"reason", e.reason}});
  j = json{{"total", r.total}, {"valid", r.valid}, {"invalid", r.invalid}, {"errors", errs}};
}

// Single pass. Duplicate ids are reported on their second and later occurrences.
inline ValidationReport validate_dataset_text(std::string_view text,
                                              std::vector<PromptRecord>* out = nullptr) {
  ValidationReport report;
  std::unordered_map<std::string, std::size_t> first_seen;
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    ++report.total;
    auto reject = [&](std::string reason) {
      ++report.invalid;
      report.errors.push_back({lineno, std::move(reason)});
    };
    if (lines[i].find_first_not_of(" \t") == std::string::npos) {
      reject("empty line");
      continue;
    }
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      reject(std::string("undecodable JSON: ") + e.what());
      continue;
    }
    PromptRecord rec;
    try {
      rec = j.get<PromptRecord>();
    } catch (const ValidationError& e) {
      reject(e.what());
      continue;
    } catch (const json::exception& e) {
      reject(e.what());
      continue;
    }
    auto [it, inserted] = first_seen.emplace(rec.id, lineno);
    if (!inserted) {
      reject("duplicate id '" + rec.id + "' (first seen on line " + std::to_string(it->second) + ")");
      continue;
    }
    ++report.valid;
    if (out) out->push_back(std::move(rec));
  }
  return report;
}

inline ValidationReport validate_dataset(const std::filesystem::path& path,
                                         std::vector<PromptRecord>* out = nullptr) {
  return validate_dataset_text(detail::read_file(path), out);
}

// Loads a dataset, refusing it if any line is invalid.
inline std::vector<PromptRecord> load_dataset(const std::filesystem::path& path) {
  std::vector<PromptRecord> prompts;
  const ValidationReport report = validate_dataset(path, &prompts);
  if (report.invalid > 0) {
    const auto& e = report.errors.front();
    throw ValidationError(path.string() + ": " + std::to_string(report.invalid) +
                          " invalid line(s); first at line " + std::to_string(e.line) + ": " +
                          e.reason);
  }
  return prompts;
}

}  // namespace uqd
