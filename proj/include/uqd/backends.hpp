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
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "uqd/detail/fs.hpp"
#include "uqd/detail/hash.hpp"
#include "uqd/detail/http.hpp"
#include "uqd/detail/time.hpp"
#include "uqd/records.hpp"

namespace uqd {

// ---------------------------------------------------------------------------
// Requests

struct GenerationRequest {
  std::string prompt_text;
  std::optional<std::string> system_text;
  DecodingPolicy policy;
  int max_tokens = 256;
  bool want_logprobs = false;
  std::string backend_id;

  bool operator==(const GenerationRequest&) const = default;
};

inline void to_json(json& j, const GenerationRequest& r) {
  j = json{{"prompt_text", r.prompt_text},
           {"system_text", r.system_text ? json(*r.system_text) : json(nullptr)},
           {"policy", r.policy},
           {"max_tokens", r.max_tokens},
           {"want_logprobs", r.want_logprobs},
           {"backend_id", r.backend_id}};
}

inline void from_json(const json& j, GenerationRequest& r) {
  r.prompt_text = detail::require_string(j, "prompt_text");
  r.system_text.reset();
  if (auto it = j.find("system_text"); it != j.end() && !it->is_null())
    r.system_text = it->get<std::string>();
  r.policy = detail::require_field(j, "policy").get<DecodingPolicy>();
  r.max_tokens = j.value("max_tokens", 256);
  r.want_logprobs = j.value("want_logprobs", false);
  r.backend_id = detail::require_string(j, "backend_id");
  if (r.max_tokens <= 0) throw ValidationError("max_tokens must be positive");
}

// SHA-256 over the sorted-key serialization of the semantic request fields.
inline std::string request_fingerprint(const GenerationRequest& request) {
  return detail::sha256_hex(json(request).dump());
}

// ---------------------------------------------------------------------------
// Backend contract

class Backend {
 public:
  virtual ~Backend() = default;
  virtual const std::string& id() const = 0;
  // Returns a record with text, optional token log-probabilities, the request's
  // backend_id and policy, and prompt_text. prompt_id and variant_key are left
  // for the caller to fill in.
  virtual GenerationRecord generate(const GenerationRequest& request) = 0;
};

namespace detail {

inline void check_backend_id(const Backend& backend, const GenerationRequest& request) {
  if (request.backend_id != backend.id()) {
    throw ValidationError("request for backend '" + request.backend_id + "' sent to backend '" +
                          backend.id() + "'");
  }
}

inline GenerationRecord blank_record(const GenerationRequest& request) {
  GenerationRecord rec;
  rec.prompt_text = request.prompt_text;
  rec.backend_id = request.backend_id;
  rec.policy = request.policy;
  return rec;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic backend: a categorical distribution over answers per question.

inline constexpr std::string_view kParaphraseInstructionPrefix = "For question Q, provide ";

using AnswerDistribution = std::vector<std::pair<std::string, double>>;

struct SyntheticModelSpec {
  AnswerDistribution answers;
  // Replaces `answers` when the prompt is paraphrase k of the question.
  std::map<int, AnswerDistribution> paraphrase_sensitivity;
  // Replaces `answers` for a named ensemble member.
  std::map<std::string, AnswerDistribution> member_sensitivity;
  std::int64_t seed = 0;
};

inline void check_distribution(const AnswerDistribution& dist, const std::string& where) {
  if (dist.empty()) throw ValidationError(where + ": empty answer distribution");
  double total = 0.0;
  for (const auto& [answer, p] : dist) {
    if (!(p >= 0.0)) throw ValidationError(where + ": negative probability for '" + answer + "'");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ValidationError(where + ": probabilities sum to " + std::to_string(total));
}

inline void check_spec(const SyntheticModelSpec& spec, const std::string& where) {
  check_distribution(spec.answers, where);
  for (const auto& [k, d] : spec.paraphrase_sensitivity)
    check_distribution(d, where + " paraphrase " + std::to_string(k));
  for (const auto& [m, d] : spec.member_sensitivity) check_distribution(d, where + " member " + m);
}

namespace detail {

inline AnswerDistribution distribution_from_json(const json& j) {
  AnswerDistribution d;
  if (j.is_object()) {
    throw ValidationError("answer distribution must be a list of [answer, probability] pairs");
  }
  for (const auto& item : j) {
    if (item.is_array() && item.size() == 2) {
      d.emplace_back(item[0].get<std::string>(), item[1].get<double>());
    } else {
      d.emplace_back(require_string(item, "answer"), require_field(item, "p").get<double>());
    }
  }
  return d;
}

inline json distribution_to_json(const AnswerDistribution& d) {
  json out = json::array();
  for (const auto& [a, p] : d) out.push_back(json::array({a, p}));
  return out;
}

}  // namespace detail

inline void to_json(json& j, const SyntheticModelSpec& s) {
  j = json{{"answers", detail::distribution_to_json(s.answers)}, {"seed", s.seed}};
  json para = json::object();
  for (const auto& [k, d] : s.paraphrase_sensitivity) para[std::to_string(k)] = detail::distribution_to_json(d);
  json members = json::object();
  for (const auto& [m, d] : s.member_sensitivity) members[m] = detail::distribution_to_json(d);
  j["paraphrase_sensitivity"] = para;
  j["member_sensitivity"] = members;
}

inline void from_json(const json& j, SyntheticModelSpec& s) {
  s.answers = detail::distribution_from_json(detail::require_field(j, "answers"));
  s.seed = j.value("seed", std::int64_t{0});
  s.paraphrase_sensitivity.clear();
  s.member_sensitivity.clear();
  if (auto it = j.find("paraphrase_sensitivity"); it != j.end()) {
    for (const auto& [k, d] : it->items())
      s.paraphrase_sensitivity[std::stoi(k)] = detail::distribution_from_json(d);
  }
  if (auto it = j.find("member_sensitivity"); it != j.end()) {
    for (const auto& [m, d] : it->items()) s.member_sensitivity[m] = detail::distribution_from_json(d);
  }
}

// Question text -> model spec.
struct SyntheticWorld {
  std::map<std::string, SyntheticModelSpec> questions;
  std::int64_t seed = 0;
};

// World file: {"seed": n, "questions": [{"question": "...", "answers": [...], ...}, ...]}
inline SyntheticWorld load_synthetic_world(const json& j) {
  SyntheticWorld world;
  world.seed = j.value("seed", std::int64_t{0});
  for (const auto& q : detail::require_field(j, "questions")) {
    const std::string text = detail::require_string(q, "question");
    SyntheticModelSpec spec = q.get<SyntheticModelSpec>();
    check_spec(spec, "synthetic question '" + text + "'");
    world.questions[text] = std::move(spec);
  }
  return world;
}

inline json to_json(const SyntheticWorld& world) {
  json qs = json::array();
  for (const auto& [text, spec] : world.questions) {
    json q = spec;
    q["question"] = text;
    qs.push_back(std::move(q));
  }
  return json{{"seed", world.seed}, {"questions", qs}};
}

// The k-th paraphrase the synthetic paraphraser emits for a question.
inline std::string synthetic_paraphrase(const std::string& question, int k) {
  return "Rephrased (" + std::to_string(k) + "): " + question;
}

// Mode of a distribution; ties go to the first-listed answer.
inline std::size_t distribution_mode(const AnswerDistribution& dist) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.size(); ++i)
    if (dist[i].second > dist[best].second) best = i;
  return best;
}

// Answer indices and renormalized probabilities a sampling policy draws from.
// Temperature sampling draws from the distribution as given; the distribution is
// read as the model's answer distribution at that temperature. Top-k keeps the k
// most probable answers; top-p keeps the smallest most-probable prefix whose
// mass reaches p.
inline std::vector<std::pair<std::size_t, double>> sampling_support(const AnswerDistribution& dist,
                                                                    const DecodingPolicy& policy) {
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a].second > dist[b].second; });
  std::size_t keep = dist.size();
  if (const auto* k = std::get_if<TopKParams>(&policy.params())) {
    keep = std::min<std::size_t>(keep, static_cast<std::size_t>(k->k));
  } else if (const auto* p = std::get_if<TopPParams>(&policy.params())) {
    double cum = 0.0;
    keep = 0;
    while (keep < order.size()) {
      cum += dist[order[keep]].second;
      ++keep;
      if (cum >= p->p - 1e-12) break;
    }
  }
  std::vector<std::pair<std::size_t, double>> out;
  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) total += dist[order[i]].second;
  for (std::size_t i = 0; i < keep; ++i) {
    if (dist[order[i]].second > 0.0) out.emplace_back(order[i], dist[order[i]].second / total);
  }
  return out;
}

class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(std::string id, std::shared_ptr<const SyntheticWorld> world,
                   std::optional<std::string> member = std::nullopt,
                   std::chrono::milliseconds delay = std::chrono::milliseconds(0))
      : id_(std::move(id)), world_(std::move(world)), member_(std::move(member)), delay_(delay) {
    for (const auto& [question, spec] : world_->questions) {
      check_spec(spec, "synthetic question '" + question + "'");
    }
  }

  const std::string& id() const override { return id_; }
  std::size_t calls() const { return calls_.load(); }

  GenerationRecord generate(const GenerationRequest& request) override {
    detail::check_backend_id(*this, request);
    ++calls_;
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    GenerationRecord rec = detail::blank_record(request);
    rec.timestamp = "1970-01-01T00:00:00Z";

    if (request.system_text && request.system_text->starts_with(kParaphraseInstructionPrefix)) {
      rec.text = paraphrase_output(request);
      return rec;
    }

    const auto [spec, paraphrase_index] = lookup(request.prompt_text);
    const AnswerDistribution* dist = &spec->answers;
    if (member_) {
      if (auto it = spec->member_sensitivity.find(*member_); it != spec->member_sensitivity.end())
        dist = &it->second;
    }
    if (paraphrase_index) {
      if (auto it = spec->paraphrase_sensitivity.find(*paraphrase_index);
          it != spec->paraphrase_sensitivity.end())
        dist = &it->second;
    }

    std::size_t chosen = 0;
    double chosen_p = 1.0;
    const PolicyKind kind = request.policy.kind();
    const auto* temp = std::get_if<TemperatureParams>(&request.policy.params());
    if (kind == PolicyKind::greedy || kind == PolicyKind::beam ||
        (temp != nullptr && temp->temperature == 0.0)) {
      chosen = distribution_mode(*dist);
      chosen_p = (*dist)[chosen].second;
    } else {
      const auto support = sampling_support(*dist, request.policy);
      const double u = uniform01(request, *spec);
      double cum = 0.0;
      chosen = support.back().first;
      chosen_p = support.back().second;
      for (const auto& [idx, p] : support) {
        cum += p;
        if (u < cum) {
          chosen = idx;
          chosen_p = p;
          break;
        }
      }
    }
    rec.text = (*dist)[chosen].first;
    if (request.want_logprobs) rec.token_logprobs = std::vector<double>{std::min(0.0, std::log(chosen_p))};
    return rec;
  }

 private:
  std::pair<const SyntheticModelSpec*, std::optional<int>> lookup(const std::string& prompt) const {
    if (auto it = world_->questions.find(prompt); it != world_->questions.end()) {
      return {&it->second, std::nullopt};
    }
    // "Rephrased (k): question"
    static constexpr std::string_view kPrefix = "Rephrased (";
    if (prompt.starts_with(kPrefix)) {
      const auto close = prompt.find("): ", kPrefix.size());
      if (close != std::string::npos) {
        const std::string digits = prompt.substr(kPrefix.size(), close - kPrefix.size());
        const std::string question = prompt.substr(close + 3);
        if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
          if (auto it = world_->questions.find(question); it != world_->questions.end())
            return {&it->second, std::stoi(digits)};
        }
      }
    }
    throw ProtocolError("synthetic backend '" + id_ + "' has no distribution for prompt: " + prompt);
  }

  std::string paraphrase_output(const GenerationRequest& request) const {
    std::string question = request.prompt_text;
    if (question.starts_with("Q: ")) question = question.substr(3);
    const std::string& sys = *request.system_text;
    int count = 5;
    try {
      count = std::stoi(sys.substr(kParaphraseInstructionPrefix.size()));
    } catch (const std::exception&) {
    }
    std::string out = "{";
    for (int k = 0; k < count; ++k) {
      if (k) out += ", ";
      out += std::to_string(k) + ": " + json(synthetic_paraphrase(question, k)).dump();
    }
    out += "}";
    return out;
  }

  // Uniform draw in [0,1) keyed on the request, so identical requests repeat.
  double uniform01(const GenerationRequest& request, const SyntheticModelSpec& spec) const {
    const std::string key = json::array({world_->seed, spec.seed, id_, member_ ? *member_ : "",
                                         json(request)})
                                .dump();
    const std::string digest = detail::sha256_hex(key);
    std::seed_seq seq{std::stoul(digest.substr(0, 8), nullptr, 16),
                      std::stoul(digest.substr(8, 8), nullptr, 16),
                      std::stoul(digest.substr(16, 8), nullptr, 16),
                      std::stoul(digest.substr(24, 8), nullptr, 16)};
    std::mt19937_64 rng(seq);
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

  std::string id_;
  std::shared_ptr<const SyntheticWorld> world_;
  std::optional<std::string> member_;
  std::chrono::milliseconds delay_;
  std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Replay store: JSONL of {"fingerprint": ..., "record": {...}}

class ReplayStore {
 public:
  explicit ReplayStore(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) return;
    const std::string text = detail::read_file(path_);
    std::size_t lineno = 0;
    for (const auto& line : detail::split_lines(text)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        const std::string fp = detail::require_string(j, "fingerprint");
        GenerationRecord rec = detail::require_field(j, "record").get<GenerationRecord>();
        auto [it, inserted] = records_.emplace(fp, rec);
        if (!inserted && !(it->second == rec)) {
          throw IntegrityError("fingerprint " + fp + " stored twice with differing payloads");
        }
      } catch (const json::exception& e) {
        throw Error(path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  std::optional<GenerationRecord> find(const std::string& fingerprint) const {
    std::shared_lock lock(mutex_);
    if (auto it = records_.find(fingerprint); it != records_.end()) return it->second;
    return std::nullopt;
  }

  // Returns false when an identical record is already stored.
  bool append(const std::string& fingerprint, const GenerationRecord& record) {
    std::unique_lock lock(mutex_);
    if (auto it = records_.find(fingerprint); it != records_.end()) {
      if (it->second == record) return false;
      throw IntegrityError("fingerprint " + fingerprint + " already stored with a different record");
    }
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to " + path_.string());
    out << json{{"fingerprint", fingerprint}, {"record", record}}.dump() << '\n';
    out.flush();
    if (!out) throw Error("short write to " + path_.string());
    records_.emplace(fingerprint, record);
    return true;
  }

  bool append(const GenerationRequest& request, const GenerationRecord& record) {
    return append(request_fingerprint(request), record);
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, GenerationRecord> records_;
};

// Serves recorded generations only. A miss is an error, never a live call.
class ReplayBackend final : public Backend {
 public:
  ReplayBackend(std::string id, std::shared_ptr<ReplayStore> store)
      : id_(std::move(id)), store_(std::move(store)) {}

  const std::string& id() const override { return id_; }

  GenerationRecord generate(const GenerationRequest& request) override {
    detail::check_backend_id(*this, request);
    const std::string fp = request_fingerprint(request);
    auto rec = store_->find(fp);
    if (!rec) throw NotRecordedError("request " + fp + " not recorded in " + store_->path().string());
    return *rec;
  }

 private:
  std::string id_;
  std::shared_ptr<ReplayStore> store_;
};

// Passes requests to an inner backend and appends every result to a store.
class RecordingBackend final : public Backend {
 public:
  RecordingBackend(std::shared_ptr<Backend> inner, std::shared_ptr<ReplayStore> store)
      : inner_(std::move(inner)), store_(std::move(store)) {}

  const std::string& id() const override { return inner_->id(); }

  GenerationRecord generate(const GenerationRequest& request) override {
    GenerationRecord rec = inner_->generate(request);
    store_->append(request, rec);
    return rec;
  }

 private:
  std::shared_ptr<Backend> inner_;
  std::shared_ptr<ReplayStore> store_;
};

// ---------------------------------------------------------------------------
// OpenAI-compatible chat-completions client

struct OpenAiConfig {
  std::string base_url;
  std::string model;
  std::optional<std::string> api_key;
  std::size_t max_in_flight = 8;
  detail::RetryPolicy retry;
  std::chrono::seconds timeout{120};
};

inline std::optional<std::string> api_key_from_env() {
  if (const char* key = std::getenv("UQD_API_KEY"); key && *key) return std::string(key);
  return std::nullopt;
}

class OpenAiBackend final : public Backend {
 public:
  OpenAiBackend(std::string id, OpenAiConfig config,
                std::shared_ptr<detail::HttpTransport> transport = nullptr)
      : id_(std::move(id)),
        config_(std::move(config)),
        in_flight_(std::make_unique<std::counting_semaphore<>>(
            static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, config_.max_in_flight)))) {
    const auto url = detail::split_url(config_.base_url);
    path_ = url.path + "/v1/chat/completions";
    transport_ = transport ? std::move(transport)
                           : std::make_shared<detail::HttplibTransport>(url.origin, config_.timeout);
  }

  const std::string& id() const override { return id_; }

  // The JSON body for a request. Beam search has no chat-completions encoding.
  static json request_body(const GenerationRequest& request, const std::string& model) {
    json messages = json::array();
    if (request.system_text) messages.push_back({{"role", "system"}, {"content", *request.system_text}});
    messages.push_back({{"role", "user"}, {"content", request.prompt_text}});
    json body = {{"model", model},
                 {"messages", messages},
                 {"n", 1},
                 {"max_tokens", request.max_tokens}};
    std::visit(
        [&](const auto& params) {
          using T = std::decay_t<decltype(params)>;
          if constexpr (std::is_same_v<T, GreedyParams>) {
            body["temperature"] = 0.0;
          } else if constexpr (std::is_same_v<T, BeamParams>) {
            throw UnsupportedPolicyError(
                "beam search is not supported by the chat-completions client; "
                "use a replay or synthetic backend for beam policies");
          } else if constexpr (std::is_same_v<T, TemperatureParams>) {
            body["temperature"] = params.temperature;
          } else if constexpr (std::is_same_v<T, TopKParams>) {
            body["top_k"] = params.k;
          } else if constexpr (std::is_same_v<T, TopPParams>) {
            body["top_p"] = params.p;
          }
        },
        request.policy.params());
    if (request.policy.seed()) body["seed"] = *request.policy.seed();
    if (request.want_logprobs) body["logprobs"] = true;
    return body;
  }

  GenerationRecord generate(const GenerationRequest& request) override {
    detail::check_backend_id(*this, request);
    const std::string body = request_body(request, config_.model).dump();
    detail::HttpHeaders headers{{"Accept", "application/json"}};
    if (config_.api_key) headers.emplace("Authorization", "Bearer " + *config_.api_key);

    in_flight_->acquire();
    detail::HttpResponse res;
    try {
      res = detail::post_with_retries(*transport_, path_, body, headers, config_.retry);
    } catch (...) {
      in_flight_->release();
      throw;
    }
    in_flight_->release();

    GenerationRecord rec = detail::blank_record(request);
    rec.timestamp = detail::utc_now_iso8601();
    parse_response(res.body, request.want_logprobs, rec);
    return rec;
  }

  static void parse_response(const std::string& body, bool want_logprobs, GenerationRecord& rec) {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::parse_error&) {
      throw ProtocolError("chat-completions response is not JSON: " + body);
    }
    try {
      const json& choice = j.at("choices").at(0);
      const json& content = choice.at("message").at("content");
      if (!content.is_string()) throw ProtocolError("choice has no text content: " + body);
      rec.text = content.get<std::string>();
      rec.token_logprobs.reset();
      if (want_logprobs) {
        auto lp = choice.find("logprobs");
        if (lp != choice.end() && lp->is_object() && lp->contains("content") &&
            (*lp)["content"].is_array()) {
          std::vector<double> values;
          for (const auto& tok : (*lp)["content"]) {
            const double v = tok.at("logprob").get<double>();
            if (!(v <= 0.0)) throw ProtocolError("positive token logprob in response");
            values.push_back(v);
          }
          if (!values.empty()) rec.token_logprobs = std::move(values);
        }
      }
    } catch (const json::exception& e) {
      throw ProtocolError(std::string("malformed chat-completions response (") + e.what() +
                          "): " + body);
    }
  }

 private:
  std::string id_;
  OpenAiConfig config_;
  std::string path_;
  std::shared_ptr<detail::HttpTransport> transport_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
};

}  // namespace uqd
