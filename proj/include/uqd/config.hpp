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

#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uqd/backends.hpp"
#include "uqd/collect.hpp"
#include "uqd/entropy.hpp"
#include "uqd/equivalence.hpp"
#include "uqd/eval.hpp"
#include "uqd/records.hpp"

namespace uqd {

namespace fs = std::filesystem;

struct BackendConfig {
  std::string type;  // "openai" | "synthetic" | "replay"
  // openai
  std::string base_url;
  std::string model;
  std::size_t max_in_flight = 8;
  int max_attempts = 5;
  int retry_base_ms = 500;
  // synthetic
  std::string world;
  std::optional<std::string> member;
  int delay_ms = 0;
  // replay
  std::string store;
  // any type: append every generation to this replay store
  std::string record_to;
};

inline void to_json(json& j, const BackendConfig& b) {
  j = json{{"type", b.type}};
  if (b.type == "openai") {
    j["base_url"] = b.base_url;
    j["model"] = b.model;
    j["max_in_flight"] = b.max_in_flight;
    j["max_attempts"] = b.max_attempts;
    j["retry_base_ms"] = b.retry_base_ms;
  } else if (b.type == "synthetic") {
    j["world"] = b.world;
    if (b.member) j["member"] = *b.member;
    if (b.delay_ms) j["delay_ms"] = b.delay_ms;
  } else if (b.type == "replay") {
    j["store"] = b.store;
  }
  if (!b.model.empty()) j["model"] = b.model;
  if (!b.record_to.empty()) j["record_to"] = b.record_to;
}

inline void from_json(const json& j, BackendConfig& b) {
  b.type = detail::require_string(j, "type");
  b.base_url = j.value("base_url", "");
  b.model = j.value("model", "");
  b.max_in_flight = j.value("max_in_flight", std::size_t{8});
  b.max_attempts = j.value("max_attempts", 5);
  b.retry_base_ms = j.value("retry_base_ms", 500);
  if (b.max_attempts < 1 || b.retry_base_ms < 0)
    throw ValidationError("max_attempts must be >= 1 and retry_base_ms >= 0");
  b.world = j.value("world", "");
  b.member.reset();
  if (j.contains("member")) b.member = j.at("member").get<std::string>();
  b.delay_ms = j.value("delay_ms", 0);
  b.store = j.value("store", "");
  b.record_to = j.value("record_to", "");
  if (b.type == "openai") {
    if (b.base_url.empty() || b.model.empty())
      throw ValidationError("openai backend needs base_url and model");
  } else if (b.type == "synthetic") {
    if (b.world.empty()) throw ValidationError("synthetic backend needs a world file");
  } else if (b.type == "replay") {
    if (b.store.empty()) throw ValidationError("replay backend needs a store");
  } else {
    throw ValidationError("unknown backend type '" + b.type + "'");
  }
}

struct JudgeConfig {
  std::string kind = "exact";  // exact | rouge | nli
  double threshold = 0.3;      // rouge
  std::string rouge_variant = "f_measure";
  double gamma = 0.5;          // nli
  std::string endpoint;        // nli; falls back to UQD_NLI_ENDPOINT
  bool use_context = true;
  std::string clustering = "closure";  // closure | greedy_sequential
};

inline void to_json(json& j, const JudgeConfig& c) {
  j = json{{"kind", c.kind},           {"threshold", c.threshold},
           {"rouge_variant", c.rouge_variant}, {"gamma", c.gamma},
           {"endpoint", c.endpoint},   {"use_context", c.use_context},
           {"clustering", c.clustering}};
}

inline void from_json(const json& j, JudgeConfig& c) {
  c.kind = j.value("kind", "exact");
  c.threshold = j.value("threshold", 0.3);
  c.rouge_variant = j.value("rouge_variant", "f_measure");
  c.gamma = j.value("gamma", 0.5);
  c.endpoint = j.value("endpoint", "");
  c.use_context = j.value("use_context", true);
  c.clustering = j.value("clustering", "closure");
  if (c.kind != "exact" && c.kind != "rouge" && c.kind != "nli")
    throw ValidationError("unknown judge '" + c.kind + "'");
  if (c.clustering != "closure" && c.clustering != "greedy_sequential")
    throw ValidationError("unknown clustering mode '" + c.clustering + "'");
}

struct LabelingConfig {
  std::string rule = "rouge";  // rouge | nli
  double threshold = 0.3;
  std::string rouge_variant = "f_measure";
  double gamma = 0.5;
  std::string endpoint;
  bool use_context = true;
};

inline void to_json(json& j, const LabelingConfig& c) {
  j = json{{"rule", c.rule},         {"threshold", c.threshold},
           {"rouge_variant", c.rouge_variant}, {"gamma", c.gamma},
           {"endpoint", c.endpoint}, {"use_context", c.use_context}};
}

inline void from_json(const json& j, LabelingConfig& c) {
  c.rule = j.value("rule", "rouge");
  c.threshold = j.value("threshold", 0.3);
  c.rouge_variant = j.value("rouge_variant", "f_measure");
  c.gamma = j.value("gamma", 0.5);
  c.endpoint = j.value("endpoint", "");
  c.use_context = j.value("use_context", true);
  if (c.rule != "rouge" && c.rule != "nli") throw ValidationError("unknown labeling rule '" + c.rule + "'");
}

inline RougeVariant parse_rouge_variant(const std::string& s) {
  if (s == "f_measure") return RougeVariant::f_measure;
  if (s == "recall") return RougeVariant::recall;
  throw ValidationError("unknown rouge variant '" + s + "'");
}

// Everything a run needs. Paths are kept as written and resolved against the
// config file's directory, so the echoed config is location independent.
struct RunConfig {
  std::string dataset;
  std::string out = "out";
  std::vector<Axis> axes{Axis::input, Axis::knowledge, Axis::decoding};
  std::size_t K = 5, M = 5, N = 5;
  std::vector<DecodingPolicy> decoding_policies{
      DecodingPolicy::greedy(), DecodingPolicy::beam(), DecodingPolicy::temperature(),
      DecodingPolicy::top_k(), DecodingPolicy::top_p()};
  std::string paraphraser;
  std::string target;
  std::vector<std::string> ensemble;
  bool prepend_original = false;
  std::vector<std::int64_t> seeds;
  int max_tokens = 256;
  bool want_logprobs = false;
  std::size_t concurrency = 8;

  JudgeConfig judge;
  Weighting weighting = Weighting::uniform;
  bool length_normalize = false;
  LabelingConfig labeling;
  std::size_t ece_bins = 10;
  Normalization normalization = Normalization::minmax;
  std::string eval_policy = "temperature";
  std::string grid_confidence = "mean";

  std::map<std::string, BackendConfig> backends;

  fs::path base_dir;  // not serialized

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  fs::path out_dir() const { return resolve(out); }

  std::string model_name() const {
    if (auto it = backends.find(target); it != backends.end() && !it->second.model.empty())
      return it->second.model;
    return target;
  }

  CollectionPlan plan() const {
    CollectionPlan p;
    p.dataset = resolve(dataset);
    p.axes = axes;
    p.K = K;
    p.M = M;
    p.N = N;
    p.decoding_policies = decoding_policies;
    p.paraphraser = paraphraser;
    p.target = target;
    p.ensemble = ensemble;
    p.out_dir = out_dir();
    p.prepend_original = prepend_original;
    p.seeds = seeds;
    p.settings = {max_tokens, want_logprobs};
    p.concurrency = concurrency;
    return p;
  }
};

inline void to_json(json& j, const RunConfig& c) {
  json axes = json::array();
  for (Axis a : c.axes) axes.push_back(std::string(to_string(a)));
  j = json{{"dataset", c.dataset},
           {"out", c.out},
           {"axes", axes},
           {"K", c.K},
           {"M", c.M},
           {"N", c.N},
           {"decoding_policies", c.decoding_policies},
           {"paraphraser", c.paraphraser},
           {"target", c.target},
           {"ensemble", c.ensemble},
           {"prepend_original", c.prepend_original},
           {"seeds", c.seeds},
           {"max_tokens", c.max_tokens},
           {"want_logprobs", c.want_logprobs},
           {"concurrency", c.concurrency},
           {"judge", c.judge},
           {"weighting", std::string(to_string(c.weighting))},
           {"length_normalize", c.length_normalize},
           {"labeling", c.labeling},
           {"ece_bins", c.ece_bins},
           {"normalization", std::string(to_string(c.normalization))},
           {"eval_policy", c.eval_policy},
           {"grid_confidence", c.grid_confidence},
           {"backends", c.backends}};
}

inline void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  static const std::set<std::string> known = {
      "dataset", "out", "axes", "K", "M", "N", "decoding_policies", "paraphraser", "target",
      "ensemble", "prepend_original", "seeds", "max_tokens", "want_logprobs", "concurrency",
      "judge", "weighting", "length_normalize", "labeling", "ece_bins", "normalization",
      "eval_policy", "grid_confidence", "backends"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ValidationError("unknown config key '" + key + "'");

  RunConfig d;
  c.dataset = detail::require_string(j, "dataset");
  c.out = j.value("out", d.out);
  c.axes.clear();
  if (j.contains("axes")) {
    for (const auto& a : j.at("axes")) c.axes.push_back(parse_axis(a.get<std::string>()));
  } else {
    c.axes = d.axes;
  }
  c.K = j.value("K", d.K);
  c.M = j.value("M", d.M);
  c.N = j.value("N", d.N);
  c.decoding_policies = j.contains("decoding_policies")
                            ? j.at("decoding_policies").get<std::vector<DecodingPolicy>>()
                            : d.decoding_policies;
  c.paraphraser = j.value("paraphraser", "");
  c.target = detail::require_string(j, "target");
  c.ensemble = j.value("ensemble", std::vector<std::string>{});
  c.prepend_original = j.value("prepend_original", false);
  c.seeds = j.value("seeds", std::vector<std::int64_t>{});
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.want_logprobs = j.value("want_logprobs", false);
  c.concurrency = j.value("concurrency", d.concurrency);
  c.judge = j.value("judge", JudgeConfig{});
  c.weighting = parse_weighting(j.value("weighting", "uniform"));
  c.length_normalize = j.value("length_normalize", false);
  c.labeling = j.value("labeling", LabelingConfig{});
  c.ece_bins = j.value("ece_bins", d.ece_bins);
  c.normalization = parse_normalization(j.value("normalization", "minmax"));
  c.eval_policy = j.value("eval_policy", d.eval_policy);
  (void)parse_policy_kind(c.eval_policy);
  c.grid_confidence = j.value("grid_confidence", d.grid_confidence);
  if (c.grid_confidence != "mean" && c.grid_confidence != "input" && c.grid_confidence != "decoding")
    throw ValidationError("unknown grid_confidence '" + c.grid_confidence + "'");
  c.backends = j.value("backends", std::map<std::string, BackendConfig>{});
  if (c.ece_bins == 0) throw ValidationError("ece_bins must be positive");
  if (c.concurrency == 0) throw ValidationError("concurrency must be positive");
}

inline RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  c.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return c;
}

// ---------------------------------------------------------------------------
// Construction from config

inline BackendRegistry build_backends(const RunConfig& config) {
  BackendRegistry reg;
  std::map<fs::path, std::shared_ptr<const SyntheticWorld>> worlds;
  std::map<fs::path, std::shared_ptr<ReplayStore>> stores;
  auto store_for = [&](const std::string& p) {
    const fs::path path = fs::absolute(config.resolve(p)).lexically_normal();
    auto& slot = stores[path];
    if (!slot) slot = std::make_shared<ReplayStore>(path);
    return slot;
  };
  for (const auto& [id, b] : config.backends) {
    std::shared_ptr<Backend> backend;
    if (b.type == "openai") {
      OpenAiConfig oc;
      oc.base_url = b.base_url;
      oc.model = b.model;
      oc.api_key = api_key_from_env();
      oc.max_in_flight = std::min(b.max_in_flight, config.concurrency);
      oc.retry.max_attempts = b.max_attempts;
      oc.retry.base_delay = std::chrono::milliseconds(b.retry_base_ms);
      backend = std::make_shared<OpenAiBackend>(id, oc);
    } else if (b.type == "synthetic") {
      const fs::path path = fs::absolute(config.resolve(b.world)).lexically_normal();
      auto& world = worlds[path];
      if (!world) {
        world = std::make_shared<const SyntheticWorld>(
            load_synthetic_world(json::parse(detail::read_file(path))));
      }
      backend = std::make_shared<SyntheticBackend>(id, world, b.member,
                                                   std::chrono::milliseconds(b.delay_ms));
    } else {
      backend = std::make_shared<ReplayBackend>(id, store_for(b.store));
    }
    if (!b.record_to.empty()) backend = std::make_shared<RecordingBackend>(backend, store_for(b.record_to));
    reg.emplace(id, std::move(backend));
  }
  return reg;
}

inline std::string nli_endpoint(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("UQD_NLI_ENDPOINT"); env && *env) return env;
  throw ValidationError("NLI judge needs an endpoint (config or UQD_NLI_ENDPOINT)");
}

inline std::shared_ptr<EquivalenceJudge> make_judge(const JudgeConfig& c) {
  if (c.kind == "exact") return std::make_shared<ExactJudge>();
  if (c.kind == "rouge") return std::make_shared<RougeJudge>(c.threshold, parse_rouge_variant(c.rouge_variant));
  return std::make_shared<NliJudge>(std::make_shared<HttpEntailmentScorer>(nli_endpoint(c.endpoint)),
                                    c.gamma, c.use_context);
}

inline ClusterOptions cluster_options(const RunConfig& c) {
  ClusterOptions o;
  o.mode = c.judge.clustering == "closure" ? ClusteringMode::closure : ClusteringMode::greedy_sequential;
  o.workers = c.judge.kind == "nli" ? c.concurrency : 1;
  return o;
}

}  // namespace uqd
