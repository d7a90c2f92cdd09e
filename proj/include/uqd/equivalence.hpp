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
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "uqd/detail/http.hpp"
#include "uqd/detail/parallel.hpp"
#include "uqd/records.hpp"
#include "uqd/sequence_probability.hpp"
#include "uqd/textmetrics.hpp"

namespace uqd {

struct EquivalenceVerdict {
  double forward_score = 0.0;   // a => b, or similarity
  double backward_score = 0.0;  // b => a
  bool equivalent = false;
};

// Decides whether two responses mean the same thing. Implementations must be
// safe to call concurrently.
class EquivalenceJudge {
 public:
  virtual ~EquivalenceJudge() = default;
  virtual EquivalenceVerdict judge(std::string_view a, std::string_view b,
                                   const std::optional<std::string>& context) const = 0;
  virtual std::string name() const = 0;
};

inline EquivalenceVerdict judge_pair(const EquivalenceJudge& judge, std::string_view a,
                                     std::string_view b,
                                     const std::optional<std::string>& context = std::nullopt) {
  return judge.judge(a, b, context);
}

// Equal after normalization.
class ExactJudge final : public EquivalenceJudge {
 public:
  EquivalenceVerdict judge(std::string_view a, std::string_view b,
                           const std::optional<std::string>&) const override {
    const bool same = normalize_text(a) == normalize_text(b);
    const double s = same ? 1.0 : 0.0;
    return {s, s, same};
  }
  std::string name() const override { return "exact"; }
};

// Rouge-L in both directions, each compared against the threshold.
class RougeJudge final : public EquivalenceJudge {
 public:
  explicit RougeJudge(double threshold = 0.3, RougeVariant variant = RougeVariant::f_measure)
      : threshold_(threshold), variant_(variant) {}

  EquivalenceVerdict judge(std::string_view a, std::string_view b,
                           const std::optional<std::string>&) const override {
    const TokenSequence ta = normalize_text(a), tb = normalize_text(b);
    const double fwd = rouge_l(ta, tb, variant_);
    const double bwd = rouge_l(tb, ta, variant_);
    return {fwd, bwd, fwd >= threshold_ && bwd >= threshold_};
  }
  std::string name() const override { return "rouge"; }
  double threshold() const { return threshold_; }

 private:
  double threshold_;
  RougeVariant variant_;
};

// Source of entailment probabilities p(premise => hypothesis).
class EntailmentScorer {
 public:
  virtual ~EntailmentScorer() = default;
  virtual double entailment_probability(const std::string& premise,
                                        const std::string& hypothesis) = 0;
};

// POSTs {"premise", "hypothesis"} and reads {"entailment_probability"}.
class HttpEntailmentScorer final : public EntailmentScorer {
 public:
  explicit HttpEntailmentScorer(const std::string& endpoint,
                                detail::RetryPolicy retry = {},
                                std::shared_ptr<detail::HttpTransport> transport = nullptr)
      : retry_(retry) {
    const auto url = detail::split_url(endpoint);
    path_ = url.path.empty() ? "/" : url.path;
    transport_ = transport ? std::move(transport)
                           : std::make_shared<detail::HttplibTransport>(url.origin);
  }

  double entailment_probability(const std::string& premise,
                                const std::string& hypothesis) override {
    const json body = {{"premise", premise}, {"hypothesis", hypothesis}};
    const auto res = detail::post_with_retries(*transport_, path_, body.dump(),
                                               {{"Accept", "application/json"}}, retry_);
    json parsed;
    try {
      parsed = json::parse(res.body);
    } catch (const json::parse_error&) {
      throw ProtocolError("NLI response is not JSON: " + res.body);
    }
    auto it = parsed.find("entailment_probability");
    if (!parsed.is_object() || it == parsed.end() || !it->is_number()) {
      throw ProtocolError("NLI response lacks numeric entailment_probability: " + res.body);
    }
    const double p = it->get<double>();
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ProtocolError("NLI entailment_probability outside [0,1]: " + res.body);
    }
    return p;
  }

 private:
  detail::RetryPolicy retry_;
  std::string path_;
  std::shared_ptr<detail::HttpTransport> transport_;
};

// Bidirectional entailment: equivalent iff both directions reach gamma.
// Scores are cached per (premise, hypothesis).
class NliJudge final : public EquivalenceJudge {
 public:
  NliJudge(std::shared_ptr<EntailmentScorer> scorer, double gamma = 0.5, bool use_context = true)
      : scorer_(std::move(scorer)), gamma_(gamma), use_context_(use_context) {}

  EquivalenceVerdict judge(std::string_view a, std::string_view b,
                           const std::optional<std::string>& context) const override {
    const std::string pa = decorate(a, context), pb = decorate(b, context);
    const double fwd = score(pa, pb);
    const double bwd = score(pb, pa);
    return {fwd, bwd, fwd >= gamma_ && bwd >= gamma_};
  }
  std::string name() const override { return "nli"; }
  double gamma() const { return gamma_; }

  std::size_t cache_size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
  }

 private:
  std::string decorate(std::string_view text, const std::optional<std::string>& context) const {
    if (!use_context_ || !context) return std::string(text);
    return "Q: " + *context + " A: " + std::string(text);
  }

  double score(const std::string& premise, const std::string& hypothesis) const {
    const auto key = std::make_pair(premise, hypothesis);
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const double p = scorer_->entailment_probability(premise, hypothesis);
    std::lock_guard lock(mutex_);
    cache_.emplace(key, p);
    return p;
  }

  std::shared_ptr<EntailmentScorer> scorer_;
  double gamma_;
  bool use_context_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<std::string, std::string>, double> cache_;
};

// ---------------------------------------------------------------------------
// Disjoint-set union with path halving and union by size.

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

  // Components with members ascending, ordered by smallest member.
  std::vector<std::vector<std::size_t>> groups() {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> slot(parent_.size(), std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < parent_.size(); ++i) {
      const std::size_t r = find(i);
      if (slot[r] == std::numeric_limits<std::size_t>::max()) {
        slot[r] = out.size();
        out.emplace_back();
      }
      out[slot[r]].push_back(i);
    }
    return out;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

// ---------------------------------------------------------------------------
// Clustering

struct SemanticClustering {
  // Each cluster lists record indices ascending; clusters ordered by first index.
  std::vector<std::vector<std::size_t>> clusters;
  // p(c) per cluster; unset until masses are assigned.
  std::optional<std::vector<double>> masses;

  std::size_t num_items() const {
    std::size_t n = 0;
    for (const auto& c : clusters) n += c.size();
    return n;
  }
};

enum class ClusteringMode {
  closure,            // connected components of the pairwise-equivalence graph
  greedy_sequential,  // compare each response to the first member of each existing cluster
};

struct ClusterOptions {
  ClusteringMode mode = ClusteringMode::closure;
  std::size_t workers = 1;  // concurrent judge calls within one bundle
};

inline SemanticClustering cluster_texts(const std::vector<std::string>& texts,
                                        const EquivalenceJudge& judge,
                                        const std::optional<std::string>& context = std::nullopt,
                                        const ClusterOptions& options = {}) {
  const std::size_t n = texts.size();
  SemanticClustering out;
  if (options.mode == ClusteringMode::greedy_sequential) {
    for (std::size_t i = 0; i < n; ++i) {
      bool placed = false;
      for (auto& cluster : out.clusters) {
        if (judge.judge(texts[cluster.front()], texts[i], context).equivalent) {
          cluster.push_back(i);
          placed = true;
          break;
        }
      }
      if (!placed) out.clusters.push_back({i});
    }
    return out;
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n > 1 ? n * (n - 1) / 2 : 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::vector<char> edge(pairs.size(), 0);
  detail::parallel_for(pairs.size(), options.workers, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    edge[k] = judge.judge(texts[i], texts[j], context).equivalent ? 1 : 0;
  });
  DisjointSet dsu(n);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (edge[k]) dsu.unite(pairs[k].first, pairs[k].second);
  }
  out.clusters = dsu.groups();
  return out;
}

inline SemanticClustering cluster_bundle(const ResponseBundle& bundle,
                                         const EquivalenceJudge& judge,
                                         const std::optional<std::string>& context = std::nullopt,
                                         const ClusterOptions& options = {}) {
  std::vector<std::string> texts;
  texts.reserve(bundle.size());
  for (const auto& r : bundle.records()) texts.push_back(r.text);
  return cluster_texts(texts, judge, context, options);
}

// ---------------------------------------------------------------------------
// Cluster masses

enum class Weighting { uniform, sequence_prob };

inline std::string_view to_string(Weighting w) {
  return w == Weighting::uniform ? "uniform" : "sequence_prob";
}

inline Weighting parse_weighting(std::string_view s) {
  if (s == "uniform") return Weighting::uniform;
  if (s == "sequence_prob") return Weighting::sequence_prob;
  throw ValidationError("unknown weighting '" + std::string(s) + "'");
}

// Normalizes per-response log-weights into cluster masses, in log space so long
// sequences whose raw probabilities underflow still get their relative share.
inline SemanticClustering assign_masses_from_log_weights(SemanticClustering clustering,
                                                         const std::vector<double>& log_weights) {
  if (clustering.num_items() != log_weights.size()) {
    throw ValidationError("clustering covers " + std::to_string(clustering.num_items()) +
                          " items but " + std::to_string(log_weights.size()) + " weights given");
  }
  auto logsumexp = [](const std::vector<double>& xs) {
    const double m = *std::max_element(xs.begin(), xs.end());
    if (m == -std::numeric_limits<double>::infinity()) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
  };
  std::vector<double> cluster_log(clustering.clusters.size());
  for (std::size_t c = 0; c < clustering.clusters.size(); ++c) {
    std::vector<double> members;
    for (std::size_t i : clustering.clusters[c]) members.push_back(log_weights.at(i));
    cluster_log[c] = logsumexp(members);
  }
  const double total = logsumexp(cluster_log);
  if (!std::isfinite(total)) throw ValidationError("all response weights are zero");
  std::vector<double> masses(cluster_log.size());
  for (std::size_t c = 0; c < masses.size(); ++c) masses[c] = std::exp(cluster_log[c] - total);
  clustering.masses = std::move(masses);
  return clustering;
}

inline SemanticClustering assign_masses(SemanticClustering clustering, const ResponseBundle& bundle,
                                        Weighting weighting, bool length_normalize = false) {
  std::vector<double> log_weights(bundle.size(), 0.0);
  if (weighting == Weighting::sequence_prob) {
    for (std::size_t i = 0; i < bundle.size(); ++i) {
      const auto& r = bundle.records()[i];
      if (!r.token_logprobs || r.token_logprobs->empty()) {
        throw MissingLogprobsError(
            "sequence_prob weighting needs token_logprobs; missing on record prompt_id='" +
            r.prompt_id + "' variant_key='" + r.variant_key + "' backend_id='" + r.backend_id +
            "'");
      }
      log_weights[i] = sequence_log_probability(*r.token_logprobs, length_normalize);
    }
  }
  return assign_masses_from_log_weights(std::move(clustering), log_weights);
}

}  // namespace uqd
