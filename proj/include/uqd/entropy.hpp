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

#include <cmath>
#include <optional>
#include <string>

#include "uqd/detail/hash.hpp"
#include "uqd/detail/log.hpp"
#include "uqd/equivalence.hpp"
#include "uqd/records.hpp"
#include "uqd/sequence_probability.hpp"

namespace uqd {

// Clusters whose mass falls below this are dropped before the entropy sum.
inline constexpr double kNegligibleMass = 1e-300;

// -sum_c p(c) ln p(c), in nats.
inline double semantic_entropy(const SemanticClustering& clustering) {
  if (!clustering.masses) throw ValidationError("semantic_entropy: cluster masses are unset");
  const auto& masses = *clustering.masses;
  if (masses.size() != clustering.clusters.size())
    throw ValidationError("semantic_entropy: one mass per cluster required");
  double total = 0.0;
  for (double m : masses) {
    if (!(m >= 0.0)) throw ValidationError("semantic_entropy: negative cluster mass");
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ValidationError("semantic_entropy: masses sum to " + std::to_string(total));
  double h = 0.0;
  std::size_t dropped = 0;
  for (double m : masses) {
    if (m < kNegligibleMass) {
      ++dropped;
      continue;
    }
    h -= m * std::log(m);
  }
  if (dropped > 0) log().warn("event=negligible_clusters_dropped count={}", dropped);
  return h > 0.0 ? h : 0.0;
}

struct UncertaintyScore {
  std::string prompt_id;
  Axis axis = Axis::input;
  double value = 0.0;  // nats
  std::size_t num_clusters = 0;
  std::size_t num_responses = 0;
  Weighting weighting = Weighting::uniform;
  std::string clustering_ref;

  bool operator==(const UncertaintyScore&) const = default;
};

inline void to_json(json& j, const UncertaintyScore& s) {
  j = json{{"prompt_id", s.prompt_id},
           {"axis", std::string(to_string(s.axis))},
           {"value", s.value},
           {"num_clusters", s.num_clusters},
           {"num_responses", s.num_responses},
           {"weighting", std::string(to_string(s.weighting))},
           {"clustering_ref", s.clustering_ref}};
}

inline void from_json(const json& j, UncertaintyScore& s) {
  s.prompt_id = detail::require_string(j, "prompt_id");
  s.axis = parse_axis(detail::require_string(j, "axis"));
  s.value = detail::require_field(j, "value").get<double>();
  s.num_clusters = detail::require_field(j, "num_clusters").get<std::size_t>();
  s.num_responses = detail::require_field(j, "num_responses").get<std::size_t>();
  s.weighting = parse_weighting(detail::require_string(j, "weighting"));
  s.clustering_ref = detail::optional_string(j, "clustering_ref");
}

struct ScoringOptions {
  Weighting weighting = Weighting::uniform;
  bool length_normalize = false;
  // Question text handed to judges that use it.
  std::optional<std::string> context;
  ClusterOptions cluster;
};

struct ScoredBundle {
  UncertaintyScore score;
  SemanticClustering clustering;
};

// "{axis}/{policy}/{prompt_id}#<digest of the partition>"
inline std::string clustering_ref(const ResponseBundle& bundle,
                                  const SemanticClustering& clustering) {
  json parts = clustering.clusters;
  return std::string(to_string(bundle.axis())) + "/" +
         std::string(to_string(bundle.records().front().policy.kind())) + "/" +
         bundle.prompt_id() + "#" + detail::sha256_hex(parts.dump()).substr(0, 12);
}

// cluster -> masses -> entropy. The axis is provenance only; all three
// components share this kernel.
inline ScoredBundle score_bundle_detailed(const ResponseBundle& bundle,
                                          const EquivalenceJudge& judge,
                                          const ScoringOptions& options = {}) {
  SemanticClustering clustering = assign_masses(
      cluster_bundle(bundle, judge, options.context, options.cluster), bundle,
      options.weighting, options.length_normalize);
  UncertaintyScore score;
  score.prompt_id = bundle.prompt_id();
  score.axis = bundle.axis();
  score.value = semantic_entropy(clustering);
  score.num_clusters = clustering.clusters.size();
  score.num_responses = bundle.size();
  score.weighting = options.weighting;
  score.clustering_ref = clustering_ref(bundle, clustering);
  return {std::move(score), std::move(clustering)};
}

inline UncertaintyScore score_bundle(const ResponseBundle& bundle, const EquivalenceJudge& judge,
                                     const ScoringOptions& options = {}) {
  return score_bundle_detailed(bundle, judge, options).score;
}

namespace detail {
inline void require_axis(const ResponseBundle& bundle, Axis axis) {
  if (bundle.axis() != axis) {
    throw ValidationError("expected a " + std::string(to_string(axis)) + " bundle, got " +
                          std::string(to_string(bundle.axis())));
  }
}
}  // namespace detail

// Input ambiguity: responses to K paraphrases under one model and policy.
inline UncertaintyScore score_input(const ResponseBundle& bundle, const EquivalenceJudge& judge,
                                    const ScoringOptions& options = {}) {
  detail::require_axis(bundle, Axis::input);
  return score_bundle(bundle, judge, options);
}

// Knowledge gaps: one response from each of M ensemble members on a fixed prompt.
inline UncertaintyScore score_knowledge(const ResponseBundle& bundle,
                                        const EquivalenceJudge& judge,
                                        const ScoringOptions& options = {}) {
  detail::require_axis(bundle, Axis::knowledge);
  return score_bundle(bundle, judge, options);
}

// Decoding randomness: N seeded generations under one policy.
inline UncertaintyScore score_decoding(const ResponseBundle& bundle,
                                       const EquivalenceJudge& judge,
                                       const ScoringOptions& options = {}) {
  detail::require_axis(bundle, Axis::decoding);
  return score_bundle(bundle, judge, options);
}

}  // namespace uqd
