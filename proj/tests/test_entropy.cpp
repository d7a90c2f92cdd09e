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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "uqd/entropy.hpp"

namespace uqd {
namespace {

SemanticClustering with_masses(std::vector<double> masses) {
  SemanticClustering c;
  for (std::size_t i = 0; i < masses.size(); ++i) c.clusters.push_back({i});
  c.masses = std::move(masses);
  return c;
}

TEST(Entropy, Examples) {
  EXPECT_EQ(semantic_entropy(with_masses({1.0})), 0.0);
  EXPECT_NEAR(semantic_entropy(with_masses({0.2, 0.2, 0.2, 0.2, 0.2})), 1.6094379124341003, 1e-12);
  EXPECT_NEAR(semantic_entropy(with_masses({0.75, 0.25})), 0.5623351446188083, 1e-12);
}

TEST(Entropy, EqualMassesGiveLogK) {
  for (int k = 1; k <= 64; ++k) {
    std::vector<double> m(k, 1.0 / k);
    EXPECT_NEAR(semantic_entropy(with_masses(m)), std::log(static_cast<double>(k)), 1e-12);
  }
}

TEST(Entropy, RejectsBadMasses) {
  EXPECT_THROW(semantic_entropy(SemanticClustering{{{0}}, std::nullopt}), ValidationError);
  EXPECT_THROW(semantic_entropy(with_masses({0.5, 0.6})), ValidationError);
  EXPECT_THROW(semantic_entropy(with_masses({1.5, -0.5})), ValidationError);
}

TEST(Entropy, NegligibleClustersDropped) {
  EXPECT_EQ(semantic_entropy(with_masses({1.0, 1e-320})), 0.0);
}

// Merging two clusters is a majorizing move; entropy must not rise. Moving
// mass from a larger to a smaller cluster without crossing must not lower it.
TEST(Entropy, SchurConcave) {
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + rng() % 6;
    std::vector<double> m(k);
    double total = 0;
    for (auto& x : m) total += (x = u(rng));
    for (auto& x : m) x /= total;
    const double h = semantic_entropy(with_masses(m));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(k)) + 1e-12);

    auto merged = m;
    merged[0] += merged[1];
    merged.erase(merged.begin() + 1);
    EXPECT_LE(semantic_entropy(with_masses(merged)), h + 1e-12);

    auto spread = m;
    auto [lo, hi] = std::minmax_element(spread.begin(), spread.end());
    const double t = (*hi - *lo) / 2 * std::uniform_real_distribution<double>(0, 1)(rng);
    *hi -= t;
    *lo += t;
    EXPECT_GE(semantic_entropy(with_masses(spread)), h - 1e-12);
  }
}

TEST(Score, InputExamples) {
  ExactJudge j;
  using testing::input_bundle;
  EXPECT_EQ(score_input(input_bundle({"a", "a", "a", "a", "a"}), j).value, 0.0);
  EXPECT_NEAR(score_input(input_bundle({"a", "b", "c", "d", "e"}), j).value, std::log(5.0), 1e-12);
  const auto s = score_input(input_bundle({"a", "b", "a", "b", "a"}), j);
  EXPECT_NEAR(s.value, 0.6730116670092565, 1e-12);
  EXPECT_EQ(s.num_clusters, 2u);
  EXPECT_EQ(s.num_responses, 5u);
  EXPECT_EQ(s.axis, Axis::input);
  EXPECT_EQ(s.clustering_ref.rfind("input/greedy/p#", 0), 0u);
}

TEST(Score, AxisChecked) {
  ExactJudge j;
  EXPECT_THROW(score_knowledge(testing::input_bundle({"a", "b"}), j), ValidationError);
  EXPECT_THROW(score_decoding(testing::input_bundle({"a", "b"}), j), ValidationError);
}

TEST(Score, KnowledgeAndDecodingShareKernel) {
  using testing::make_record;
  ExactJudge j;
  std::vector<GenerationRecord> k, d;
  const char* texts[] = {"x", "y", "x", "y", "x"};
  for (int i = 0; i < 5; ++i) {
    k.push_back(make_record("p", "m" + std::to_string(i), texts[i], DecodingPolicy::greedy(), "m" + std::to_string(i)));
    d.push_back(make_record("p", std::to_string(i), texts[i], DecodingPolicy::temperature().with_seed(i)));
  }
  const double expect = 0.6730116670092565;
  EXPECT_NEAR(score_knowledge(ResponseBundle("p", Axis::knowledge, k), j).value, expect, 1e-12);
  EXPECT_NEAR(score_decoding(ResponseBundle("p", Axis::decoding, d), j).value, expect, 1e-12);
}

TEST(Score, RandomBundlesMatchStraightLineOracle) {
  std::mt19937 rng(37);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  ExactJudge j;
  ScoringOptions opts;
  opts.weighting = Weighting::sequence_prob;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 5;
    std::vector<std::string> texts;
    std::vector<double> probs, logs;
    for (std::size_t i = 0; i < n; ++i) {
      texts.push_back(std::string(1, "pqrs"[rng() % 4]));
      probs.push_back(u(rng));
      logs.push_back(std::log(probs.back()));
    }
    const double got = score_input(testing::input_bundle(texts, logs), j, opts).value;
    ASSERT_NEAR(got, testing::straight_entropy(texts, probs), 1e-9);
  }
}

TEST(Score, LengthNormalizedWeights) {
  using testing::make_record;
  std::vector<GenerationRecord> recs{
      make_record("p", "0", "a", DecodingPolicy::greedy(), "b", std::vector<double>{-1.0, -1.0}),
      make_record("p", "1", "b", DecodingPolicy::greedy(), "b", std::vector<double>{-1.0})};
  ResponseBundle bundle("p", Axis::input, recs);
  ScoringOptions opts;
  opts.weighting = Weighting::sequence_prob;
  opts.length_normalize = true;
  EXPECT_NEAR(score_bundle(bundle, ExactJudge{}, opts).value, std::log(2.0), 1e-12);
  opts.length_normalize = false;
  const double pa = std::exp(-2.0), pb = std::exp(-1.0);
  EXPECT_NEAR(score_bundle(bundle, ExactJudge{}, opts).value,
              testing::straight_entropy({"a", "b"}, {pa, pb}), 1e-12);
}

TEST(Score, JsonRoundTrip) {
  const auto s = score_input(testing::input_bundle({"a", "b"}), ExactJudge{});
  const auto back = json(s).get<UncertaintyScore>();
  EXPECT_EQ(back.value, s.value);
  EXPECT_EQ(back.clustering_ref, s.clustering_ref);
  EXPECT_EQ(back.weighting, s.weighting);
}

}  // namespace
}  // namespace uqd
