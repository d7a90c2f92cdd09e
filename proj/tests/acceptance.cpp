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

// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "support.hpp"
#include "uqd/uqd.hpp"

extern char** environ;

namespace {

using namespace uqd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 5) failures.push_back(what);
  }
};

// ---------------------------------------------------------------------------
// 1. Semantic-entropy kernel

std::string criterion1(Check& c) {
  const auto t0 = Clock::now();
  ExactJudge judge;
  for (std::size_t n = 2; n <= 8; ++n) {
    const double v = score_input(testing::input_bundle(std::vector<std::string>(n, "same")), judge).value;
    c.expect(v == 0.0, "single cluster of " + std::to_string(n) + " scored " + std::to_string(v));
  }
  double worst_lnk = 0;
  for (std::size_t k = 2; k <= 12; ++k) {
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < k; ++i) texts.push_back("t" + std::to_string(i));
    const double uniform = score_input(testing::input_bundle(texts), judge).value;
    ScoringOptions seq;
    seq.weighting = Weighting::sequence_prob;
    const double weighted =
        score_input(testing::input_bundle(texts, std::vector<double>(k, std::log(0.3))), judge, seq).value;
    // Two responses per cluster with unequal members but equal cluster totals.
    std::vector<std::string> doubled;
    std::vector<double> lps;
    for (std::size_t i = 0; i < k; ++i) {
      doubled.push_back(texts[i]);
      doubled.push_back(texts[i] + ".");
      lps.push_back(std::log(0.1));
      lps.push_back(std::log(0.2));
    }
    const double paired = score_input(testing::input_bundle(doubled, lps), judge, seq).value;
    for (double v : {uniform, weighted, paired})
      worst_lnk = std::max(worst_lnk, std::abs(v - std::log(static_cast<double>(k))));
  }
  c.expect(worst_lnk <= 1e-12, "ln k deviation " + std::to_string(worst_lnk));

  std::mt19937 rng(1001);
  std::uniform_real_distribution<double> u(1e-4, 1.0);
  ScoringOptions seq;
  seq.weighting = Weighting::sequence_prob;
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 5;
    std::vector<std::string> texts;
    std::vector<double> probs, lps;
    for (std::size_t i = 0; i < n; ++i) {
      texts.push_back(std::string(1, "abcd"[rng() % 4]));
      probs.push_back(u(rng));
      lps.push_back(std::log(probs.back()));
    }
    const double got = score_input(testing::input_bundle(texts, lps), judge, seq).value;
    worst = std::max(worst, std::abs(got - testing::straight_entropy(texts, probs)));
  }
  c.expect(worst <= 1e-9, "oracle deviation " + std::to_string(worst));
  const double secs = seconds_since(t0);
  c.expect(secs < 5.0, "runtime " + std::to_string(secs) + " s");
  char buf[160];
  std::snprintf(buf, sizeof buf, "1000 random bundles max |err| = %.2e; ln k max |err| = %.2e; %.2f s", worst,
                worst_lnk, secs);
  return buf;
}

// ---------------------------------------------------------------------------
// 2. Clustering

class ChainJudge final : public EquivalenceJudge {
 public:
  EquivalenceVerdict judge(std::string_view a, std::string_view b,
                           const std::optional<std::string>&) const override {
    auto adjacent = [](std::string_view x, std::string_view y) {
      return (x == "A" && y == "B") || (x == "B" && y == "C");
    };
    const bool eq = a == b || adjacent(a, b) || adjacent(b, a);
    return {eq ? 1.0 : 0.0, eq ? 1.0 : 0.0, eq};
  }
  std::string name() const override { return "chain"; }
};

std::string criterion2(Check& c) {
  std::mt19937 rng(2002);
  RougeJudge rouge(0.5);
  const std::vector<std::string> words{"red", "blue", "green", "the", "a", "car", "cat"};
  std::size_t perm_cases = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::string> texts;
    for (int k = 2 + rng() % 7; k > 0; --k) {
      std::string t;
      for (int w = 1 + rng() % 3; w > 0; --w) t += words[rng() % words.size()] + " ";
      texts.push_back(t);
    }
    std::vector<std::size_t> perm(texts.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> shuffled;
    for (auto i : perm) shuffled.push_back(texts[i]);
    testing::Partition mapped;
    for (const auto& cl : cluster_texts(shuffled, rouge).clusters) {
      std::set<std::size_t> s;
      for (auto i : cl) s.insert(perm[i]);
      mapped.insert(s);
    }
    c.expect(mapped == testing::to_partition(cluster_texts(texts, rouge).clusters),
             "permutation changed partition on trial " + std::to_string(trial));
    ++perm_cases;
  }

  ChainJudge chain;
  const bool ac = chain.judge("A", "C", std::nullopt).equivalent;
  const auto chained = cluster_texts({"A", "B", "C"}, chain);
  c.expect(!ac && chained.clusters.size() == 1 && chained.clusters[0].size() == 3, "chain A~B~C not merged");
  const auto chained2 = cluster_texts({"C", "A", "B"}, chain);
  c.expect(chained2.clusters.size() == 1, "chain with B last not merged");

  ExactJudge exact;
  const std::vector<std::string> surface{"Paris", "paris.", "PARIS", "Lyon", "lyon!", "Nice", "nice ", "New York", "new-york"};
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> texts, keys;
    for (int k = 1 + rng() % 9; k > 0; --k) {
      texts.push_back(surface[rng() % surface.size()]);
      std::string key;
      const TokenSequence norm = normalize_text(texts.back());
      for (const auto& tok : norm.tokens()) key += tok + "\x1f";
      keys.push_back(key);
    }
    c.expect(testing::to_partition(cluster_texts(texts, exact).clusters) == testing::hash_grouping(keys),
             "exact clustering differs from hash grouping on trial " + std::to_string(trial));
  }
  return std::to_string(perm_cases) + " permutation cases, chain merged, 1000 hash-grouping cases";
}

// ---------------------------------------------------------------------------
// 3. Rouge-L

std::string criterion3(Check& c) {
  const auto t0 = Clock::now();
  // Sequences ordered longest first, so the lowest common set bit of two
  // subsequence sets is a longest common subsequence.
  std::vector<std::vector<std::string>> seqs;
  for (int len = 8; len >= 0; --len) {
    int count = 1;
    for (int i = 0; i < len; ++i) count *= 3;
    for (int code = 0; code < count; ++code) {
      std::vector<std::string> s;
      for (int i = 0, x = code; i < len; ++i, x /= 3) s.emplace_back(1, "abc"[x % 3]);
      seqs.push_back(std::move(s));
    }
  }
  const std::size_t n = seqs.size();
  const std::size_t words = (n + 63) / 64;
  std::map<std::vector<std::string>, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index[seqs[i]] = i;
  std::vector<std::uint64_t> subseq(n * words, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = seqs[i];
    for (std::uint32_t mask = 0; mask < (1u << s.size()); ++mask) {
      std::vector<std::string> sub;
      for (std::size_t k = 0; k < s.size(); ++k)
        if (mask & (1u << k)) sub.push_back(s[k]);
      const std::size_t j = index.at(sub);
      subseq[i * words + j / 64] |= std::uint64_t{1} << (j % 64);
    }
  }
  std::vector<TokenSequence> tokens;
  for (const auto& s : seqs) tokens.emplace_back(s);

  std::size_t pairs = 0, mismatches = 0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const std::uint64_t* A = &subseq[a * words];
      const std::uint64_t* B = &subseq[b * words];
      std::size_t w = 0;
      std::uint64_t x = 0;
      for (; w < words; ++w)
        if ((x = A[w] & B[w]) != 0) break;
      const double lcs = static_cast<double>(seqs[w * 64 + std::countr_zero(x)].size());
      const double la = static_cast<double>(seqs[a].size()), lb = static_cast<double>(seqs[b].size());
      double oracle = 0.0;
      if (lcs > 0) {
        const double p = lcs / la, r = lcs / lb;
        oracle = 2 * p * r / (p + r);
      }
      if (std::abs(rouge_l(tokens[a], tokens[b]) - oracle) > 1e-12) ++mismatches;
      ++pairs;
    }
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " pairs disagree with the enumeration oracle");

  std::size_t identity_bad = 0, disjoint_bad = 0;
  for (const auto& s : seqs) {
    if (s.empty()) continue;
    const TokenSequence t(s);
    if (rouge_l(t, t) != 1.0) ++identity_bad;
    std::vector<std::string> other;
    for (const auto& tok : s) other.push_back(tok == "a" ? "x" : tok == "b" ? "y" : "z");
    if (rouge_l(t, TokenSequence(other)) != 0.0) ++disjoint_bad;
  }
  c.expect(identity_bad == 0, "rouge_l(s,s) != 1 for " + std::to_string(identity_bad) + " sequences");
  c.expect(disjoint_bad == 0, "disjoint vocab nonzero for " + std::to_string(disjoint_bad) + " sequences");
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu ordered pairs over {a,b,c}^<=8 agree; identity and disjoint cases hold; %.1f s",
                pairs, seconds_since(t0));
  return buf;
}

// ---------------------------------------------------------------------------
// 4. AUROC

std::string criterion4(Check& c) {
  std::mt19937 rng(4004);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    std::vector<double> s(n);
    std::vector<bool> f(n);
    const bool discrete = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = discrete ? static_cast<double>(rng() % 5) : u(rng);
      f[i] = rng() % 3 == 0;
    }
    f[0] = true;
    f[1] = false;
    worst = std::max(worst, std::abs(auroc(s, f) - testing::pairwise_auroc(s, f)));

    std::vector<double> e(n), a(n);
    for (std::size_t i = 0; i < n; ++i) {
      e[i] = std::exp(s[i]);
      a[i] = 3 * s[i] + 1;
    }
    const double base = auroc(s, f);
    c.expect(auroc(e, f) == base && auroc(a, f) == base, "monotone transform changed AUROC on trial " + std::to_string(trial));
  }
  c.expect(worst <= 1e-12, "pairwise deviation " + std::to_string(worst));
  for (std::size_t n = 2; n < 50; ++n) {
    std::vector<bool> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = i % 2;
    c.expect(auroc(std::vector<double>(n, 0.7), f) == 0.5, "all ties not 0.5 at n=" + std::to_string(n));
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "1000 sets max |err| = %.2e vs pairwise enumeration; ties 0.5; transforms exact", worst);
  return buf;
}

// ---------------------------------------------------------------------------
// 5. ECE

std::string criterion5(Check& c) {
  // Bin b holds 20 examples at confidence (2b+1)/20, of which 2b+1 fail.
  std::vector<double> conf;
  std::vector<bool> fail;
  for (int b = 0; b < 10; ++b)
    for (int i = 0; i < 20; ++i) {
      conf.push_back((2.0 * b + 1) / 20.0);
      fail.push_back(i < 2 * b + 1);
    }
  const double calibrated = ece(conf, fail, 10);
  c.expect(calibrated <= 1e-12, "calibrated ECE " + std::to_string(calibrated));
  const double two = ece({0.05, 0.95}, {false, false}, 10);
  c.expect(two == 0.5, "two-point ECE " + std::to_string(two));
  char buf[120];
  std::snprintf(buf, sizeof buf, "calibrated ECE = %.2e; two-point case = %.17g", calibrated, two);
  return buf;
}

// ---------------------------------------------------------------------------
// Synthetic datasets run through the real collect/score/eval stack.

struct SyntheticRun {
  fs::path dir;
  json world = {{"seed", 99}, {"questions", json::array()}};
  std::string prompts;
  RunConfig config;

  explicit SyntheticRun(const std::string& name) : dir(testing::scratch_dir(name)) {}

  void add(const std::string& id, const std::string& question, const std::string& reference, json spec) {
    spec["question"] = question;
    world["questions"].push_back(std::move(spec));
    prompts += json{{"id", id}, {"question", question}, {"reference_answer", reference}}.dump() + "\n";
  }

  EvalRun run(std::vector<Axis> axes, std::vector<DecodingPolicy> policies, std::size_t k = 5, std::size_t n = 5) {
    testing::spit(dir / "world.json", world.dump());
    testing::spit(dir / "prompts.jsonl", prompts);
    config.dataset = "prompts.jsonl";
    config.base_dir = dir;
    config.out = "out";
    config.axes = std::move(axes);
    config.K = k;
    config.N = n;
    config.decoding_policies = std::move(policies);
    config.paraphraser = "syn";
    config.target = "syn";
    config.concurrency = 4;
    config.eval_policy = "temperature";
    BackendConfig b;
    b.type = "synthetic";
    b.world = "world.json";
    config.backends = {{"syn", b}};
    const auto collected = run_collection(config.plan(), build_backends(config));
    if (!collected.complete()) throw std::runtime_error("collection incomplete");
    ExactJudge judge;
    const auto scored = score_directory(config, judge);
    if (!scored.unscored.empty()) throw std::runtime_error("unscored bundles");
    return evaluate_directory(config);
  }

  std::map<std::string, double> scores(const std::string& slot) const {
    return read_score_file(config.out_dir() / "scores" / (slot + ".jsonl"));
  }
};

json dist(std::initializer_list<std::pair<std::string, double>> d) {
  json out = json::array();
  for (const auto& [a, p] : d) out.push_back({a, p});
  return out;
}

json spread(const std::string& first, std::size_t m) {
  json out = json::array();
  out.push_back({first, 1.0 / m});
  for (std::size_t i = 1; i < m; ++i) out.push_back({"option" + std::to_string(i), 1.0 / m});
  return out;
}

// ---------------------------------------------------------------------------
// 6. Decomposition fidelity

std::string criterion6(Check& c) {
  const auto t0 = Clock::now();
  // Part A: paraphrase-sensitive answers, greedy decoding.
  SyntheticRun a("c6-input");
  std::mt19937 rng(6006);
  const std::vector<std::string> pool{"oak", "elm", "ash", "fir", "yew"};
  std::map<std::string, double> analytic;
  for (int i = 0; i < 60; ++i) {
    const std::string id = "a" + std::to_string(i);
    json spec = {{"answers", dist({{pool[0], 0.7}, {pool[1], 0.3}})}, {"seed", i}};
    std::map<std::string, int> modes;
    for (int k = 0; k < 5; ++k) {
      const auto& mode = pool[rng() % (1 + i % 5)];
      spec["paraphrase_sensitivity"][std::to_string(k)] = dist({{mode, 0.6}, {mode == "oak" ? "elm" : "oak", 0.4}});
      ++modes[mode];
    }
    double h = 0;
    for (const auto& [_, cnt] : modes) h -= cnt / 5.0 * std::log(cnt / 5.0);
    analytic[id] = h;
    a.add(id, "Input question " + std::to_string(i) + "?", pool[0], spec);
  }
  a.run({Axis::input, Axis::decoding}, {DecodingPolicy::greedy()});
  const auto u_in = a.scores("input/greedy");
  const auto u_greedy = a.scores("decoding/greedy");
  double worst_in = 0, worst_dec = 0;
  for (const auto& [id, h] : analytic) {
    worst_in = std::max(worst_in, std::abs(u_in.at(id) - h));
    worst_dec = std::max(worst_dec, std::abs(u_greedy.at(id)));
  }
  c.expect(u_in.size() == 60 && worst_in <= 0.05, "U_input deviation " + std::to_string(worst_in));
  c.expect(worst_dec == 0.0, "greedy U_dec nonzero: " + std::to_string(worst_dec));

  // Part B: fixed distributions, temperature sampling with N=5.
  SyntheticRun b("c6-decoding");
  const std::vector<std::vector<double>> families{{0.5, 0.3, 0.2}, {0.8, 0.2}, {0.4, 0.3, 0.2, 0.1}, {0.6, 0.25, 0.15}};
  double expected = 0;
  for (int i = 0; i < 200; ++i) {
    const auto& probs = families[i % families.size()];
    json d = json::array();
    for (std::size_t k = 0; k < probs.size(); ++k) d.push_back({pool[k], probs[k]});
    b.add("d" + std::to_string(i), "Decoding question " + std::to_string(i) + "?", pool[0], {{"answers", d}, {"seed", i}});
    expected += testing::expected_draw_entropy(probs, 5) / 200.0;
  }
  b.run({Axis::decoding}, {DecodingPolicy::temperature(0.7)});
  const auto u_dec = b.scores("decoding/temperature");
  double mean = 0;
  for (const auto& [_, v] : u_dec) mean += v / static_cast<double>(u_dec.size());
  c.expect(u_dec.size() == 200 && std::abs(mean - expected) <= 0.1,
           "mean U_dec " + std::to_string(mean) + " vs " + std::to_string(expected));
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime " + std::to_string(secs) + " s");
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "U_input max |err| = %.2e over 60 prompts, greedy U_dec = 0; mean U_dec %.4f vs exact %.4f; %.1f s",
                worst_in, mean, expected, secs);
  return buf;
}

// ---------------------------------------------------------------------------
// 7. Failure-prediction sanity

std::optional<double> row_auroc(const EvalRun& run, const std::string& axis) {
  for (const auto& row : run.report.rows)
    for (const auto& m : row.axes)
      if (m.axis == axis) return m.auroc;
  return std::nullopt;
}

// Ambiguous prompts get paraphrase-dependent answers; noisy prompts a flat
// sampling distribution. `fails` decides which prompts have a wrong mode.
EvalRun injected_run(const std::string& name, std::size_t n,
                     const std::function<int(std::size_t)>& ambiguity,
                     const std::function<int(std::size_t)>& noise,
                     const std::function<bool(std::size_t)>& fails) {
  SyntheticRun run(name);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string right = "right" + std::to_string(i % 7), wrong = "wrong" + std::to_string(i % 5);
    const std::string top = fails(i) ? wrong : right;
    json spec;
    spec["seed"] = i;
    switch (noise(i)) {
      case 0: spec["answers"] = dist({{top, 1.0}}); break;
      case 1: spec["answers"] = dist({{top, 0.5}, {"other", 0.5}}); break;
      default: spec["answers"] = spread(top, 20); break;
    }
    const int amb = ambiguity(i);
    if (amb >= 1) spec["paraphrase_sensitivity"]["1"] = dist({{"alt1", 1.0}});
    if (amb >= 2) {
      spec["paraphrase_sensitivity"]["2"] = dist({{"alt2", 1.0}});
      spec["paraphrase_sensitivity"]["3"] = dist({{"alt2", 1.0}});
    }
    run.add("x" + std::to_string(i), "Probe " + std::to_string(i) + " of " + name + "?", right, spec);
  }
  return run.run({Axis::input, Axis::decoding}, {DecodingPolicy::greedy(), DecodingPolicy::temperature()});
}

std::string criterion7(Check& c) {
  // Failures only where input ambiguity is high; decoding noise balanced across groups.
  const auto by_input = injected_run(
      "c7-input", 400, [](std::size_t i) { return i % 2 ? 2 : 0; }, [](std::size_t i) { return 1 + (i / 2) % 2; },
      [](std::size_t i) { return i % 2 == 1; });
  const auto in_a = row_auroc(by_input, "input"), dec_a = row_auroc(by_input, "decoding");
  c.expect(in_a && *in_a >= 0.9, "input AUROC " + (in_a ? std::to_string(*in_a) : "undefined"));
  c.expect(dec_a && *dec_a >= 0.4 && *dec_a <= 0.6, "decoding AUROC " + (dec_a ? std::to_string(*dec_a) : "undefined"));

  // Swapped: failures only where decoding noise is high.
  const auto by_decoding = injected_run(
      "c7-decoding", 400, [](std::size_t i) { return (i / 2) % 2 ? 2 : 0; }, [](std::size_t i) { return i % 2 ? 2 : 1; },
      [](std::size_t i) { return i % 2 == 1; });
  const auto in_b = row_auroc(by_decoding, "input"), dec_b = row_auroc(by_decoding, "decoding");
  c.expect(in_a && dec_a && in_b && dec_b && *in_a > *dec_a && *dec_b > *in_b, "swapping the injection axis did not swap the ordering");

  // Monotone grid: failure iff ambiguity level + noise level >= 3.
  const auto grid_run = injected_run(
      "c7-grid", 360, [](std::size_t i) { return static_cast<int>(i % 3); },
      [](std::size_t i) { return static_cast<int>((i / 3) % 3); },
      [](std::size_t i) { return (i % 3) + (i / 3) % 3 >= 3; });
  bool monotone = grid_run.report.grid.has_value();
  std::string rates;
  if (monotone) {
    const auto& g = *grid_run.report.grid;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t d = 0; d < 3; ++d) {
        const double r = g[a * 3 + d].failure_rate;
        if (a + 1 < 3 && g[(a + 1) * 3 + d].failure_rate < r) monotone = false;
        if (d + 1 < 3 && g[a * 3 + d + 1].failure_rate < r) monotone = false;
        char cell[16];
        std::snprintf(cell, sizeof cell, "%s%.2f", d ? " " : (a ? " | " : ""), r);
        rates += cell;
      }
  }
  c.expect(monotone, "grid failure rates not monotone: " + rates);
  char buf[300];
  std::snprintf(buf, sizeof buf,
                "input-injected AUROC in=%.3f dec=%.3f; decoding-injected in=%.3f dec=%.3f; grid rates [%s]",
                in_a.value_or(-1), dec_a.value_or(-1), in_b.value_or(-1), dec_b.value_or(-1), rates.c_str());
  return buf;
}

// ---------------------------------------------------------------------------
// 8. Kill-and-resume, dry-run accounting

int spawn_cli(const std::vector<std::string>& args, bool wait, pid_t* pid_out = nullptr,
              const std::string& stdout_path = "/dev/null") {
  std::vector<std::string> argv_s{UQD_CLI};
  argv_s.insert(argv_s.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_s) argv.push_back(s.data());
  argv.push_back(nullptr);
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, 1, stdout_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&actions, 2, "/dev/null", O_WRONLY, 0);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, UQD_CLI, &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) return -1;
  if (pid_out) *pid_out = pid;
  if (!wait) return 0;
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) ++n;
  return n;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = testing::slurp(e.path());
  return out;
}

// A copy of the 20-prompt fixture config living in dir, with out = "out".
fs::path fixture_config(const fs::path& dir, int delay_ms) {
  const fs::path fx = fs::path(UQD_FIXTURES) / "synthetic20";
  json cfg = json::parse(testing::slurp(fx / "config.json"));
  cfg["dataset"] = (fx / "prompts.jsonl").string();
  cfg["out"] = "out";
  cfg["concurrency"] = 2;
  for (auto& [_, b] : cfg["backends"].items()) {
    b["world"] = (fx / "world.json").string();
    if (delay_ms) b["delay_ms"] = delay_ms;
  }
  testing::spit(dir / "config.json", cfg.dump(2));
  return dir / "config.json";
}

std::string criterion8(Check& c) {
  const auto clean_dir = testing::scratch_dir("c8-clean");
  const auto killed_dir = testing::scratch_dir("c8-killed");
  const auto clean_cfg = fixture_config(clean_dir, 2);
  const auto killed_cfg = fixture_config(killed_dir, 2);

  // Dry run on a fresh directory, then the real run.
  const int dry_rc = spawn_cli({"collect", "--dry-run", "--config", clean_cfg.string()}, true, nullptr,
                               (clean_dir / "dry.json").string());
  const auto dry = json::parse(testing::slurp(clean_dir / "dry.json"));
  c.expect(dry_rc == 0 && !fs::exists(clean_dir / "out"), "dry run failed or wrote output");
  const int clean_rc = spawn_cli({"collect", "--config", clean_cfg.string()}, true, nullptr,
                                 (clean_dir / "run.json").string());
  const auto actual = json::parse(testing::slurp(clean_dir / "run.json"));
  c.expect(clean_rc == 0, "uninterrupted collect exited " + std::to_string(clean_rc));
  const bool counts_match = dry.at("generation_calls") == actual.at("generation_calls") &&
                            dry.at("paraphraser_calls") == actual.at("paraphraser_calls");
  c.expect(counts_match, "dry run " + dry.dump() + " vs actual " + actual.dump());

  // Independent count: the synthetic backends' own call counters, in process.
  const auto inproc_dir = testing::scratch_dir("c8-inproc");
  auto inproc = load_run_config(fixture_config(inproc_dir, 0));
  const auto backends = build_backends(inproc);
  run_collection(inproc.plan(), backends);
  std::size_t made = 0;
  for (const auto& [_, b] : backends) made += dynamic_cast<SyntheticBackend&>(*b).calls();
  const std::size_t planned = dry.at("total_calls").get<std::size_t>();
  c.expect(made == planned, "backends saw " + std::to_string(made) + " calls, plan said " + std::to_string(planned));

  // Kill mid-run, then resume.
  pid_t pid = 0;
  spawn_cli({"collect", "--config", killed_cfg.string()}, false, &pid);
  const auto deadline = Clock::now() + std::chrono::seconds(30);
  while (count_files(killed_dir / "out" / "bundles") < 40 && Clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  ::kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  const bool was_killed = WIFSIGNALED(status);
  const std::size_t partial = count_files(killed_dir / "out" / "bundles");
  c.expect(was_killed && partial < 140, "collect finished before it could be killed");
  const int resume_rc = spawn_cli({"collect", "--config", killed_cfg.string()}, true);
  c.expect(resume_rc == 0, "resumed collect exited " + std::to_string(resume_rc));
  const auto m1 = testing::slurp(clean_dir / "out" / "manifest.json");
  const auto m2 = testing::slurp(killed_dir / "out" / "manifest.json");
  c.expect(!m1.empty() && m1 == m2, "manifests differ");
  c.expect(tree(clean_dir / "out" / "bundles") == tree(killed_dir / "out" / "bundles"), "bundle trees differ");
  c.expect(tree(clean_dir / "out" / "answers") == tree(killed_dir / "out" / "answers"), "answer files differ");
  return "killed after " + std::to_string(partial) + "/140 bundles; resumed manifest identical; dry run " +
         std::to_string(planned) + " calls = " + std::to_string(made) + " made";
}

// ---------------------------------------------------------------------------
// 9. Wire fidelity

class CapturingTransport final : public detail::HttpTransport {
 public:
  std::vector<std::string> bodies;
  detail::HttpResponse post(const std::string&, const std::string& body, const detail::HttpHeaders&) override {
    bodies.push_back(body);
    return {200, R"({"choices":[{"message":{"content":"Paris"}}]})"};
  }
};

std::string criterion9(Check& c) {
  struct Case {
    const char* file;
    DecodingPolicy policy;
    bool system, logprobs;
  };
  const Case cases[] = {{"greedy.json", DecodingPolicy::greedy().with_seed(1), false, false},
                        {"temperature.json", DecodingPolicy::temperature(0.7).with_seed(3), true, true},
                        {"top_k.json", DecodingPolicy::top_k(50).with_seed(4), false, false},
                        {"top_p.json", DecodingPolicy::top_p(0.9).with_seed(5), false, false}};
  int matched = 0;
  for (const auto& k : cases) {
    auto transport = std::make_shared<CapturingTransport>();
    OpenAiConfig cfg;
    cfg.base_url = "http://127.0.0.1:9";
    cfg.model = "gpt-test";
    OpenAiBackend live("live", cfg, transport);
    GenerationRequest r;
    r.prompt_text = "What is the capital of France?";
    if (k.system) r.system_text = "Answer briefly.";
    r.policy = k.policy;
    r.max_tokens = 64;
    r.want_logprobs = k.logprobs;
    r.backend_id = "live";
    live.generate(r);
    const auto golden = testing::slurp(fs::path(UQD_FIXTURES) / "golden_requests" / k.file);
    const bool ok = transport->bodies.size() == 1 && transport->bodies[0] == golden;
    c.expect(ok, std::string(k.file) + " body differs");
    matched += ok;
  }
  auto transport = std::make_shared<CapturingTransport>();
  OpenAiConfig cfg;
  cfg.base_url = "http://127.0.0.1:9";
  cfg.model = "gpt-test";
  OpenAiBackend live("live", cfg, transport);
  GenerationRequest beam;
  beam.prompt_text = "q";
  beam.policy = DecodingPolicy::beam();
  beam.backend_id = "live";
  bool rejected = false;
  try {
    live.generate(beam);
  } catch (const UnsupportedPolicyError&) {
    rejected = true;
  }
  c.expect(rejected && transport->bodies.empty(), "beam policy not rejected before sending");
  return std::to_string(matched) + "/4 golden bodies byte-identical; beam rejected with UnsupportedPolicyError";
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  uqd::log().set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<std::string(Check&)>>> criteria{
      {"semantic-entropy kernel", criterion1}, {"clustering", criterion2},
      {"rouge-l", criterion3},                 {"auroc", criterion4},
      {"ece", criterion5},                     {"decomposition fidelity", criterion6},
      {"failure-prediction sanity", criterion7}, {"pipeline robustness", criterion8},
      {"wire fidelity", criterion9}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check check;
    std::string detail;
    try {
      detail = criteria[i].second(check);
    } catch (const std::exception& e) {
      check.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = check.failures.empty();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first << "): ";
    if (ok) {
      std::cout << detail;
    } else {
      for (std::size_t k = 0; k < check.failures.size(); ++k) std::cout << (k ? "; " : "") << check.failures[k];
    }
    std::cout << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
