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

// Independent reference implementations and small helpers shared by the unit
// tests and the acceptance runner. Nothing here calls the library kernels it
// is used to check.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "uqd/records.hpp"

namespace uqd::testing {

namespace fs = std::filesystem;

// Longest common subsequence by enumerating every subsequence of the shorter side.
inline std::size_t brute_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const auto& s = a.size() <= b.size() ? a : b;
  const auto& t = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << s.size()); ++mask) {
    std::vector<std::string> sub;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (mask & (1u << i)) sub.push_back(s[i]);
    if (sub.size() <= best) continue;
    std::size_t k = 0;
    for (std::size_t j = 0; j < t.size() && k < sub.size(); ++j)
      if (t[j] == sub[k]) ++k;
    if (k == sub.size()) best = sub.size();
  }
  return best;
}

inline double brute_rouge_f(const std::vector<std::string>& c, const std::vector<std::string>& r) {
  if (c.empty() || r.empty()) return 0.0;
  const double l = static_cast<double>(brute_lcs(c, r));
  if (l == 0) return 0.0;
  const double p = l / static_cast<double>(c.size());
  const double rec = l / static_cast<double>(r.size());
  return 2 * p * rec / (p + rec);
}

// Fraction of (failure, success) pairs ordered correctly; ties count half.
inline double pairwise_auroc(const std::vector<double>& s, const std::vector<bool>& fail) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!fail[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (fail[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

// Straight-line entropy: group by key, sum weights, normalize, -sum p ln p.
inline double straight_entropy(const std::vector<std::string>& keys, const std::vector<double>& weights) {
  std::map<std::string, double> mass;
  double total = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    mass[keys[i]] += weights[i];
    total += weights[i];
  }
  double h = 0;
  for (const auto& [k, m] : mass) {
    const double p = m / total;
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

// Partition as a set of sets of indices.
using Partition = std::set<std::set<std::size_t>>;

inline Partition to_partition(const std::vector<std::vector<std::size_t>>& clusters) {
  Partition p;
  for (const auto& c : clusters) p.insert(std::set<std::size_t>(c.begin(), c.end()));
  return p;
}

inline Partition hash_grouping(const std::vector<std::string>& keys) {
  std::unordered_map<std::string, std::set<std::size_t>> groups;
  for (std::size_t i = 0; i < keys.size(); ++i) groups[keys[i]].insert(i);
  Partition p;
  for (auto& [_, g] : groups) p.insert(g);
  return p;
}

// Connected components by repeated relaxation over an explicit edge list.
inline Partition closure_oracle(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::size_t> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = i;
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto [a, b] : edges) {
      const auto m = std::min(label[a], label[b]);
      if (label[a] != m || label[b] != m) {
        label[a] = label[b] = m;
        changed = true;
      }
    }
  }
  std::map<std::size_t, std::set<std::size_t>> g;
  for (std::size_t i = 0; i < n; ++i) g[label[i]].insert(i);
  Partition p;
  for (auto& [_, s] : g) p.insert(s);
  return p;
}

// Quantile of element i: number of elements ordered before it by (value, index), scaled.
inline std::vector<std::size_t> quantile_oracle(const std::vector<double>& v, std::size_t q) {
  std::vector<std::size_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t before = 0;
    for (std::size_t j = 0; j < v.size(); ++j)
      if (v[j] < v[i] || (v[j] == v[i] && j < i)) ++before;
    out[i] = before * q / v.size();
  }
  return out;
}

// Expected entropy of the empirical answer distribution over n iid draws,
// enumerating every ordered outcome.
inline double expected_draw_entropy(const std::vector<double>& probs, std::size_t n) {
  const std::size_t m = probs.size();
  std::vector<std::size_t> idx(n, 0);
  double expect = 0;
  while (true) {
    double p = 1;
    std::vector<double> counts(m, 0);
    for (auto k : idx) {
      p *= probs[k];
      counts[k] += 1;
    }
    double h = 0;
    for (double c : counts)
      if (c > 0) h -= (c / n) * std::log(c / n);
    expect += p * h;
    std::size_t pos = 0;
    while (pos < n && ++idx[pos] == m) idx[pos++] = 0;
    if (pos == n) break;
  }
  return expect;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

// Fresh directory under the system temp dir.
// A loopback port that was bound and released, so connecting is refused.
inline int closed_loopback_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("socket failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  socklen_t len = sizeof addr;
  const bool ok = ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0 &&
                  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0;
  ::close(fd);
  if (!ok) throw std::runtime_error("bind failed");
  return ntohs(addr.sin_port);
}

inline fs::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  const fs::path p = fs::temp_directory_path() /
                     ("uqd-" + name + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline GenerationRecord make_record(std::string prompt_id, std::string key, std::string text,
                                    DecodingPolicy policy = DecodingPolicy::greedy(),
                                    std::string backend = "b",
                                    std::optional<std::vector<double>> logprobs = std::nullopt) {
  GenerationRecord r;
  r.prompt_id = std::move(prompt_id);
  r.variant_key = std::move(key);
  r.text = std::move(text);
  r.backend_id = std::move(backend);
  r.policy = std::move(policy);
  r.token_logprobs = std::move(logprobs);
  r.timestamp = "1970-01-01T00:00:00Z";
  return r;
}

// Input-axis bundle whose i-th record has text texts[i].
inline ResponseBundle input_bundle(const std::vector<std::string>& texts,
                                   const std::vector<double>& logprobs = {}) {
  std::vector<GenerationRecord> recs;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::optional<std::vector<double>> lp;
    if (!logprobs.empty()) lp = std::vector<double>{logprobs[i]};
    recs.push_back(make_record("p", std::to_string(i), texts[i], DecodingPolicy::greedy(), "b", lp));
  }
  return ResponseBundle("p", Axis::input, std::move(recs));
}

}  // namespace uqd::testing
