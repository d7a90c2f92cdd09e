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
#include <array>
#include <cctype>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uqd/errors.hpp"

namespace uqd {

// Ordered tokens, none empty and none containing whitespace.
class TokenSequence {
 public:
  TokenSequence() = default;
  explicit TokenSequence(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (const auto& t : tokens_) {
      if (t.empty()) throw ValidationError("empty token");
      if (t.find_first_of(" \t\n\r\f\v") != std::string::npos)
        throw ValidationError("token contains whitespace: '" + t + "'");
    }
  }

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::span<const std::string> view() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }

  bool operator==(const TokenSequence&) const = default;

 private:
  std::vector<std::string> tokens_;
};

// Lowercases ASCII, turns ASCII punctuation into spaces, splits on whitespace.
// Bytes >= 0x80 pass through untouched so UTF-8 words survive intact.
inline TokenSequence normalize_text(std::string_view s) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
      flush();
    } else if (c < 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return TokenSequence(std::move(tokens));
}

inline std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() < b.size()) std::swap(a, b);
  if (b.empty()) return 0;
  // One DP row over the shorter side; row[j] is the LCS of a[..i] and b[..j].
  std::array<std::size_t, 65> small{};
  std::vector<std::size_t> large;
  std::size_t* row = small.data();
  if (b.size() + 1 > small.size()) {
    large.assign(b.size() + 1, 0);
    row = large.data();
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = a[i] == b[j - 1] ? diag + 1 : std::max(up, row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

inline std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
  return lcs_length(a.view(), b.view());
}

enum class RougeVariant { f_measure, recall };

// Rouge-L over normalized tokens. F-measure uses beta = 1. Zero if either side is empty.
inline double rouge_l(const TokenSequence& candidate, const TokenSequence& reference,
                      RougeVariant variant = RougeVariant::f_measure) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  if (variant == RougeVariant::recall) return lcs / static_cast<double>(reference.size());
  // 2PR/(P+R) reduces to 2L/(|c|+|r|); one rounding keeps thresholds exact.
  return 2.0 * lcs / static_cast<double>(candidate.size() + reference.size());
}

inline double rouge_l(std::string_view candidate, std::string_view reference,
                      RougeVariant variant = RougeVariant::f_measure) {
  return rouge_l(normalize_text(candidate), normalize_text(reference), variant);
}

}  // namespace uqd
