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
#include <numeric>
#include <span>

#include "uqd/errors.hpp"

namespace uqd {

// log p(y | ...) from per-token natural-log probabilities. With length
// normalization the mean token log-probability is used instead of the sum.
inline double sequence_log_probability(std::span<const double> token_logprobs,
                                       bool length_normalize = false) {
  if (token_logprobs.empty()) throw ValidationError("sequence has no tokens");
  double sum = 0.0;
  for (double lp : token_logprobs) {
    if (!(lp <= 0.0)) throw ValidationError("token log-probability must be <= 0");
    sum += lp;
  }
  return length_normalize ? sum / static_cast<double>(token_logprobs.size()) : sum;
}

inline double sequence_probability(std::span<const double> token_logprobs,
                                   bool length_normalize = false) {
  return std::exp(sequence_log_probability(token_logprobs, length_normalize));
}

}  // namespace uqd
