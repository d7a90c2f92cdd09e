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
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "uqd/equivalence.hpp"
#include "uqd/errors.hpp"
#include "uqd/records.hpp"
#include "uqd/textmetrics.hpp"

namespace uqd {

// ---------------------------------------------------------------------------
// Correctness labels

inline bool label_rouge(std::string_view answer, std::string_view reference,
                        double threshold = 0.3, RougeVariant variant = RougeVariant::f_measure) {
  return rouge_l(answer, reference, variant) >= threshold;
}

// Correct iff the reference entails the answer and the answer entails the
// reference, each with probability >= the judge's gamma.
inline bool label_nli(std::string_view answer, std::string_view reference,
                      const EquivalenceJudge& nli_judge,
                      const std::optional<std::string>& context = std::nullopt) {
  return nli_judge.judge(reference, answer, context).equivalent;
}

struct EvalOutcome {
  std::string prompt_id;
  std::string dataset_tag;
  std::string answer_text;
  bool correct = false;
  bool failure = true;  // always !correct
  // "input", "knowledge", "decoding" (the evaluated policy), "decoding:<policy>" for the sweep
  std::map<std::string, double> scores;

  static EvalOutcome make(std::string prompt_id, std::string dataset_tag, std::string answer,
                          bool correct, std::map<std::string, double> scores = {}) {
    return {std::move(prompt_id), std::move(dataset_tag), std::move(answer), correct, !correct,
            std::move(scores)};
  }
};

inline void to_json(json& j, const EvalOutcome& o) {
  j = json{{"prompt_id", o.prompt_id}, {"dataset_tag", o.dataset_tag},
           {"answer_text", o.answer_text}, {"correct", o.correct},
           {"failure", o.failure},     {"scores", o.scores}};
}

inline void from_json(const json& j, EvalOutcome& o) {
  o.prompt_id = detail::require_string(j, "prompt_id");
  o.dataset_tag = detail::optional_string(j, "dataset_tag");
  o.answer_text = detail::optional_string(j, "answer_text");
  o.correct = detail::require_field(j, "correct").get<bool>();
  o.failure = !o.correct;
  o.scores = j.value("scores", std::map<std::string, double>{});
}

// ---------------------------------------------------------------------------
// AUROC

// Probability that a failed example outscores a correct one; ties count 1/2.
// Computed from mid-ranks (Mann-Whitney U), O(n log n).
inline double auroc(const std::vector<double>& scores, const std::vector<bool>& failures) {
  if (scores.size() != failures.size()) throw ValidationError("auroc: length mismatch");
  const std::size_t n = scores.size();
  const std::size_t positives = static_cast<std::size_t>(std::count(failures.begin(), failures.end(), true));
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedAurocError(positives == 0 ? "AUROC undefined: no failures among " +
                                                   std::to_string(n) + " examples"
                                             : "AUROC undefined: no correct examples among " +
                                                   std::to_string(n) + " examples");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum of positives keeps mid-ranks integral.
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_mid = static_cast<double>(i + 1 + j);  // 2 * (i+1 + j)/2
    for (std::size_t k = i; k < j; ++k)
      if (failures[order[k]]) twice_rank_sum += twice_mid;
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double u = (twice_rank_sum - p * (p + 1.0)) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

// ---------------------------------------------------------------------------
// Confidence normalization and ECE

enum class Normalization { minmax, max_entropy_ratio };

inline std::string_view to_string(Normalization n) {
  return n == Normalization::minmax ? "minmax" : "max_entropy_ratio";
}

inline Normalization parse_normalization(std::string_view s) {
  if (s == "minmax") return Normalization::minmax;
  if (s == "max_entropy_ratio") return Normalization::max_entropy_ratio;
  throw ValidationError("unknown normalization '" + std::string(s) + "'");
}

// Order-preserving map of uncertainty scores into [0, 1] failure confidences.
// minmax: min -> 0, max -> 1, a constant list -> 0.5 everywhere.
// max_entropy_ratio: u / ln(num_responses), clamped to [0, 1].
inline std::vector<double> normalize_confidence(const std::vector<double>& scores,
                                                Normalization method = Normalization::minmax,
                                                std::size_t num_responses = 5) {
  if (scores.empty()) throw ValidationError("normalize_confidence: empty score list");
  std::vector<double> out(scores.size());
  if (method == Normalization::minmax) {
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < scores.size(); ++i)
      out[i] = span > 0.0 ? (scores[i] - *lo) / span : 0.5;
    return out;
  }
  if (num_responses < 2) throw ValidationError("max_entropy_ratio needs num_responses >= 2");
  const double cap = std::log(static_cast<double>(num_responses));
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = std::clamp(scores[i] / cap, 0.0, 1.0);
  return out;
}

// Equal-width bins over [0, 1]; bin b holds [b/B, (b+1)/B) and the top bin also holds 1.
inline std::size_t ece_bin(double confidence, std::size_t bins) {
  const auto b = static_cast<std::size_t>(std::floor(std::clamp(confidence, 0.0, 1.0) * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

inline double ece(const std::vector<double>& confidences, const std::vector<bool>& failures,
                  std::size_t bins = 10) {
  if (confidences.size() != failures.size()) throw ValidationError("ece: length mismatch");
  if (confidences.empty()) throw ValidationError("ece: no examples");
  if (bins == 0) throw ValidationError("ece: bins must be positive");
  std::vector<double> conf_sum(bins, 0.0), fail_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("ece: confidence outside [0, 1]");
    const std::size_t b = ece_bin(c, bins);
    conf_sum[b] += c;
    fail_sum[b] += failures[i] ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double m = static_cast<double>(count[b]);
    total += (m / n) * std::abs(fail_sum[b] / m - conf_sum[b] / m);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Joint quantile grid

struct GridCell {
  std::size_t input_quantile = 0;
  std::size_t dec_quantile = 0;
  std::size_t count = 0;
  double failure_rate = 0.0;
  double ece = 0.0;
};

inline void to_json(json& j, const GridCell& c) {
  j = json{{"input_quantile", c.input_quantile}, {"dec_quantile", c.dec_quantile},
           {"count", c.count},                   {"failure_rate", c.failure_rate},
           {"ece", c.ece}};
}

// Quantile index per value: sort by (value, position), split the ranks into q
// equal runs. Ties are broken by position so the assignment is stable.
inline std::vector<std::size_t> rank_quantiles(const std::vector<double>& values, std::size_t q,
                                               const std::string& axis_name) {
  std::vector<double> distinct = values;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < q) {
    throw DegenerateQuantileError(axis_name, std::to_string(distinct.size()) +
                                                 " distinct value(s), need " + std::to_string(q));
  }
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::size_t> out(n);
  for (std::size_t r = 0; r < n; ++r) out[order[r]] = r * q / n;
  return out;
}

enum class GridConfidence { input, decoding, mean };

struct GridOptions {
  std::size_t q = 3;
  std::size_t bins = 10;
  Normalization normalization = Normalization::minmax;
  std::size_t input_responses = 5;
  std::size_t decoding_responses = 5;
  GridConfidence confidence = GridConfidence::mean;
  std::string decoding_key = "decoding";
};

// q x q cells over (input quantile, decoding quantile), input-major. Per-cell ECE
// uses confidences normalized over the whole evaluated set.
inline std::vector<GridCell> quantile_grid(const std::vector<EvalOutcome>& outcomes,
                                           const GridOptions& options = {}) {
  if (outcomes.empty()) throw ValidationError("quantile_grid: no outcomes");
  std::vector<double> u_in, u_dec;
  std::vector<bool> fail;
  for (const auto& o : outcomes) {
    auto in = o.scores.find("input");
    auto dec = o.scores.find(options.decoding_key);
    if (in == o.scores.end() || dec == o.scores.end())
      throw ValidationError("quantile_grid: outcome '" + o.prompt_id +
                            "' lacks an input or decoding score");
    u_in.push_back(in->second);
    u_dec.push_back(dec->second);
    fail.push_back(o.failure);
  }
  const auto qi = rank_quantiles(u_in, options.q, "input");
  const auto qd = rank_quantiles(u_dec, options.q, "decoding");
  const auto ci = normalize_confidence(u_in, options.normalization, options.input_responses);
  const auto cd = normalize_confidence(u_dec, options.normalization, options.decoding_responses);

  std::vector<GridCell> cells;
  for (std::size_t a = 0; a < options.q; ++a) {
    for (std::size_t b = 0; b < options.q; ++b) {
      GridCell cell;
      cell.input_quantile = a;
      cell.dec_quantile = b;
      std::vector<double> conf;
      std::vector<bool> f;
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (qi[i] != a || qd[i] != b) continue;
        switch (options.confidence) {
          case GridConfidence::input: conf.push_back(ci[i]); break;
          case GridConfidence::decoding: conf.push_back(cd[i]); break;
          case GridConfidence::mean: conf.push_back(0.5 * (ci[i] + cd[i])); break;
        }
        f.push_back(fail[i]);
      }
      cell.count = f.size();
      if (cell.count > 0) {
        cell.failure_rate = static_cast<double>(std::count(f.begin(), f.end(), true)) /
                            static_cast<double>(cell.count);
        cell.ece = ece(conf, f, options.bins);
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Report

struct AxisMetrics {
  std::string axis;  // "input", "knowledge", "decoding", or "decoding:<policy>"
  std::size_t n = 0;
  std::size_t failures = 0;
  std::optional<double> auroc;
  std::optional<double> ece;
  std::string note;
};

struct ReportRow {
  std::string dataset;
  std::string model;
  std::size_t n = 0;
  std::size_t failures = 0;
  std::vector<AxisMetrics> axes;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::optional<std::vector<GridCell>> grid;
  std::vector<std::string> diagnostics;

  bool has_undefined_metric() const {
    for (const auto& r : rows)
      for (const auto& a : r.axes)
        if (!a.auroc) return true;
    return false;
  }
};

inline json metric_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline void to_json(json& j, const AxisMetrics& a) {
  j = json{{"axis", a.axis}, {"n", a.n}, {"failures", a.failures},
           {"auroc", metric_json(a.auroc)}, {"ece", metric_json(a.ece)}};
  if (!a.note.empty()) j["note"] = a.note;
}

inline void to_json(json& j, const ReportRow& r) {
  j = json{{"dataset", r.dataset}, {"model", r.model}, {"n", r.n}, {"failures", r.failures},
           {"axes", r.axes}};
}

inline void to_json(json& j, const EvalReport& r) {
  j = json{{"rows", r.rows}, {"diagnostics", r.diagnostics}};
  j["grid"] = r.grid ? json(*r.grid) : json(nullptr);
}

struct ReportOptions {
  std::string model;
  std::size_t bins = 10;
  Normalization normalization = Normalization::minmax;
  // Bundle size per score key, for max_entropy_ratio.
  std::map<std::string, std::size_t> responses;
  GridOptions grid;
  // Score keys to report, in column order. Keys nobody has are skipped with a note.
  std::vector<std::string> axes{"input", "knowledge", "decoding"};
};

inline AxisMetrics axis_metrics(const std::vector<EvalOutcome>& outcomes, const std::string& key,
                                const ReportOptions& options) {
  AxisMetrics m;
  m.axis = key;
  std::vector<double> scores;
  std::vector<bool> fails;
  for (const auto& o : outcomes) {
    if (auto it = o.scores.find(key); it != o.scores.end()) {
      scores.push_back(it->second);
      fails.push_back(o.failure);
    }
  }
  m.n = scores.size();
  m.failures = static_cast<std::size_t>(std::count(fails.begin(), fails.end(), true));
  if (scores.empty()) {
    m.note = "no scores";
    return m;
  }
  try {
    m.auroc = auroc(scores, fails);
  } catch (const UndefinedAurocError& e) {
    m.note = e.what();
  }
  std::size_t responses = 5;
  if (auto it = options.responses.find(key); it != options.responses.end()) responses = it->second;
  m.ece = ece(normalize_confidence(scores, options.normalization, responses), fails, options.bins);
  return m;
}

// Rows per dataset tag (sorted); columns per score key; grid over all outcomes.
inline EvalReport build_report(const std::vector<EvalOutcome>& outcomes,
                               const ReportOptions& options = {}) {
  if (outcomes.empty()) throw EmptyReportError("no evaluable outcomes");
  EvalReport report;
  std::map<std::string, std::vector<EvalOutcome>> by_dataset;
  for (const auto& o : outcomes) by_dataset[o.dataset_tag].push_back(o);
  for (const auto& [tag, group] : by_dataset) {
    ReportRow row;
    row.dataset = tag;
    row.model = options.model;
    row.n = group.size();
    row.failures = static_cast<std::size_t>(
        std::count_if(group.begin(), group.end(), [](const EvalOutcome& o) { return o.failure; }));
    for (const auto& key : options.axes) {
      AxisMetrics m = axis_metrics(group, key, options);
      if (m.n == 0) {
        report.diagnostics.push_back("dataset '" + tag + "': axis '" + key +
                                     "' has no scores; excluded");
        continue;
      }
      if (!m.auroc)
        report.diagnostics.push_back("dataset '" + tag + "': axis '" + key + "': " + m.note);
      row.axes.push_back(std::move(m));
    }
    report.rows.push_back(std::move(row));
  }
  try {
    report.grid = quantile_grid(outcomes, options.grid);
  } catch (const Error& e) {
    report.diagnostics.push_back(std::string("grid: ") + e.what());
  }
  return report;
}

inline std::string csv_number(const std::optional<double>& v) {
  return v ? fmt::format("{}", *v) : std::string();
}

inline std::string report_csv(const EvalReport& report) {
  std::string out = "dataset,model,axis,n,failures,auroc,ece\n";
  for (const auto& r : report.rows)
    for (const auto& a : r.axes)
      out += fmt::format("{},{},{},{},{},{},{}\n", r.dataset, r.model, a.axis, a.n, a.failures,
                         csv_number(a.auroc), csv_number(a.ece));
  return out;
}

inline std::string grid_csv(const std::vector<GridCell>& cells) {
  std::string out = "input_quantile,dec_quantile,count,failure_rate,ece\n";
  for (const auto& c : cells)
    out += fmt::format("{},{},{},{},{}\n", c.input_quantile, c.dec_quantile, c.count,
                       c.failure_rate, c.ece);
  return out;
}

}  // namespace uqd
