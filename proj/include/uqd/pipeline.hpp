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
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "uqd/collect.hpp"
#include "uqd/config.hpp"
#include "uqd/detail/fs.hpp"
#include "uqd/detail/log.hpp"
#include "uqd/detail/parallel.hpp"
#include "uqd/entropy.hpp"
#include "uqd/eval.hpp"

namespace uqd {

// ---------------------------------------------------------------------------
// Scoring every persisted bundle

struct Unscored {
  std::string prompt_id;
  std::string slot;
  std::string reason;
  bool transport = false;
};

struct ScoreRun {
  std::map<std::string, std::vector<UncertaintyScore>> scores;  // slot -> scores by prompt_id
  std::vector<Unscored> unscored;

  bool any_transport() const {
    return std::any_of(unscored.begin(), unscored.end(), [](const Unscored& u) { return u.transport; });
  }
};

inline fs::path score_path(const fs::path& out, Axis axis, const std::string& policy) {
  return out / "scores" / std::string(to_string(axis)) / (policy + ".jsonl");
}

inline fs::path clustering_path(const fs::path& out, Axis axis, const std::string& policy) {
  return out / "clusterings" / std::string(to_string(axis)) / (policy + ".jsonl");
}

// Scores each complete bundle; missing, incomplete, or judge-failed bundles are
// listed as unscored. Output files are sorted by prompt id, so reruns over the
// same bundles reproduce them byte for byte whatever the worker count.
inline ScoreRun score_directory(const RunConfig& config, const EquivalenceJudge& judge) {
  const CollectionPlan plan = config.plan();
  const auto prompts = load_dataset(plan.dataset);
  const fs::path out = plan.out_dir;
  ScoreRun run;
  json slots_summary = json::object();

  for (const auto& [axis, policy] : plan_slots(plan)) {
    const std::string slot = std::string(to_string(axis)) + "/" + policy;
    std::vector<std::optional<ScoredBundle>> results(prompts.size());
    std::vector<std::optional<Unscored>> failures(prompts.size());
    detail::parallel_for(prompts.size(), config.concurrency, [&](std::size_t i) {
      const auto& prompt = prompts[i];
      const auto file = detail::read_bundle_file(bundle_path(out, axis, policy, prompt.id));
      if (!file) {
        failures[i] = Unscored{prompt.id, slot, "bundle missing", false};
        return;
      }
      if (!file->complete()) {
        failures[i] = Unscored{prompt.id, slot, "bundle incomplete", false};
        return;
      }
      ScoringOptions opts;
      opts.weighting = config.weighting;
      opts.length_normalize = config.length_normalize;
      opts.context = prompt.question;
      opts.cluster = cluster_options(config);
      opts.cluster.workers = 1;
      try {
        results[i] = score_bundle_detailed(file->to_bundle(), judge, opts);
      } catch (const std::exception& e) {
        const bool transport = dynamic_cast<const TransportError*>(&e) || dynamic_cast<const HttpError*>(&e);
        failures[i] = Unscored{prompt.id, slot, e.what(), transport};
      }
    });

    std::vector<std::pair<std::string, std::size_t>> order;
    for (std::size_t i = 0; i < prompts.size(); ++i) order.emplace_back(prompts[i].id, i);
    std::sort(order.begin(), order.end());
    std::string score_lines, cluster_lines;
    std::size_t scored = 0, unscored = 0;
    for (const auto& [id, i] : order) {
      if (results[i]) {
        ++scored;
        score_lines += json(results[i]->score).dump() + "\n";
        cluster_lines += json{{"clustering_ref", results[i]->score.clustering_ref},
                              {"clusters", results[i]->clustering.clusters},
                              {"masses", *results[i]->clustering.masses}}
                             .dump() +
                         "\n";
        run.scores[slot].push_back(results[i]->score);
      } else if (failures[i]) {
        ++unscored;
        log().warn("event=unscored prompt_id={} slot={} reason=\"{}\"", id, slot, failures[i]->reason);
        run.unscored.push_back(*failures[i]);
      }
    }
    detail::atomic_write(score_path(out, axis, policy), score_lines);
    detail::atomic_write(clustering_path(out, axis, policy), cluster_lines);
    slots_summary[slot] = {{"scored", scored}, {"unscored", unscored}};
  }

  json unscored = json::array();
  for (const auto& u : run.unscored)
    unscored.push_back({{"prompt_id", u.prompt_id}, {"slot", u.slot}, {"reason", u.reason}});
  const json manifest = {{"tool", "uqd"},
                         {"version", kToolVersion},
                         {"config", config},
                         {"judge", judge.name()},
                         {"slots", slots_summary},
                         {"unscored", unscored}};
  detail::atomic_write(out / "scores" / "manifest.json", manifest.dump(2) + "\n");
  return run;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRun {
  std::vector<EvalOutcome> outcomes;
  EvalReport report;
  std::vector<std::string> unmatched;
};

inline std::map<std::string, double> read_score_file(const fs::path& path) {
  std::map<std::string, double> out;
  if (!fs::exists(path)) return out;
  for (const auto& line : detail::split_lines(detail::read_file(path))) {
    if (line.empty()) continue;
    const auto s = json::parse(line).get<UncertaintyScore>();
    out[s.prompt_id] = s.value;
  }
  return out;
}

// Score keys the report uses, with the file each comes from.
inline std::vector<std::pair<std::string, fs::path>> score_sources(const RunConfig& config) {
  const fs::path out = config.out_dir();
  std::vector<std::pair<std::string, fs::path>> sources;
  auto has = [&](Axis a) { return std::find(config.axes.begin(), config.axes.end(), a) != config.axes.end(); };
  if (has(Axis::input)) sources.emplace_back("input", score_path(out, Axis::input, "greedy"));
  if (has(Axis::knowledge)) sources.emplace_back("knowledge", score_path(out, Axis::knowledge, "greedy"));
  if (has(Axis::decoding)) {
    sources.emplace_back("decoding", score_path(out, Axis::decoding, config.eval_policy));
    for (const auto& p : config.decoding_policies) {
      const std::string kind(to_string(p.kind()));
      sources.emplace_back("decoding:" + kind, score_path(out, Axis::decoding, kind));
    }
  }
  return sources;
}

// Joins answers, labels and scores on prompt id and builds the report. The
// labeling judge is only consulted when the labeling rule is "nli".
inline EvalRun evaluate_directory(const RunConfig& config,
                                  const EquivalenceJudge* nli_labeler = nullptr) {
  const auto prompts = load_dataset(config.resolve(config.dataset));
  const fs::path out = config.out_dir();
  std::shared_ptr<EquivalenceJudge> owned;
  if (config.labeling.rule == "nli" && !nli_labeler) {
    owned = std::make_shared<NliJudge>(
        std::make_shared<HttpEntailmentScorer>(nli_endpoint(config.labeling.endpoint)),
        config.labeling.gamma, config.labeling.use_context);
    nli_labeler = owned.get();
  }

  std::map<std::string, std::map<std::string, double>> by_key;
  const auto sources = score_sources(config);
  for (const auto& [key, path] : sources) {
    by_key[key] = read_score_file(path);
    if (by_key[key].empty()) log().warn("event=axis_without_scores axis={} path={}", key, path.string());
  }

  EvalRun run;
  std::set<std::string> known;
  for (const auto& prompt : prompts) {
    known.insert(prompt.id);
    const fs::path apath = answer_path(out, prompt.id);
    if (!fs::exists(apath)) {
      run.unmatched.push_back(prompt.id + ": no answer");
      continue;
    }
    const auto answer = json::parse(detail::read_file(apath)).get<GenerationRecord>();
    std::map<std::string, double> scores;
    for (const auto& [key, values] : by_key)
      if (auto it = values.find(prompt.id); it != values.end()) scores[key] = it->second;
    if (scores.empty()) {
      run.unmatched.push_back(prompt.id + ": no scores");
      continue;
    }
    bool correct = false;
    if (config.labeling.rule == "rouge") {
      correct = label_rouge(answer.text, prompt.reference_answer, config.labeling.threshold,
                            parse_rouge_variant(config.labeling.rouge_variant));
    } else {
      correct = label_nli(answer.text, prompt.reference_answer, *nli_labeler, prompt.question);
    }
    run.outcomes.push_back(EvalOutcome::make(prompt.id, prompt.dataset_tag, answer.text, correct,
                                             std::move(scores)));
  }
  for (const auto& [key, values] : by_key)
    for (const auto& [id, _] : values)
      if (!known.contains(id)) run.unmatched.push_back(id + ": scored under '" + key + "' but not in dataset");
  std::sort(run.unmatched.begin(), run.unmatched.end());
  run.unmatched.erase(std::unique(run.unmatched.begin(), run.unmatched.end()), run.unmatched.end());
  if (run.outcomes.empty())
    throw EmptyReportError("no prompt has both an answer and a score; nothing to evaluate");

  ReportOptions ro;
  ro.model = config.model_name();
  ro.bins = config.ece_bins;
  ro.normalization = config.normalization;
  ro.axes.clear();
  for (const auto& [key, _] : sources) {
    ro.axes.push_back(key);
    ro.responses[key] = key == "input" ? config.K : key == "knowledge" ? config.M : config.N;
  }
  ro.grid.bins = config.ece_bins;
  ro.grid.normalization = config.normalization;
  ro.grid.input_responses = config.K;
  ro.grid.decoding_responses = config.N;
  ro.grid.confidence = config.grid_confidence == "input"      ? GridConfidence::input
                       : config.grid_confidence == "decoding" ? GridConfidence::decoding
                                                              : GridConfidence::mean;
  std::vector<EvalOutcome> for_grid;
  for (const auto& o : run.outcomes)
    if (o.scores.contains("input") && o.scores.contains("decoding")) for_grid.push_back(o);
  run.report = build_report(run.outcomes, ro);
  if (for_grid.size() != run.outcomes.size()) {
    run.report.grid.reset();
    try {
      if (for_grid.empty()) throw ValidationError("no outcome has both input and decoding scores");
      run.report.grid = quantile_grid(for_grid, ro.grid);
    } catch (const Error& e) {
      run.report.diagnostics.push_back(std::string("grid: ") + e.what());
    }
  }
  for (const auto& u : run.unmatched) run.report.diagnostics.push_back("unmatched " + u);
  return run;
}

inline json report_json(const RunConfig& config, const EvalRun& run) {
  json j = run.report;
  j["model"] = config.model_name();
  j["eval_policy"] = config.eval_policy;
  j["labeling"] = config.labeling.rule;
  j["normalization"] = std::string(to_string(config.normalization));
  j["ece_bins"] = config.ece_bins;
  return j;
}

}  // namespace uqd
