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

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "uqd/collect.hpp"
#include "uqd/config.hpp"
#include "uqd/detail/fs.hpp"
#include "uqd/detail/log.hpp"
#include "uqd/pipeline.hpp"

namespace uqd {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitPartial = 2, kExitBackend = 3 };

// Command-line overrides applied on top of the config file.
struct CliOptions {
  std::string config;
  std::string axis;    // input|knowledge|decoding|all
  std::string policy;  // restricts the decoding sweep
  std::string judge;   // exact|rouge|nli
  std::string out;
  std::optional<std::size_t> concurrency;
  bool dry_run = false;
};

inline RunConfig apply_overrides(RunConfig config, const CliOptions& cli) {
  if (!cli.axis.empty() && cli.axis != "all") config.axes = {parse_axis(cli.axis)};
  if (!cli.policy.empty()) {
    const PolicyKind kind = parse_policy_kind(cli.policy);
    std::vector<DecodingPolicy> kept;
    for (const auto& p : config.decoding_policies)
      if (p.kind() == kind) kept.push_back(p);
    if (kept.empty()) kept.push_back(DecodingPolicy::defaults(kind));
    config.decoding_policies = kept;
    if (std::string(to_string(kind)) != config.eval_policy) config.eval_policy = to_string(kind);
  }
  if (!cli.judge.empty()) {
    if (cli.judge != "exact" && cli.judge != "rouge" && cli.judge != "nli")
      throw ValidationError("--judge must be exact, rouge or nli");
    config.judge.kind = cli.judge;
  }
  if (!cli.out.empty()) config.out = fs::absolute(cli.out).string();
  if (cli.concurrency) {
    if (*cli.concurrency == 0) throw ValidationError("--concurrency must be >= 1");
    config.concurrency = *cli.concurrency;
  }
  return config;
}

inline RunConfig load_for_cli(const CliOptions& cli) {
  if (cli.config.empty()) throw ValidationError("--config is required");
  return apply_overrides(load_run_config(cli.config), cli);
}

// ---------------------------------------------------------------------------

inline int cmd_validate(const fs::path& dataset, std::ostream& out) {
  const ValidationReport report = validate_dataset(dataset);
  out << json(report).dump(2) << "\n";
  return report.errors.empty() ? kExitOk : kExitUsage;
}

inline int cmd_paraphrase(const CliOptions& cli, std::ostream& out) {
  const RunConfig config = load_for_cli(cli);
  CollectionPlan plan = config.plan();
  if (plan.paraphraser.empty()) throw ValidationError("no paraphraser backend configured");
  const auto prompts = load_dataset(plan.dataset);
  const auto backends = build_backends(config);
  Backend& paraphraser = detail::backend_for(backends, plan.paraphraser);
  std::atomic<std::size_t> calls{0};
  std::vector<std::string> failed(prompts.size());
  detail::parallel_for(prompts.size(), plan.concurrency, [&](std::size_t i) {
    try {
      ensure_paraphrases(plan, prompts[i], paraphraser, &calls);
    } catch (const std::exception& e) {
      failed[i] = detail::error_text(e);
      log().warn("event=paraphrase_failure prompt_id={} error=\"{}\"", prompts[i].id, failed[i]);
    }
  });
  json failures = json::array();
  bool transport = false;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (failed[i].empty()) continue;
    transport = transport || detail::is_transport(failed[i]);
    failures.push_back({{"prompt_id", prompts[i].id}, {"error", failed[i]}});
  }
  out << json{{"prompts", prompts.size()}, {"paraphraser_calls", calls.load()}, {"failures", failures}}
                 .dump(2)
      << "\n";
  if (failures.empty()) return kExitOk;
  return transport ? kExitBackend : kExitPartial;
}

inline int cmd_collect(const CliOptions& cli, std::ostream& out, std::stop_token stop = {}) {
  const RunConfig config = load_for_cli(cli);
  const CollectionPlan plan = config.plan();
  plan.validate();
  if (cli.dry_run) {
    const auto prompts = load_dataset(plan.dataset);
    const CallCount c = planned_calls(plan, prompts.size());
    out << json{{"prompts", prompts.size()},
                {"generation_calls", c.generation},
                {"paraphraser_calls", c.paraphraser},
                {"total_calls", c.generation + c.paraphraser}}
                   .dump(2)
        << "\n";
    return kExitOk;
  }
  RunOptions options;
  options.stop = stop;
  options.config_echo = config;
  const auto result = run_collection(plan, build_backends(config), options);
  out << json{{"generation_calls", result.calls.generation},
              {"paraphraser_calls", result.calls.paraphraser},
              {"complete", result.complete()},
              {"bundles", result.manifest.at("bundles")},
              {"answers", result.manifest.at("answers")}}
                 .dump(2)
      << "\n";
  if (result.complete()) return kExitOk;
  for (const auto& f : result.failures)
    if (f.transport) return kExitBackend;
  return kExitPartial;
}

inline int cmd_score(const CliOptions& cli, std::ostream& out) {
  const RunConfig config = load_for_cli(cli);
  const auto judge = make_judge(config.judge);
  const ScoreRun run = score_directory(config, *judge);
  json slots = json::object();
  for (const auto& [slot, scores] : run.scores) slots[slot] = scores.size();
  json unscored = json::array();
  for (const auto& u : run.unscored)
    unscored.push_back({{"prompt_id", u.prompt_id}, {"slot", u.slot}, {"reason", u.reason}});
  out << json{{"scored", slots}, {"unscored", unscored}}.dump(2) << "\n";
  if (run.unscored.empty()) return kExitOk;
  return run.any_transport() ? kExitBackend : kExitPartial;
}

inline int eval_exit(const EvalRun& run) {
  return run.report.has_undefined_metric() || !run.unmatched.empty() ? kExitPartial : kExitOk;
}

inline int cmd_eval(const CliOptions& cli, std::ostream& out) {
  const RunConfig config = load_for_cli(cli);
  const EvalRun run = evaluate_directory(config);
  const fs::path dir = config.out_dir() / "eval";
  std::string lines;
  for (const auto& o : run.outcomes) lines += json(o).dump() + "\n";
  detail::atomic_write(dir / "outcomes.jsonl", lines);
  const json metrics = report_json(config, run);
  detail::atomic_write(dir / "metrics.json", metrics.dump(2) + "\n");
  for (const auto& d : run.report.diagnostics) log().warn("event=eval_diagnostic msg=\"{}\"", d);
  out << json{{"outcomes", run.outcomes.size()},
              {"rows", metrics.at("rows")},
              {"diagnostics", run.report.diagnostics}}
                 .dump(2)
      << "\n";
  return eval_exit(run);
}

inline int cmd_grid(const CliOptions& cli, std::ostream& out) {
  const RunConfig config = load_for_cli(cli);
  const EvalRun run = evaluate_directory(config);
  if (!run.report.grid) {
    for (const auto& d : run.report.diagnostics) log().error("event=grid_unavailable msg=\"{}\"", d);
    out << json{{"grid", nullptr}, {"diagnostics", run.report.diagnostics}}.dump(2) << "\n";
    return kExitPartial;
  }
  detail::atomic_write(config.out_dir() / "grid.csv", grid_csv(*run.report.grid));
  detail::atomic_write(config.out_dir() / "grid.json", json(*run.report.grid).dump(2) + "\n");
  out << json{{"grid", *run.report.grid}}.dump(2) << "\n";
  return eval_exit(run);
}

inline int cmd_report(const CliOptions& cli, std::ostream& out) {
  const RunConfig config = load_for_cli(cli);
  const EvalRun run = evaluate_directory(config);
  const json report = report_json(config, run);
  detail::atomic_write(config.out_dir() / "report.json", report.dump(2) + "\n");
  detail::atomic_write(config.out_dir() / "report.csv", report_csv(run.report));
  if (run.report.grid) detail::atomic_write(config.out_dir() / "grid.csv", grid_csv(*run.report.grid));
  for (const auto& d : run.report.diagnostics) log().warn("event=report_diagnostic msg=\"{}\"", d);
  out << report.dump(2) << "\n";
  return eval_exit(run);
}

// Runs fn, mapping escaped errors onto exit codes.
template <typename Fn>
int run_command(Fn&& fn) {
  try {
    return fn();
  } catch (const TransportError& e) {
    log().error("event=backend_failure error=\"{}\"", e.what());
    return kExitBackend;
  } catch (const HttpError& e) {
    log().error("event=backend_failure error=\"{}\"", e.what());
    return kExitBackend;
  } catch (const ProtocolError& e) {
    log().error("event=backend_failure error=\"{}\"", e.what());
    return kExitBackend;
  } catch (const UndefinedAurocError& e) {
    log().error("event=undefined_metric error=\"{}\"", e.what());
    return kExitPartial;
  } catch (const DegenerateQuantileError& e) {
    log().error("event=degenerate_grid error=\"{}\"", e.what());
    return kExitPartial;
  } catch (const std::exception& e) {
    log().error("event=usage_error error=\"{}\"", e.what());
    return kExitUsage;
  }
}

}  // namespace uqd
