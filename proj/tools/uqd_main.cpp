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

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <stop_token>
#include <thread>

#include <CLI11.hpp>

#include "uqd/commands.hpp"

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted.store(true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uqd: uncertainty decomposition over input, knowledge and decoding"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(uqd::kToolVersion));

  uqd::CliOptions cli;
  std::size_t concurrency = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config, "run configuration (JSON)")->required();
    sub->add_option("--axis", cli.axis, "input|knowledge|decoding|all")
        ->check(CLI::IsMember({"input", "knowledge", "decoding", "all"}));
    sub->add_option("--policy", cli.policy, "greedy|beam|temperature|top_k|top_p")
        ->check(CLI::IsMember({"greedy", "beam", "temperature", "top_k", "top_p"}));
    sub->add_option("--judge", cli.judge, "exact|rouge|nli")
        ->check(CLI::IsMember({"exact", "rouge", "nli"}));
    sub->add_option("--out", cli.out, "output directory");
    sub->add_option("--concurrency", concurrency, "worker count")->check(CLI::PositiveNumber);
  };

  std::string dataset;
  auto* validate = app.add_subcommand("validate", "check a prompts JSONL file");
  validate->add_option("dataset", dataset, "prompts JSONL")->required();

  auto* paraphrase = app.add_subcommand("paraphrase", "generate and cache paraphrases");
  auto* collect = app.add_subcommand("collect", "collect response bundles");
  collect->add_flag("--dry-run", cli.dry_run, "print planned call counts and exit");
  auto* score = app.add_subcommand("score", "cluster bundles and compute semantic entropy");
  auto* eval = app.add_subcommand("eval", "label answers and compute AUROC/ECE");
  auto* grid = app.add_subcommand("grid", "input x decoding quantile grid");
  auto* report = app.add_subcommand("report", "write report.json, report.csv and grid.csv");
  for (auto* sub : {paraphrase, collect, score, eval, grid, report}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? uqd::kExitOk : uqd::kExitUsage;
  }
  if (concurrency > 0) cli.concurrency = concurrency;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::stop_source stop;
  std::jthread watcher([&stop](std::stop_token done) {
    while (!done.stop_requested()) {
      if (g_interrupted.load()) {
        stop.request_stop();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });

  return uqd::run_command([&]() -> int {
    if (*validate) return uqd::cmd_validate(dataset, std::cout);
    if (*paraphrase) return uqd::cmd_paraphrase(cli, std::cout);
    if (*collect) return uqd::cmd_collect(cli, std::cout, stop.get_token());
    if (*score) return uqd::cmd_score(cli, std::cout);
    if (*eval) return uqd::cmd_eval(cli, std::cout);
    if (*grid) return uqd::cmd_grid(cli, std::cout);
    return uqd::cmd_report(cli, std::cout);
  });
}
