// Copyright 2026 The LMTD Authors
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

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "lmtd/lmtd.hpp"

namespace {

struct Options {
  std::string config;
  std::string system;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool naive = false;
};

lmtd::RunConfig resolve(const Options& o) {
  nlohmann::json j = o.config.empty() ? nlohmann::json::object() : lmtd::read_json_file(o.config);
  if (!o.system.empty()) j["system"] = o.system;
  lmtd::RunConfig c = lmtd::config_from_json(j);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out_dir = o.out;
  return c;
}

void print_rows(const std::vector<lmtd::StatsRow>& rows) { std::cout << lmtd::stats_table_text(rows); }

int run(const std::string& cmd, const Options& o) {
  const lmtd::RunConfig c = resolve(o);
  if (cmd == "gen-data") {
    lmtd::stage_gen_data(c);
  } else if (cmd == "train") {
    const auto r = lmtd::stage_train(c);
    std::cout << "train mse " << r.mse << '\n';
  } else if (cmd == "estimate") {
    std::cout << lmtd::stage_estimate(c).dump(2) << '\n';
  } else if (cmd == "select-domain") {
    const auto td = lmtd::stage_select_domain(c);
    std::cout << "r " << td.r << " epsilon " << td.epsilon << " L_fg " << td.l_fg.l_hat << '\n';
  } else if (cmd == "plan") {
    const auto res = lmtd::stage_plan(c, o.naive);
    int found = 0;
    for (const auto& r : res) found += r.ok() ? 1 : 0;
    std::cout << "plans found " << found << " / " << res.size() << '\n';
  } else if (cmd == "execute") {
    print_rows(lmtd::stage_execute(c, o.naive).rows);
  } else if (cmd == "evaluate") {
    const auto ev = lmtd::stage_evaluate(c);
    print_rows(ev.lmtd.rows);
    print_rows(ev.naive.rows);
    std::cout << "epsilon " << ev.domain.epsilon << '\n';
  } else if (cmd == "plot") {
    for (const auto& path : lmtd::stage_plot(c)) std::cout << path << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned-model trusted-domain planning pipeline"};
  app.require_subcommand(1);
  Options o;
  std::string cmd;
  for (const char* name : {"gen-data", "train", "estimate", "select-domain", "plan", "execute", "evaluate", "plot"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out", o.out, "Run directory");
    sub->add_option("--system", o.system, "sinusoid2d or quadrotor6d");
    if (std::string(name) == "plan" || std::string(name) == "execute") sub->add_flag("--naive", o.naive, "Naive planner");
    sub->callback([&cmd, sub] { cmd = sub->get_name(); });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors exit 1 so they never collide with the stage codes 2 and 3.
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    return run(cmd, o);
  } catch (const lmtd::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == lmtd::FailureKind::Domain ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
