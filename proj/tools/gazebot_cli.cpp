// Copyright 2026 The GazeBot Authors
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

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "gazebot/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
namespace pl = gazebot::pipeline;

constexpr int kUsage = 1;
constexpr int kFailure = 2;

/// Thrown for bad configuration values; mapped to the usage exit code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Config-key flags shared by every subcommand.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app, bool seed_required = false) {
    app->add_option("--config", config_file, "config file (gazebot-config 1)")
        ->check(CLI::ExistingFile);
    for (const auto& f : pl::config_fields()) {
      std::string names = "--" + f.name;
      if (f.name.find('_') != std::string::npos) {
        std::string dashed = f.name;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        names += ",--" + dashed;
      }
      auto* opt = app->add_option(names, values[f.name], f.help);
      if (f.name == "seed" && seed_required) opt->required();
    }
  }

  pl::RunConfig build(const CLI::App* app) const {
    pl::RunConfig c;
    try {
      if (!config_file.empty()) c = pl::load_config(config_file);
      for (const auto& f : pl::config_fields())
        if (app->count("--" + f.name) > 0) pl::set_config_value(c, f.name, values.at(f.name));
      c.validate();
    } catch (const gazebot::Error& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

void write_segmentation(const pl::Segmentation& seg, const std::vector<std::vector<double>>& losses,
                        const fs::path& dir) {
  fs::create_directories(dir / "annotations");
  const auto report = pl::report_segments(seg);
  pl::detail::write_text(dir / "segments.csv", report.csv);
  pl::detail::write_text(dir / "segments_summary.txt", report.summary());
  std::string trace = "demo,t,loss,segment,phase\n";
  for (std::size_t i = 0; i < seg.annotations.size(); ++i) {
    const auto& ann = seg.annotations[i];
    gazebot::dataset::save_annotation(ann, seg.last_step[i],
                                      dir / "annotations" / (seg.names[i] + ".ann"));
    if (i >= losses.size()) continue;
    for (std::size_t t = 0; t < losses[i].size(); ++t) {
      int k = 0;
      while (k + 1 < static_cast<int>(ann.segments.size()) &&
             static_cast<int>(t) > ann.segments[static_cast<std::size_t>(k)].e)
        ++k;
      const bool reach = static_cast<int>(t) < ann.segments[static_cast<std::size_t>(k)].b;
      trace += seg.names[i] + "," + std::to_string(t) + "," + pl::detail::fmt(losses[i][t]) + "," +
               std::to_string(k) + "," + (reach ? "reaching" : "gaze-centered") + "\n";
    }
  }
  pl::detail::write_text(dir / "predictivity.csv", trace);
  std::printf("%s", report.summary().c_str());
}

int lint_paths(const std::vector<std::string>& paths) {
  int problems = 0;
  auto report = [&](const std::string& where, const std::vector<std::string>& issues) {
    for (const auto& s : issues) std::printf("%s: %s\n", where.c_str(), s.c_str());
    problems += static_cast<int>(issues.size());
  };
  auto lint_demo = [&](const fs::path& p) {
    try {
      report(p.string(), gazebot::dataset::lint(gazebot::dataset::load(p)));
    } catch (const gazebot::Error& e) {
      report(p.string(), {e.what()});
    }
  };
  int checked = 0;
  for (const auto& s : paths) {
    const fs::path p(s);
    if (fs::is_regular_file(p)) {
      lint_demo(p);
      ++checked;
    } else if (fs::is_directory(p)) {
      std::vector<fs::path> demos;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".demo") demos.push_back(e.path());
      std::sort(demos.begin(), demos.end());
      for (const auto& d : demos) lint_demo(d);
      checked += static_cast<int>(demos.size());
      if (fs::exists(p / "results.csv") && fs::exists(p / "trials.log")) {
        report((p / "results.csv").string(), pl::lint_report(p));
        ++checked;
      }
    } else {
      throw UsageError("'" + s + "' does not exist");
    }
  }
  std::printf("checked %d item(s), %d problem(s)\n", checked, problems);
  return problems == 0 ? 0 : kFailure;
}

int report_dir(const fs::path& dir) {
  const auto table = pl::ResultTable::parse_csv(pl::detail::read_text(dir / "results.csv"));
  std::printf("%s", pl::format_table(table).c_str());
  if (fs::exists(dir / "trials.log")) {
    std::map<std::string, std::pair<double, int>> err;
    std::istringstream in(pl::detail::read_text(dir / "trials.log"));
    std::string line;
    while (std::getline(in, line)) {
      if (pl::detail::trim(line).empty()) continue;
      const auto kv = pl::parse_log_line(line);
      const auto it = kv.find("bottleneck_error");
      if (it == kv.end()) continue;
      for (const auto& v : pl::detail::split(it->second, ','))
        if (!v.empty() && v != "na") {
          auto& [sum, n] = err[kv.at("variant") + " " + kv.at("condition")];
          sum += pl::detail::parse_number<double>("bottleneck_error", v);
          ++n;
        }
    }
    if (!err.empty()) std::printf("\nmean first bottleneck error (m)\n");
    for (const auto& [key, v] : err) std::printf("  %-22s %.4f\n", key.c_str(), v.first / v.second);
  }
  const auto problems = pl::lint_report(dir);
  std::printf("\nlog recount: %s\n", problems.empty() ? "consistent" : "INCONSISTENT");
  for (const auto& p : problems) std::printf("  %s\n", p.c_str());
  return problems.empty() ? 0 : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GazeBot: gaze-centered imitation pipeline on a simulated pick-and-place task"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gazebot 1.0.0");

  ConfigFlags gen_flags, seg_flags, train_flags, eval_flags;
  std::string gen_out, seg_out, train_out;
  std::vector<std::string> lint_inputs;
  std::string report_input;

  auto* gen = app.add_subcommand("gen-demos", "generate scripted PileBox demonstrations");
  gen_flags.attach(gen);
  gen->add_option("--out", gen_out, "output directory (default: demo_dir, else 'demos')");

  auto* seg = app.add_subcommand("segment", "segment demonstrations into sub-tasks and bottlenecks");
  seg_flags.attach(seg);
  seg->add_option("--out", seg_out, "output directory (default: output key)");

  auto* train = app.add_subcommand("train", "segment demonstrations and fit policy variants");
  train_flags.attach(train);
  train->add_option("--out", train_out, "model directory (default: <output>/models)");

  auto* eval = app.add_subcommand("eval", "train or load policies and run ID/OOD trials");
  eval_flags.attach(eval, /*seed_required=*/true);

  auto* lint = app.add_subcommand("lint", "check demo files, demo directories, or eval outputs");
  lint->add_option("paths", lint_inputs, "files or directories")->required();

  auto* report = app.add_subcommand("report", "print the success table of an eval output directory");
  report->add_option("dir", report_input, "eval output directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      const auto c = gen_flags.build(gen);
      const fs::path dir = !gen_out.empty() ? gen_out : (!c.demo_dir.empty() ? c.demo_dir : "demos");
      pl::write_demos(c, dir);
      std::printf("wrote %d demonstrations to %s\n", c.demos, dir.string().c_str());
      return 0;
    }
    if (seg->parsed()) {
      const auto c = seg_flags.build(seg);
      std::vector<std::vector<double>> losses;
      const auto s = pl::segment_dataset(pl::DemoSource::from_config(c), c, &losses);
      write_segmentation(s, losses, seg_out.empty() ? fs::path(c.output) : fs::path(seg_out));
      return 0;
    }
    if (train->parsed()) {
      const auto c = train_flags.build(train);
      const auto src = pl::DemoSource::from_config(c);
      const auto t = pl::train_models(src, c);
      const fs::path dir = train_out.empty() ? fs::path(c.output) / "models" : fs::path(train_out);
      pl::save_models(t, dir);
      std::printf("trained %zu variant(s) on %d demonstrations (%d skipped); models in %s\n",
                  t.models.size(), src.size() - t.skipped_demos, t.skipped_demos,
                  dir.string().c_str());
      return 0;
    }
    if (eval->parsed()) {
      const auto c = eval_flags.build(eval);
      const auto r = pl::run_pipeline(c);
      std::printf("%s", pl::format_table(r.table).c_str());
      std::printf("results in %s\n", c.output.c_str());
      return 0;
    }
    if (lint->parsed()) return lint_paths(lint_inputs);
    if (report->parsed()) return report_dir(report_input);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
