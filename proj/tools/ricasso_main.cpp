/*
 * Copyright 2026 The ricasso authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ricasso/report.hpp"
#include "ricasso/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::string out_override;
};

ricasso::RunConfig load_config(const CommonArgs& args) {
  ricasso::RunConfig config = ricasso::load_run_config(args.config_path);
  if (args.seed_override) config.seed = *args.seed_override;
  if (!args.out_override.empty()) config.out_dir = args.out_override;
  config.validate();
  return config;
}

int cmd_train(const CommonArgs& args) {
  ricasso::RunConfig config = load_config(args);
  ricasso::RunRecord rec = ricasso::train(config);
  for (const auto& e : rec.epochs) {
    std::printf("epoch %3d  lr %.5f  loss %.5f  val_acc %.4f  val_auroc %.4f\n", e.epoch, e.lr,
                e.mean_total, e.val_acc, e.val_auroc);
  }
  std::printf("run directory: %s\n", rec.run_dir.c_str());
  std::printf("checkpoint:    %s\n", rec.checkpoint_path.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::vector<std::string>& ood_specs,
             const std::string& detector, const std::string& out_dir, bool no_figures) {
  ricasso::Checkpoint ckpt = ricasso::load_checkpoint(checkpoint_path);
  std::vector<ricasso::OodSource> sources;
  for (const auto& spec : ood_specs) sources.push_back(ricasso::parse_ood_source(spec));
  ricasso::EvalResult result =
      ricasso::evaluate(ckpt, sources, ricasso::score_kind_from_string(detector));

  const std::string table = ricasso::ood_report_table(result.per_source, result.mean_row);
  std::fputs(table.c_str(), stdout);
  if (!out_dir.empty()) {
    ricasso::write_eval_bundle(out_dir, result, !no_figures);
    std::printf("report bundle: %s\n", out_dir.c_str());
  }
  return kExitOk;
}

int cmd_ablate(const CommonArgs& args, const std::string& out_dir) {
  ricasso::RunConfig config = load_config(args);
  std::vector<ricasso::AblationRow> rows =
      ricasso::run_ablation_grid(config, ricasso::default_ablation_grid());
  const std::string table = ricasso::ablation_table(rows);
  std::fputs(table.c_str(), stdout);
  const std::string dir = out_dir.empty() ? config.out_dir : out_dir;
  std::filesystem::create_directories(dir);
  std::ofstream txt(std::filesystem::path(dir) / "ablation.txt");
  txt << table;
  std::ofstream csv(std::filesystem::path(dir) / "ablation.csv");
  csv << ricasso::ablation_csv(rows);
  std::printf("ablation table: %s\n", (std::filesystem::path(dir) / "ablation.csv").c_str());
  return kExitOk;
}

int cmd_report(const std::string& dir) {
  const std::vector<std::string> files = ricasso::regenerate_bundle_figures(dir);
  for (const auto& f : files) std::printf("regenerated %s\n", f.c_str());
  if (files.empty()) std::printf("no figure data found in %s\n", dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"long-tailed classification + OOD detection workbench"};
  app.require_subcommand(1);

  CommonArgs targs;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", targs.config_path, "JSON run config")->required();
  train_cmd->add_option("--seed", targs.seed_override, "override the config seed");
  train_cmd->add_option("--out", targs.out_override, "override the output directory");

  std::string checkpoint_path, detector = "energy", eval_out;
  std::vector<std::string> ood_specs;
  bool no_figures = false;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint archive")->required();
  eval_cmd->add_option("--ood", ood_specs,
                       "OOD source, repeatable: [name=]file:PATH | synthetic:KIND | folder:DIR")
      ->required();
  eval_cmd->add_option("--detector", detector, "msp|energy|odin");
  eval_cmd->add_option("--out", eval_out, "directory for the report bundle");
  eval_cmd->add_flag("--no-figures", no_figures, "tables only");

  CommonArgs aargs;
  std::string ablate_out;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the 8-row toggle grid");
  ablate_cmd->add_option("--config", aargs.config_path, "JSON run config")->required();
  ablate_cmd->add_option("--seed", aargs.seed_override, "override the config seed");
  ablate_cmd->add_option("--out", ablate_out, "directory for the grid table");

  std::string report_dir;
  CLI::App* report_cmd = app.add_subcommand("report", "re-render figures from raw data");
  report_cmd->add_option("--out", report_dir, "bundle directory to re-render")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(targs);
    if (eval_cmd->parsed()) {
      return cmd_eval(checkpoint_path, ood_specs, detector, eval_out, no_figures);
    }
    if (ablate_cmd->parsed()) return cmd_ablate(aargs, ablate_out);
    if (report_cmd->parsed()) return cmd_report(report_dir);
  } catch (const ricasso::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ricasso::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
