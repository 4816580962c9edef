#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "apnet/heap.hpp"
#include "apnet/report.hpp"
#include "apnet/trainer.hpp"

namespace fs = std::filesystem;

namespace {

int run_train(const std::string& config_path, std::int64_t seed_flag, const std::string& out_dir,
              const std::string& resume) {
  const apnet::ExperimentConfig cfg = apnet::load_config(config_path);
  const std::uint64_t seed = seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : cfg.seeds.front();
  std::optional<fs::path> resume_from;
  if (!resume.empty()) resume_from = fs::path(resume);
  const apnet::TrainResult result = apnet::train(cfg, seed, out_dir, resume_from);
  std::printf("run '%s' seed %llu: %zu epoch(s)\n", cfg.label.c_str(),
              static_cast<unsigned long long>(seed), result.metrics.size());
  if (!result.metrics.empty()) {
    const apnet::MetricsRecord& last = result.metrics.back();
    std::printf("final top-1 %.2f%%  top-5 %.2f%%  (best top-1 %.2f%%)\n", last.top1, last.top5,
                result.best_top1);
  }
  std::printf("params (inference) %lld, MACs %lld\n",
              static_cast<long long>(result.params_inference),
              static_cast<long long>(result.macs_inference));
  std::printf("checkpoints: %s, %s\n", result.checkpoint_last.string().c_str(),
              result.checkpoint_best.string().c_str());
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data_path, const std::string& format,
             const std::string& config_path, std::int64_t resize, std::int64_t crop) {
  apnet::DataSourceConfig data;
  apnet::EvalProtocol protocol;
  protocol.resize_short = resize;
  protocol.crop = crop > 0 ? crop : resize;
  if (!config_path.empty()) {
    const apnet::ExperimentConfig cfg = apnet::load_config(config_path);
    data = cfg.data;
    protocol = cfg.eval;
  }
  if (!data_path.empty()) data.path = data_path;
  if (config_path.empty()) data.format = apnet::data_format_from_name(format);
  const apnet::EvalResult r = apnet::evaluate_checkpoint(checkpoint, data, protocol);
  std::printf("top-1 %.2f%%  top-5 %.2f%%\n", r.top1, r.top5);
  return 0;
}

int run_report(const std::vector<std::string>& run_dirs, const std::string& csv_path) {
  std::vector<apnet::RunSummary> summaries;
  for (const std::string& dir : run_dirs) summaries.push_back(apnet::read_run_summary(dir));
  const std::vector<apnet::ReportRow> rows = apnet::summarize_runs(summaries);
  std::fputs(apnet::render_report_table(rows).c_str(), stdout);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::trunc);
    out << apnet::render_report_csv(rows);
    std::printf("csv written to %s\n", csv_path.c_str());
  }
  return 0;
}

int run_account(const std::string& config_path, std::int64_t input_size) {
  const apnet::ExperimentConfig cfg = apnet::load_config(config_path);
  const std::int64_t side = input_size > 0 ? input_size : cfg.eval.crop;
  const apnet::PlanAccounting acc = apnet::account(cfg.plan, side, side);
  std::printf("plan '%s' at %lldx%lld input\n", cfg.label.c_str(), static_cast<long long>(side),
              static_cast<long long>(side));
  std::printf("  baseline:  %12lld params  %14lld MACs\n",
              static_cast<long long>(acc.params_baseline), static_cast<long long>(acc.macs_baseline));
  std::printf("  pathway:   %12lld params  %14lld MACs (inference)\n",
              static_cast<long long>(acc.params_inference),
              static_cast<long long>(acc.macs_inference));
  std::printf("  training:  %12lld params (heavy heads included)\n",
              static_cast<long long>(acc.params_train));
  std::printf("  savings:   %12lld params (ratio %.4f)\n", static_cast<long long>(acc.delta_sum),
              static_cast<double>(acc.params_inference) / static_cast<double>(acc.params_baseline));
  if (cfg.heap) {
    const std::int64_t heap_params = apnet::heap_stage_param_count(*cfg.heap, false);
    const std::int64_t full = apnet::heap_stage_param_count(*cfg.heap, true);
    std::printf("  heap stage: %11lld params (full-fusion baseline %lld)\n",
                static_cast<long long>(heap_params), static_cast<long long>(full));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pathway-partitioned convolutional network training and accounting"};
  app.require_subcommand(1);

  std::string config_path, out_dir, resume, checkpoint, data_path, csv_path;
  std::string format = "synth";
  std::int64_t seed = -1, resize = 32, crop = -1, input_size = -1;
  std::vector<std::string> run_dirs;

  CLI::App* train_cmd = app.add_subcommand("train", "train one seed of an experiment");
  train_cmd->add_option("--config", config_path, "experiment config (json)")->required();
  train_cmd->add_option("--seed", seed, "training seed (default: first seed in config)");
  train_cmd->add_option("--out", out_dir, "output run directory")->required();
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a validation split");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_path, "dataset path");
  eval_cmd->add_option("--format", format, "dataset format: tree|packed|synth");
  eval_cmd->add_option("--config", config_path, "take dataset + protocol from an experiment config");
  eval_cmd->add_option("--resize", resize, "short-side resize before crop");
  eval_cmd->add_option("--crop", crop, "center-crop size (default: resize)");

  CLI::App* report_cmd = app.add_subcommand("report", "tabulate completed runs");
  report_cmd->add_option("--runs", run_dirs, "run directories")->required()->expected(-1);
  report_cmd->add_option("--csv", csv_path, "also write csv here");

  CLI::App* account_cmd = app.add_subcommand("account", "parameter/MAC accounting only");
  account_cmd->add_option("--config", config_path, "experiment config (json)")->required();
  account_cmd->add_option("--input-size", input_size, "square input side (default: eval crop)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return run_train(config_path, seed, out_dir, resume);
    if (eval_cmd->parsed()) return run_eval(checkpoint, data_path, format, config_path, resize, crop);
    if (report_cmd->parsed()) return run_report(run_dirs, csv_path);
    if (account_cmd->parsed()) return run_account(config_path, input_size);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
