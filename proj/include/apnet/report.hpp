#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace apnet {

struct RunSummary {
  std::string label;
  std::uint64_t seed = 0;
  std::int64_t params = 0;  // inference accounting
  std::int64_t macs = 0;
  double best_top1 = 0.0, best_top5 = 0.0;
  double final_top1 = 0.0, final_top5 = 0.0;
};

RunSummary read_run_summary(const std::filesystem::path& run_dir);

struct ReportRow {
  std::string label;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  int runs = 0;
  double top1_mean = 0.0, top1_std = 0.0;
  double top5_mean = 0.0, top5_std = 0.0;
};

/// Groups run summaries by label; accuracy columns are mean and sample
/// standard deviation of the best top-1/top-5 over seeds.
std::vector<ReportRow> summarize_runs(const std::vector<RunSummary>& runs);

std::string render_report_table(const std::vector<ReportRow>& rows);
std::string render_report_csv(const std::vector<ReportRow>& rows);

}  // namespace apnet
