#include "apnet/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace apnet {

RunSummary read_run_summary(const std::filesystem::path& run_dir) {
  const std::filesystem::path file = run_dir / "summary.json";
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open run summary: " + file.string());
  nlohmann::json j;
  in >> j;
  RunSummary s;
  s.label = j.at("label").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.params = j.at("params").get<std::int64_t>();
  s.macs = j.at("macs").get<std::int64_t>();
  s.best_top1 = j.at("best_top1").get<double>();
  s.best_top5 = j.at("best_top5").get<double>();
  s.final_top1 = j.at("final_top1").get<double>();
  s.final_top5 = j.at("final_top5").get<double>();
  return s;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace

std::vector<ReportRow> summarize_runs(const std::vector<RunSummary>& runs) {
  if (runs.empty()) throw std::invalid_argument("report: no runs");
  std::map<std::string, std::vector<const RunSummary*>> by_label;
  std::vector<std::string> order;
  for (const RunSummary& r : runs) {
    if (!by_label.count(r.label)) order.push_back(r.label);
    by_label[r.label].push_back(&r);
  }
  std::vector<ReportRow> rows;
  for (const std::string& label : order) {
    const auto& group = by_label[label];
    ReportRow row;
    row.label = label;
    row.params = group.front()->params;
    row.macs = group.front()->macs;
    row.runs = static_cast<int>(group.size());
    for (const RunSummary* r : group) {
      if (r->params != row.params || r->macs != row.macs)
        throw std::runtime_error("report: runs labeled '" + label + "' disagree on params/MACs");
    }
    std::vector<double> top1, top5;
    for (const RunSummary* r : group) {
      top1.push_back(r->best_top1);
      top5.push_back(r->best_top5);
    }
    std::tie(row.top1_mean, row.top1_std) = mean_std(top1);
    std::tie(row.top5_mean, row.top5_std) = mean_std(top5);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string format_count(std::int64_t n) {
  char buf[32];
  if (n >= 1000000000)
    std::snprintf(buf, sizeof(buf), "%.2fG", static_cast<double>(n) * 1e-9);
  else if (n >= 1000000)
    std::snprintf(buf, sizeof(buf), "%.2fM", static_cast<double>(n) * 1e-6);
  else
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(n));
  return buf;
}

}  // namespace

std::string render_report_table(const std::vector<ReportRow>& rows) {
  char line[256];
  std::string out;
  std::snprintf(line, sizeof(line), "%-24s %10s %10s %5s %16s %16s\n", "run", "#params", "MACs",
                "seeds", "top-1 (%)", "top-5 (%)");
  out += line;
  out += std::string(86, '-') + "\n";
  for (const ReportRow& r : rows) {
    std::snprintf(line, sizeof(line), "%-24s %10s %10s %5d %9.2f +/-%5.2f %9.2f +/-%5.2f\n",
                  r.label.c_str(), format_count(r.params).c_str(), format_count(r.macs).c_str(),
                  r.runs, r.top1_mean, r.top1_std, r.top5_mean, r.top5_std);
    out += line;
  }
  return out;
}

std::string render_report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "label,params,macs,runs,top1_mean,top1_std,top5_mean,top5_std\n";
  for (const ReportRow& r : rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%lld,%lld,%d,%.4f,%.4f,%.4f,%.4f\n", r.label.c_str(),
                  static_cast<long long>(r.params), static_cast<long long>(r.macs), r.runs,
                  r.top1_mean, r.top1_std, r.top5_mean, r.top5_std);
    out += line;
  }
  return out;
}

}  // namespace apnet
