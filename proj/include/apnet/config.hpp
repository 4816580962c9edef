#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apnet/augment.hpp"
#include "apnet/dataset.hpp"
#include "apnet/heap.hpp"
#include "apnet/surgery.hpp"

namespace apnet {

struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::string schedule = "cosine";  // or "constant"
  int epochs = 50;
  int batch_size = 100;
  double similarity_weight = -1.0;  // negative: follow 0.1 * weight_decay
  double label_smoothing = 0.0;
};

struct EvalProtocol {
  std::int64_t resize_short = 32;
  std::int64_t crop = 32;
};

struct ExperimentConfig {
  std::string label = "run";
  DataSourceConfig data;
  std::int64_t images_per_class = 0;  // <= 0: unlimited
  NetworkPlan plan;
  std::optional<HeAPStageSpec> heap;  // alternative heterogeneous stage description
  std::vector<PolicySpec> light;      // applied to every view's base
  std::vector<PolicySpec> graded;     // deviation-ordered level policies (level 1 first)
  OptimConfig optim;
  EvalProtocol eval;
  std::vector<std::uint64_t> seeds = {1};

  void validate() const;
};

nlohmann::json policy_to_json(const PolicySpec& p);
PolicySpec policy_from_json(const nlohmann::json& j);

nlohmann::json plan_to_json(const NetworkPlan& plan);
NetworkPlan plan_from_json(const nlohmann::json& j);

nlohmann::json heap_to_json(const HeAPStageSpec& spec);
HeAPStageSpec heap_from_json(const nlohmann::json& j);

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::filesystem::path& file);

}  // namespace apnet
