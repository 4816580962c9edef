#pragma once

#include <filesystem>
#include <optional>

#include "apnet/checkpoint.hpp"
#include "apnet/config.hpp"
#include "apnet/dataset.hpp"
#include "apnet/surgery.hpp"

namespace apnet {

/// SGD with momentum and coupled weight decay:
///   v <- momentum * v + (grad + weight_decay * w);  w <- w - lr * v.
class SGD {
public:
  SGD(std::vector<ParamRef> params, double momentum, double weight_decay);

  void step(double lr);
  double weight_decay() const { return weight_decay_; }

  /// Velocity buffers, named "opt.<param>" for checkpointing.
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& arrays);

private:
  std::vector<ParamRef> params_;
  std::vector<Tensor> velocity_;
  double momentum_, weight_decay_;
};

struct MetricsRecord {
  int epoch = 0;
  std::vector<double> head_losses;  // mean per level over the epoch
  double similarity = 0.0;          // mean S
  double weighted_similarity = 0.0; // mean lambda * S
  double total_loss = 0.0;
  double top1 = 0.0, top5 = 0.0;    // validation, percent
  double wall_seconds = 0.0;

  void validate() const;  // accuracies in [0,100], top1 <= top5
  nlohmann::json to_json() const;
  static MetricsRecord from_json(const nlohmann::json& j);
};

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& file);

struct EvalResult {
  double top1 = 0.0, top5 = 0.0;
};

/// Central-crop evaluation of the main head over a split. Deterministic given
/// weights and data.
EvalResult evaluate(PathwayNetwork& net, const DataSplit& split, const EvalProtocol& protocol);

double schedule_lr(const OptimConfig& optim, int epoch);

struct TrainResult {
  std::filesystem::path checkpoint_last;
  std::filesystem::path checkpoint_best;
  std::vector<MetricsRecord> metrics;
  std::vector<std::string> selected_ids;
  std::int64_t params_inference = 0;
  std::int64_t params_train = 0;
  std::int64_t macs_inference = 0;
  double best_top1 = 0.0, best_top5 = 0.0;
};

/// Runs the full experiment for one seed: ingest -> epochs of multi-view
/// batches through the pathway objective -> per-epoch central-crop evaluation
/// -> metrics log + last/best checkpoints + summary.json under out_dir.
/// `resume_from` restarts from a saved checkpoint (weights, optimizer state
/// and epoch counter); the run continues exactly where it stopped because all
/// randomness is derived functionally from (seed, epoch, batch).
/// `stop_after_epoch` > 0 pauses the run after that epoch without shortening
/// the schedule horizon, for training in resumable chunks.
TrainResult train(const ExperimentConfig& cfg, std::uint64_t seed,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt,
                  int stop_after_epoch = 0);

/// Rebuilds the network from a checkpoint header and loads its weights.
PathwayNetwork network_from_checkpoint(const Checkpoint& ckpt);

/// Evaluates a checkpoint against a data source's validation split.
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint_path,
                               const DataSourceConfig& data, const EvalProtocol& protocol);

}  // namespace apnet
