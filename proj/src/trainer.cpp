#include "apnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "apnet/image.hpp"
#include "apnet/objective.hpp"

namespace apnet {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------- SGD

SGD::SGD(std::vector<ParamRef> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const ParamRef& p : params_) velocity_.emplace_back(p.value->shape());
}

void SGD::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = *params_[i].value;
    const Tensor& g = *params_[i].grad;
    Tensor& v = velocity_[i];
    for (std::int64_t j = 0; j < w.numel(); ++j) {
      v[j] = momentum_ * v[j] + g[j] + weight_decay_ * w[j];
      w[j] -= lr * v[j];
    }
  }
}

std::vector<std::pair<std::string, Tensor>> SGD::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    out.emplace_back("opt." + params_[i].name, velocity_[i]);
  return out;
}

void SGD::load_state(const std::vector<std::pair<std::string, Tensor>>& arrays) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : arrays) by_name[name] = &t;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto it = by_name.find("opt." + params_[i].name);
    if (it == by_name.end())
      throw std::runtime_error("optimizer state missing for " + params_[i].name);
    if (!it->second->same_shape(velocity_[i]))
      throw std::runtime_error("optimizer state shape mismatch for " + params_[i].name);
    velocity_[i] = *it->second;
  }
}

// ------------------------------------------------------------------ metrics

void MetricsRecord::validate() const {
  if (top1 < 0.0 || top1 > 100.0 || top5 < 0.0 || top5 > 100.0)
    throw std::invalid_argument("metrics: accuracies must be in [0, 100]");
  if (top1 > top5 + 1e-12) throw std::invalid_argument("metrics: top-1 cannot exceed top-5");
}

json MetricsRecord::to_json() const {
  return json{{"epoch", epoch},
              {"head_losses", head_losses},
              {"similarity", similarity},
              {"weighted_similarity", weighted_similarity},
              {"total_loss", total_loss},
              {"top1", top1},
              {"top5", top5},
              {"wall_seconds", wall_seconds}};
}

MetricsRecord MetricsRecord::from_json(const json& j) {
  MetricsRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.head_losses = j.at("head_losses").get<std::vector<double>>();
  r.similarity = j.at("similarity").get<double>();
  r.weighted_similarity = j.at("weighted_similarity").get<double>();
  r.total_loss = j.at("total_loss").get<double>();
  r.top1 = j.at("top1").get<double>();
  r.top5 = j.at("top5").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.validate();
  return r;
}

std::vector<MetricsRecord> read_metrics(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open metrics log: " + file.string());
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(MetricsRecord::from_json(json::parse(line)));
  }
  return out;
}

// ----------------------------------------------------------------- evaluate

namespace {

Tensor pack_batch(const std::vector<Tensor>& images, std::size_t begin, std::size_t end) {
  const Tensor& first = images[begin];
  Tensor out({static_cast<std::int64_t>(end - begin), first.dim(0), first.dim(1), first.dim(2)});
  const std::int64_t plane = first.numel();
  for (std::size_t i = begin; i < end; ++i) {
    if (!images[i].same_shape(first)) throw std::invalid_argument("pack_batch: ragged image shapes");
    std::copy(images[i].data(), images[i].data() + plane,
              out.data() + static_cast<std::int64_t>(i - begin) * plane);
  }
  return out;
}

}  // namespace

EvalResult evaluate(PathwayNetwork& net, const DataSplit& split, const EvalProtocol& protocol) {
  if (split.size() == 0) throw std::invalid_argument("evaluate: empty split");
  if (split.classes != net.classes())
    throw std::invalid_argument("evaluate: dataset has " + std::to_string(split.classes) +
                                " classes, head expects " + std::to_string(net.classes()));
  const std::int64_t classes = net.classes();
  std::int64_t hit1 = 0, hit5 = 0;
  const std::size_t chunk = 128;
  std::vector<Tensor> prepped(split.size());
  for (std::size_t i = 0; i < split.size(); ++i)
    prepped[i] = eval_preprocess(split.images[i], protocol.resize_short, protocol.crop);
  for (std::size_t begin = 0; begin < prepped.size(); begin += chunk) {
    const std::size_t end = std::min(prepped.size(), begin + chunk);
    const Tensor probs = net.infer(pack_batch(prepped, begin, end));
    for (std::size_t i = begin; i < end; ++i) {
      const double* row = probs.data() + static_cast<std::int64_t>(i - begin) * classes;
      const int label = split.labels[i];
      // Rank classes by probability, class index as the deterministic
      // tie-break.
      std::int64_t above = 0;
      for (std::int64_t c = 0; c < classes; ++c)
        if (row[c] > row[label] || (row[c] == row[label] && c < label)) ++above;
      if (above == 0) ++hit1;
      if (above < 5) ++hit5;
    }
  }
  EvalResult r;
  r.top1 = 100.0 * static_cast<double>(hit1) / static_cast<double>(split.size());
  r.top5 = 100.0 * static_cast<double>(hit5) / static_cast<double>(split.size());
  return r;
}

double schedule_lr(const OptimConfig& optim, int epoch) {
  if (optim.schedule == "constant") return optim.lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(optim.epochs);
  return optim.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// -------------------------------------------------------------------- train

namespace {

constexpr std::uint64_t kTagIngest = 0x01;
constexpr std::uint64_t kTagInit = 0x02;
constexpr std::uint64_t kTagEpochOrder = 0x03;
constexpr std::uint64_t kTagBatch = 0x04;

Checkpoint make_checkpoint(const ExperimentConfig& cfg, std::uint64_t seed, PathwayNetwork& net,
                           const SGD& opt, int next_epoch, double best_top1) {
  Checkpoint ckpt;
  ckpt.header = json{{"format", "APNETv1"},
                     {"plan", plan_to_json(net.plan())},
                     {"label", cfg.label},
                     {"seed", seed},
                     {"next_epoch", next_epoch},
                     {"best_top1", best_top1}};
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  net.collect(&params, &buffers);
  for (const ParamRef& p : params) ckpt.arrays.emplace_back(p.name, *p.value);
  for (const BufferRef& b : buffers) ckpt.arrays.emplace_back("buf." + b.name, *b.value);
  for (auto& [name, t] : opt.state()) ckpt.arrays.emplace_back(name, t);
  return ckpt;
}

void load_network_arrays(PathwayNetwork& net, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.arrays) by_name[name] = &t;
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  net.collect(&params, &buffers);
  for (ParamRef& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint missing parameter " + p.name);
    if (!it->second->same_shape(*p.value))
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    *p.value = *it->second;
  }
  for (BufferRef& b : buffers) {
    auto it = by_name.find("buf." + b.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint missing buffer " + b.name);
    *b.value = *it->second;
  }
}

struct BatchStats {
  std::vector<double> head_losses;
  double similarity = 0.0;
  double weighted = 0.0;
  double total = 0.0;
};

/// One optimization step on one multi-view batch. For a single-pathway
/// network with several views every view flows through the one head
/// (forward/backward per view), which is the conventional way to train a
/// plain backbone on an augmented stream.
BatchStats train_step(PathwayNetwork& net, SGD& opt, const ViewBatch& batch, const LossConfig& loss_cfg,
                      double lr) {
  BatchStats stats;
  net.zero_grad();
  if (net.levels() == batch.levels()) {
    std::vector<Tensor> logits = net.forward_train(batch, /*training=*/true);
    std::vector<std::vector<Tensor>> sim_grads;
    const double s = cross_pathway_similarity(net.pathway_groups(), &sim_grads);
    std::vector<Tensor> dlogits;
    const LossBreakdown breakdown = total_loss(logits, batch.labels, s, loss_cfg, &dlogits);
    net.queue_similarity_grads(sim_grads, breakdown.lambda);
    net.backward(dlogits);
    stats.head_losses = breakdown.head_losses;
    stats.similarity = breakdown.similarity;
    stats.weighted = breakdown.lambda * breakdown.similarity;
    stats.total = breakdown.total;
  } else if (net.levels() == 1) {
    for (int v = 0; v < batch.levels(); ++v) {
      ViewBatch single;
      single.views.push_back(batch.views[static_cast<std::size_t>(v)]);
      single.labels = batch.labels;
      single.seed = batch.seed;
      std::vector<Tensor> logits = net.forward_train(single, /*training=*/true);
      std::vector<Tensor> dlogits;
      const LossBreakdown breakdown = total_loss(logits, batch.labels, 0.0, loss_cfg, &dlogits);
      net.backward(dlogits);
      stats.head_losses.push_back(breakdown.head_losses[0]);
      stats.total += breakdown.total;
    }
  } else {
    throw std::invalid_argument("train: batch has " + std::to_string(batch.levels()) +
                                " views but the network routes " + std::to_string(net.levels()));
  }
  opt.step(lr);
  return stats;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out_dir,
                  const std::optional<fs::path>& resume_from, int stop_after_epoch) {
  cfg.validate();
  if (cfg.heap)
    throw std::invalid_argument(
        "train: the trainer drives backbone plans; heterogeneous stages are a library-level "
        "component (see `account` for their complexity report)");
  const std::vector<PolicySpec> graded = grade_policies(cfg.graded);
  const int view_levels = std::max<int>(1, static_cast<int>(graded.size()));
  if (cfg.plan.pathways > 1 && view_levels != cfg.plan.pathways)
    throw std::invalid_argument("train: " + std::to_string(view_levels) + " view levels for a " +
                                std::to_string(cfg.plan.pathways) + "-pathway plan");

  fs::create_directories(out_dir);
  IngestResult data = ingest(cfg.data, cfg.images_per_class, Rng::mix(seed, kTagIngest));

  PathwayNetwork net(cfg.plan, Rng::mix(seed, kTagInit));
  std::vector<ParamRef> params;
  net.collect(&params, nullptr);
  SGD opt(params, cfg.optim.momentum, cfg.optim.weight_decay);

  LossConfig loss_cfg;
  loss_cfg.weight_decay = cfg.optim.weight_decay;
  loss_cfg.similarity_weight = cfg.optim.similarity_weight;
  loss_cfg.label_smoothing = cfg.optim.label_smoothing;

  int start_epoch = 0;
  double best_top1 = 0.0, best_top5 = 0.0;
  if (resume_from) {
    const Checkpoint ckpt = load_checkpoint(*resume_from);
    load_network_arrays(net, ckpt);
    opt.load_state(ckpt.arrays);
    start_epoch = ckpt.header.at("next_epoch").get<int>();
    best_top1 = ckpt.header.value("best_top1", 0.0);
  }

  TrainResult result;
  result.selected_ids = data.train.ids;
  result.params_inference = net.param_count_inference();
  result.params_train = net.param_count_train();
  const std::int64_t in_h = data.train.images.front().dim(1);
  const std::int64_t in_w = data.train.images.front().dim(2);
  result.macs_inference = account(cfg.plan, in_h, in_w).macs_inference;
  result.checkpoint_last = out_dir / "last.apnet";
  result.checkpoint_best = out_dir / "best.apnet";

  {
    std::ofstream sel(out_dir / "selection.txt", std::ios::trunc);
    for (const std::string& id : data.train.ids) sel << id << "\n";
  }

  std::ofstream metrics_out(out_dir / "metrics.ndjson", start_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!metrics_out) throw std::runtime_error("cannot write metrics log under " + out_dir.string());

  const int last_epoch = stop_after_epoch > 0 ? std::min(stop_after_epoch, cfg.optim.epochs)
                                              : cfg.optim.epochs;
  const std::size_t n_train = data.train.size();
  std::vector<std::size_t> order(n_train);
  for (int epoch = start_epoch; epoch < last_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = schedule_lr(cfg.optim, epoch);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    Rng order_rng(Rng::mix(Rng::mix(seed, kTagEpochOrder), static_cast<std::uint64_t>(epoch)));
    order_rng.shuffle(order);

    std::vector<double> head_sums;
    double sim_sum = 0.0, weighted_sum = 0.0, total_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < n_train; begin += static_cast<std::size_t>(cfg.optim.batch_size)) {
      const std::size_t end = std::min(n_train, begin + static_cast<std::size_t>(cfg.optim.batch_size));
      std::vector<Tensor> images;
      std::vector<int> labels;
      images.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        images.push_back(data.train.images[order[i]]);
        labels.push_back(data.train.labels[order[i]]);
      }
      const std::uint64_t batch_index = begin / static_cast<std::size_t>(cfg.optim.batch_size);
      Rng batch_rng(Rng::mix(Rng::mix(Rng::mix(seed, kTagBatch), static_cast<std::uint64_t>(epoch)),
                             batch_index));
      const ViewBatch batch = make_view_batch(images, labels, graded, cfg.light, batch_rng);
      BatchStats stats;
      try {
        stats = train_step(net, opt, batch, loss_cfg, lr);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_index) + ": " + e.what());
      }
      if (head_sums.size() < stats.head_losses.size()) head_sums.resize(stats.head_losses.size(), 0.0);
      for (std::size_t h = 0; h < stats.head_losses.size(); ++h) head_sums[h] += stats.head_losses[h];
      sim_sum += stats.similarity;
      weighted_sum += stats.weighted;
      total_sum += stats.total;
      ++n_batches;
    }

    const EvalResult eval_result = evaluate(net, data.val, cfg.eval);
    MetricsRecord rec;
    rec.epoch = epoch;
    for (double s : head_sums) rec.head_losses.push_back(s / static_cast<double>(n_batches));
    rec.similarity = sim_sum / static_cast<double>(n_batches);
    rec.weighted_similarity = weighted_sum / static_cast<double>(n_batches);
    rec.total_loss = total_sum / static_cast<double>(n_batches);
    rec.top1 = eval_result.top1;
    rec.top5 = eval_result.top5;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.validate();
    metrics_out << rec.to_json().dump() << "\n";
    metrics_out.flush();
    result.metrics.push_back(rec);

    save_checkpoint(result.checkpoint_last, make_checkpoint(cfg, seed, net, opt, epoch + 1, best_top1));
    if (eval_result.top1 >= best_top1) {
      best_top1 = eval_result.top1;
      best_top5 = eval_result.top5;
      save_checkpoint(result.checkpoint_best, make_checkpoint(cfg, seed, net, opt, epoch + 1, best_top1));
    }
  }
  result.best_top1 = best_top1;
  result.best_top5 = best_top5;

  json summary{{"label", cfg.label},
               {"seed", seed},
               {"params", result.params_inference},
               {"params_train", result.params_train},
               {"macs", result.macs_inference},
               {"best_top1", result.best_top1},
               {"best_top5", result.best_top5},
               {"final_top1", result.metrics.empty() ? 0.0 : result.metrics.back().top1},
               {"final_top5", result.metrics.empty() ? 0.0 : result.metrics.back().top5},
               {"epochs", cfg.optim.epochs},
               {"selected_training_images", result.selected_ids.size()}};
  std::ofstream summary_out(out_dir / "summary.json", std::ios::trunc);
  summary_out << summary.dump(2) << "\n";
  return result;
}

PathwayNetwork network_from_checkpoint(const Checkpoint& ckpt) {
  PathwayNetwork net(plan_from_json(ckpt.header.at("plan")), /*init_seed=*/0);
  load_network_arrays(net, ckpt);
  return net;
}

EvalResult evaluate_checkpoint(const fs::path& checkpoint_path, const DataSourceConfig& data,
                               const EvalProtocol& protocol) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  PathwayNetwork net = network_from_checkpoint(ckpt);
  IngestResult split = ingest(data, /*images_per_class=*/0, /*seed=*/0);
  return evaluate(net, split.val, protocol);
}

}  // namespace apnet
