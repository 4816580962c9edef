#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "apnet/apconv.hpp"
#include "apnet/augment.hpp"
#include "apnet/blocks.hpp"
#include "apnet/layers.hpp"
#include "apnet/objective.hpp"

namespace apnet {

enum class BlockType { Basic, Bottleneck };

const char* block_type_name(BlockType t);
BlockType block_type_from_name(const std::string& name);

struct StageSpec {
  BlockType block = BlockType::Basic;
  int blocks = 1;
  std::int64_t width = 16;
  int stride = 1;  // applied by the first block of the stage
};

struct StemSpec {
  std::int64_t out_channels = 16;
  int kernel = 3;
  int stride = 1;
  bool max_pool = false;  // 3x3/2 pool after the stem (ImageNet-style stems)
};

struct BackboneSpec {
  std::int64_t input_channels = 3;
  StemSpec stem;
  std::vector<StageSpec> stages;

  std::int64_t classifier_dim() const { return stages.back().width; }
  void validate() const;
};

/// Which part of the backbone becomes pathway convolutions and how channels
/// split. `split` holds cumulative shares per level (share 0 is always 1);
/// empty means the uniform default where every pathway owns 1/k of the
/// channels. `replace_stages` must be a contiguous tail of the stage list;
/// empty means the last stage. pathways == 1 describes the unmodified
/// baseline (no replacement, single head).
struct NetworkPlan {
  BackboneSpec backbone;
  int pathways = 1;  // k; equals the number of view levels the network trains on
  std::vector<int> replace_stages;
  std::vector<double> split;
  std::int64_t classes = 10;

  void validate() const;
  std::vector<int> replaced() const;
  std::vector<double> shares() const;
};

struct PlanAccounting {
  std::int64_t params_baseline = 0;   // standard backbone + main head
  std::int64_t params_inference = 0;  // pathway backbone + main head (heavy heads idle at inference)
  std::int64_t params_train = 0;      // everything, heavy heads included
  std::int64_t delta_sum = 0;         // per-layer parameter savings, summed over replaced convs
  std::int64_t macs_baseline = 0;     // lightest-view forward MACs, standard net
  std::int64_t macs_inference = 0;    // lightest-view forward MACs, pathway net
};

/// Pure arithmetic over the plan; equals the built network's allocation
/// exactly (params_baseline - delta_sum == params_inference).
PlanAccounting account(const NetworkPlan& plan, std::int64_t input_h, std::int64_t input_w);

/// One replaced layer's regularizer hook: the layer and the view level whose
/// sub-convolution outputs feed the cross-pathway similarity.
struct SimilarityTap {
  APConv* layer;
  int level;
};

/// The surgerized network: shared stem/stages, pathway stages at the tail,
/// one classification head per view level.
class PathwayNetwork {
public:
  PathwayNetwork(const NetworkPlan& plan, std::uint64_t init_seed);

  const NetworkPlan& plan() const { return plan_; }
  int levels() const { return plan_.pathways; }
  std::int64_t classes() const { return plan_.classes; }

  /// Runs every view level through its pathway route; logits[j] comes from
  /// head j on the level-j features. Training mode retains the
  /// sub-convolution outputs for the regularizer.
  std::vector<Tensor> forward_train(const ViewBatch& batch, bool training = true);

  /// Lightest-view forward in eval mode through the main head; returns
  /// softmax class scores (N, classes). Pure function of weights and input.
  Tensor infer(const Tensor& images);

  /// Backpropagates all levels' logit gradients; parameter gradients
  /// accumulate. Queued similarity gradients are consumed here.
  void backward(const std::vector<Tensor>& dlogits);

  /// Regularizer taps for the last training forward, layer-major then level.
  std::vector<SimilarityTap> similarity_taps();
  /// Builds the PathwayGroup list matching similarity_taps().
  std::vector<PathwayGroup> pathway_groups();
  /// Queues lambda * grads onto the tapped layers; `grads` must align with
  /// similarity_taps() / pathway_groups().
  void queue_similarity_grads(const std::vector<std::vector<Tensor>>& grads, double lambda);

  void collect(std::vector<ParamRef>* params, std::vector<BufferRef>* buffers);
  void zero_grad();
  std::int64_t param_count_train();
  std::int64_t param_count_inference();

  Linear& head(int level) { return *heads_[static_cast<std::size_t>(level)]; }

private:
  Tensor forward_level(const Tensor& view, int level, bool training);
  Tensor backward_level(const Tensor& dlogits, int level);

  NetworkPlan plan_;
  std::vector<double> shares_;
  int first_replaced_ = -1;  // stage index; -1 when pathways == 1
  std::int64_t entry_width_ = 0;

  std::unique_ptr<Conv2d> stem_conv_;
  std::unique_ptr<BatchNorm2d> stem_bn_;
  ReLU stem_relu_;
  std::unique_ptr<MaxPool2d> stem_pool_;
  std::vector<std::vector<std::unique_ptr<ResidualBlock>>> stages_;
  GlobalAvgPool pool_;
  std::vector<std::unique_ptr<Linear>> heads_;
  std::vector<APConv*> ap_layers_;
};

/// Builds the pathway network described by the plan ("model surgery": shared
/// lower layers stay standard, every convolution in the replaced tail stages
/// becomes a pathway convolution, K heads are attached).
PathwayNetwork surgerize(const NetworkPlan& plan, std::uint64_t init_seed);

/// Single central-crop evaluation preprocessing: resize the short side, then
/// center-crop to (crop, crop).
Tensor eval_preprocess(const Tensor& image, std::int64_t resize_short, std::int64_t crop);

}  // namespace apnet
