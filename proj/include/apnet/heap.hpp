#pragma once

#include <memory>
#include <vector>

#include "apnet/blocks.hpp"
#include "apnet/layers.hpp"

namespace apnet {

/// One heterogeneous pathway: its input resolution, channel width and block
/// count. Pathway 0 is the main (lightest-view) pathway; heavier pathways run
/// at strictly higher resolutions, where small-grid detail survives.
struct HeAPPathwaySpec {
  std::int64_t resolution = 8;  // square input side
  std::int64_t width = 16;
  int blocks = 1;
};

struct HeAPStageSpec {
  std::int64_t in_channels = 3;
  std::int64_t classes = 10;
  std::vector<HeAPPathwaySpec> pathways;

  void validate() const;
  int order() const { return static_cast<int>(pathways.size()); }
};

struct HeAPForward {
  std::vector<Tensor> logits;    // per pathway
  std::vector<Tensor> features;  // per pathway, post-blocks
};

/// Parameter arithmetic for the stage; with `full_fusion` every pathway would
/// receive every other pathway's features (the equal-width multi-branch
/// baseline this design prunes down from).
std::int64_t heap_stage_param_count(const HeAPStageSpec& spec, bool full_fusion);

/// Heterogeneous augmentation pathway stage. Each pathway owns a stem, a
/// block tower and a classification head. Fusion is strictly heavier ->
/// lighter: pathway j's tower consumes concat(own stem features, learnable
/// stride-2 downsamples of every heavier pathway's stem features), so heavy
/// pathways never see light-pathway parameters. During inference only the
/// main head runs, fed by every pathway's features extracted from the single
/// light image rendered at each resolution.
class HeAPStage {
public:
  HeAPStage(HeAPStageSpec spec, std::uint64_t init_seed);

  const HeAPStageSpec& spec() const { return spec_; }

  /// views[j]: (N, in_channels, r_j, r_j), the level-j view at pathway j's
  /// resolution.
  HeAPForward forward_train(const std::vector<Tensor>& views, bool training = true);

  /// Single light image batch (any square resolution); rendered to every
  /// pathway's resolution by bilinear resize. Returns softmax scores from the
  /// main head only.
  Tensor infer(const Tensor& images);

  void backward(const std::vector<Tensor>& dlogits);

  void collect(std::vector<ParamRef>* params, std::vector<BufferRef>* buffers);
  void zero_grad();
  std::int64_t param_count();

  /// Channels entering pathway j's tower after fusion: w_j + sum_{i>j} w_i.
  std::int64_t fused_width(int j) const;

  Linear& head(int j) { return *pathways_[static_cast<std::size_t>(j)].head; }
  /// Downsample convolution `step` on the chain feeding target pathway j from
  /// source pathway i (for inspection in tests).
  Conv2d& downsample_conv(int target, int source, int step);

private:
  struct Pathway {
    std::unique_ptr<Conv2d> stem_conv;
    std::unique_ptr<BatchNorm2d> stem_bn;
    ReLU stem_relu;
    // down[i - j - 1] is the chain from source pathway i to this target j.
    std::vector<std::vector<std::unique_ptr<Conv2d>>> down_chains;
    std::vector<std::unique_ptr<ResidualBlock>> blocks;
    GlobalAvgPool pool;
    std::unique_ptr<Linear> head;
  };

  Tensor run_stem(int j, const Tensor& input, bool training);
  Tensor fuse(int j, const std::vector<Tensor>& stem_outs, bool training);
  Tensor run_tower(int j, const Tensor& fused, bool training);

  HeAPStageSpec spec_;
  std::vector<Pathway> pathways_;
  std::vector<Tensor> last_stem_outs_;  // cached for backward
};

}  // namespace apnet
