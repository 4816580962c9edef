#pragma once

#include <vector>

#include "apnet/layers.hpp"

namespace apnet {

/// Channel partition of one pathway convolution. pathway_in/pathway_out list
/// the channel counts visible to each level: entry 0 is the lightest view and
/// equals the full channel count, deeper entries shrink. Sub-convolution j
/// consumes the trailing pathway_in[j] input channels and owns
/// pathway_out[j] - pathway_out[j+1] output channels, so the channels shared
/// with heavier views always sit at the trailing positions of a feature map
/// and "restrict to pathways j..k" is a contiguous slice.
struct APConvSpec {
  int pathways = 2;  // k
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::vector<std::int64_t> pathway_in;
  std::vector<std::int64_t> pathway_out;
  int kernel_h = 1, kernel_w = 1;
  int stride = 1;
  int padding = 0;
  bool bias = true;

  /// Strict validation requires strictly decreasing channel lists on both
  /// sides (every pathway owns channels). The relaxed form additionally
  /// admits equal entries in pathway_in — a degenerate partition with no
  /// parameter saving, still well-defined for accounting and weight surgery.
  void validate(bool strict = true) const;

  /// Output channels owned by sub-convolution j (0-based).
  std::int64_t sub_out_channels(int j) const;
  /// Input channels consumed by sub-convolution j.
  std::int64_t sub_in_channels(int j) const { return pathway_in[static_cast<std::size_t>(j)]; }

  /// Equal fractional split: level j sees round(share[j] * width) channels.
  static APConvSpec fractional(std::int64_t in_channels, std::int64_t out_channels, int pathways,
                               const std::vector<double>& shares, int kernel_h, int kernel_w,
                               int stride, int padding, bool bias);
};

/// Splits `width` by cumulative shares (share[0] must be 1.0), rounding to
/// nearest. Throws when rounding collapses a pathway to zero channels or
/// breaks strict ordering.
std::vector<std::int64_t> split_channels(std::int64_t width, const std::vector<double>& shares);

struct ParamCountResult {
  std::int64_t total = 0;              // learnable scalars in the pathway convolution
  std::int64_t delta_vs_standard = 0;  // standard layout minus total
};

/// Exact parameter accounting. Accepts relaxed specs; the k = 2 delta equals
/// (in - pathway_in[1]) * pathway_out[1] * kh * kw.
ParamCountResult param_count(const APConvSpec& spec);

/// Multiply-accumulates of the lightest-view forward at the given input
/// spatial size. Strict specs only: a degenerate partition has no MAC
/// reduction and is rejected.
std::int64_t mac_count(const APConvSpec& spec, std::int64_t in_h, std::int64_t in_w);

/// MACs of the standard convolution the spec replaces, same geometry.
std::int64_t standard_mac_count(const APConvSpec& spec, std::int64_t in_h, std::int64_t in_w);

/// Copies sub-convolution weights out of a standard (out, in, kh, kw) tensor.
/// Sub-convolution j takes output rows [out - pathway_out[j], out -
/// pathway_out[j+1]) and the trailing pathway_in[j] input columns; standard
/// blocks connecting pathway-exclusive inputs to shared outputs have no
/// pathway counterpart and are dropped.
std::vector<Tensor> from_standard(const Tensor& dense, const APConvSpec& spec);

/// Embeds pathway weights into a zero-initialized standard tensor (the
/// inverse of from_standard on the retained blocks). The zero blocks are
/// exactly the connections the pathway layout removes, which is what makes
/// the lightest-view forward equal a masked dense convolution.
Tensor to_standard(const std::vector<Tensor>& sub_weights, const APConvSpec& spec);

/// The pathway convolution layer. forward at level j routes the input through
/// sub-convolutions j..k-1 and concatenates their outputs; level 0 produces
/// the full out_channels map. Training forwards retain each sub-convolution's
/// output per level so a cross-pathway regularizer can read them and queue
/// extra output gradients before backward.
class APConv : public Layer {
public:
  APConv(APConvSpec spec, Rng& rng);

  const APConvSpec& spec() const { return spec_; }

  Tensor forward(const Tensor& x, int level, bool training) override;
  Tensor backward(const Tensor& grad_out, int level) override;
  void collect(const std::string& prefix, std::vector<ParamRef>* params,
               std::vector<BufferRef>* buffers) override;

  /// Cached output of sub-convolution `pathway` for the last training forward
  /// at `level`. Requires pathway >= level.
  const Tensor& pathway_output(int level, int pathway) const;
  /// Number of sub-convolution outputs cached for a level (k - level).
  int cached_pathways(int level) const;

  /// Adds `grad` to the gradient flowing into this layer's level output on
  /// the next backward(level); consumed once. Shape must match the level's
  /// concatenated output.
  void queue_output_grad(int level, const Tensor& grad);

  Tensor& sub_weight(int j) { return weights_[static_cast<std::size_t>(j)]; }
  const Tensor& sub_weight(int j) const { return weights_[static_cast<std::size_t>(j)]; }
  Tensor& sub_bias(int j) { return biases_[static_cast<std::size_t>(j)]; }

private:
  APConvSpec spec_;
  std::vector<Tensor> weights_, weight_grads_;  // per sub-convolution
  std::vector<Tensor> biases_, bias_grads_;
  std::vector<Tensor> cached_x_;                        // per level
  std::vector<std::vector<Tensor>> cached_outputs_;     // [level][pathway - level]
  std::vector<Tensor> pending_grads_;                   // per level
  std::vector<double> scratch_col_, scratch_2d_, scratch_dcol_;
};

}  // namespace apnet
