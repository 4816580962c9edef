#pragma once

#include <memory>
#include <string>
#include <vector>

#include "apnet/conv_kernels.hpp"
#include "apnet/rng.hpp"
#include "apnet/tensor.hpp"

namespace apnet {

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

struct BufferRef {
  std::string name;
  Tensor* value;
};

/// Base class for layers that can process several view levels. Each level has
/// its own activation cache slot, so forward passes of all levels may run
/// before their backward passes. Parameter gradients accumulate until
/// zero_grad(). One training step owns the layer exclusively.
class Layer {
public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, int level, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out, int level) = 0;

  /// Reports learnable parameters and persistent buffers under `prefix`.
  virtual void collect(const std::string& prefix, std::vector<ParamRef>* params,
                       std::vector<BufferRef>* buffers) = 0;

  void zero_grad();
  std::int64_t param_count();
};

double fan_in_uniform_bound(std::int64_t fan_in);
void init_fan_in_uniform(Tensor& w, std::int64_t fan_in, Rng& rng);

class Conv2d : public Layer {
public:
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel_h, int kernel_w, int stride,
         int pad, bool bias, Rng& rng);

  Tensor forward(const Tensor& x, int level, bool training) override;
  Tensor backward(const Tensor& grad_out, int level) override;
  void collect(const std::string& prefix, std::vector<ParamRef>* params,
               std::vector<BufferRef>* buffers) override;

  std::int64_t in_channels() const { return in_channels_; }
  std::int64_t out_channels() const { return out_channels_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }
  bool has_bias() const { return has_bias_; }

  Tensor weight;  // (out, in, kh, kw)
  Tensor weight_grad;
  Tensor bias;  // (out) when enabled
  Tensor bias_grad;

private:
  std::int64_t in_channels_, out_channels_;
  int kernel_h_, kernel_w_, stride_, pad_;
  bool has_bias_;
  std::vector<Tensor> cached_x_;
  std::vector<double> scratch_col_, scratch_2d_, scratch_dcol_;
};

/// Batch normalization whose running statistics are kept per view level
/// ("stat slot"), while the affine parameters are shared. A layer inside a
/// pathway stage sees fewer channels for heavier levels; those use the
/// trailing slice of the affine parameters and of the slot's statistics.
/// Inference (training=false, level 0) consumes the lightest view's slot.
class BatchNorm2d : public Layer {
public:
  BatchNorm2d(std::int64_t channels, int stat_slots, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, int level, bool training) override;
  Tensor backward(const Tensor& grad_out, int level) override;
  void collect(const std::string& prefix, std::vector<ParamRef>* params,
               std::vector<BufferRef>* buffers) override;

  std::int64_t channels() const { return channels_; }
  int stat_slots() const { return stat_slots_; }

  Tensor gamma, gamma_grad;
  Tensor beta, beta_grad;
  std::vector<Tensor> running_mean;  // per slot, full width
  std::vector<Tensor> running_var;

private:
  struct LevelCache {
    Tensor xhat;
    Tensor inv_std;  // per active channel
    bool training = false;
    std::int64_t active = 0;
  };
  std::int64_t channels_;
  int stat_slots_;
  double momentum_, eps_;
  std::vector<LevelCache> cache_;
};

class ReLU : public Layer {
public:
  Tensor forward(const Tensor& x, int level, bool training) override;
  Tensor backward(const Tensor& grad_out, int level) override;
  void collect(const std::string&, std::vector<ParamRef>*, std::vector<BufferRef>*) override {}

private:
  std::vector<Tensor> cached_y_;
};

class GlobalAvgPool : public Layer {
public:
  Tensor forward(const Tensor& x, int level, bool training) override;
  Tensor backward(const Tensor& grad_out, int level) override;
  void collect(const std::string&, std::vector<ParamRef>*, std::vector<BufferRef>*) override {}

private:
  std::vector<std::vector<std::int64_t>> cached_shape_;
};

class MaxPool2d : public Layer {
public:
  MaxPool2d(int kernel, int stride, int pad);

  Tensor forward(const Tensor& x, int level, bool training) override;
  Tensor backward(const Tensor& grad_out, int level) override;
  void collect(const std::string&, std::vector<ParamRef>*, std::vector<BufferRef>*) override {}

private:
  int kernel_, stride_, pad_;
  struct LevelCache {
    std::vector<std::int64_t> argmax;  // flat input index per output element
    std::vector<std::int64_t> in_shape;
  };
  std::vector<LevelCache> cache_;
};

class Linear : public Layer {
public:
  Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng);

  Tensor forward(const Tensor& x, int level, bool training) override;
  Tensor backward(const Tensor& grad_out, int level) override;
  void collect(const std::string& prefix, std::vector<ParamRef>* params,
               std::vector<BufferRef>* buffers) override;

  std::int64_t in_features() const { return in_features_; }
  std::int64_t out_features() const { return out_features_; }

  Tensor weight, weight_grad;  // (out, in)
  Tensor bias, bias_grad;      // (out)

private:
  std::int64_t in_features_, out_features_;
  std::vector<Tensor> cached_x_;
};

namespace detail {
template <class T>
T& level_slot(std::vector<T>& v, int level) {
  if (level < 0) throw std::invalid_argument("level out of range: " + std::to_string(level));
  if (static_cast<std::size_t>(level) >= v.size()) v.resize(static_cast<std::size_t>(level) + 1);
  return v[static_cast<std::size_t>(level)];
}
}  // namespace detail

}  // namespace apnet
