#pragma once

#include <memory>
#include <vector>

#include "apnet/apconv.hpp"
#include "apnet/layers.hpp"

namespace apnet {

/// Residual block (conv-bn chains plus a shortcut) whose convolutions are
/// either standard or pathway convolutions. Pathway blocks route level j
/// through the trailing channel slice the split assigns to that level; the
/// projection shortcut is partitioned with the same split so the per-level
/// addition stays shape-consistent.
class ResidualBlock {
public:
  struct Unit {
    int kernel;
    int stride;
    std::int64_t out_width;
  };

  ResidualBlock(bool pathway, int levels, const std::vector<double>& shares, std::int64_t in_width,
                const std::vector<Unit>& units, Rng& rng);

  Tensor forward(const Tensor& x, int level, bool training);
  Tensor backward(const Tensor& grad_out, int level);
  void collect(const std::string& prefix, std::vector<ParamRef>* params,
               std::vector<BufferRef>* buffers);
  void append_pathway_layers(std::vector<APConv*>& out);

  std::int64_t out_width() const { return out_width_; }

private:
  bool pathway_;
  std::int64_t out_width_ = 0;
  std::vector<std::unique_ptr<Layer>> convs_;
  std::vector<std::unique_ptr<BatchNorm2d>> bns_;
  std::vector<ReLU> relus_;
  std::unique_ptr<Layer> proj_conv_;
  std::unique_ptr<BatchNorm2d> proj_bn_;
  ReLU out_relu_;
};

}  // namespace apnet
