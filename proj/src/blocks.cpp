#include "apnet/blocks.hpp"

namespace apnet {

namespace {

std::unique_ptr<Layer> make_conv_unit(bool pathway, int levels, const std::vector<double>& shares,
                                      std::int64_t in_width, std::int64_t out_width, int kernel,
                                      int stride, Rng& rng) {
  const int pad = kernel / 2;
  if (!pathway)
    return std::make_unique<Conv2d>(in_width, out_width, kernel, kernel, stride, pad,
                                    /*bias=*/false, rng);
  APConvSpec spec = APConvSpec::fractional(in_width, out_width, levels, shares, kernel, kernel,
                                           stride, pad, /*bias=*/false);
  return std::make_unique<APConv>(std::move(spec), rng);
}

}  // namespace

ResidualBlock::ResidualBlock(bool pathway, int levels, const std::vector<double>& shares,
                             std::int64_t in_width, const std::vector<Unit>& units, Rng& rng)
    : pathway_(pathway) {
  std::int64_t w = in_width;
  int total_stride = 1;
  for (const Unit& u : units) {
    convs_.push_back(make_conv_unit(pathway, levels, shares, w, u.out_width, u.kernel, u.stride, rng));
    bns_.push_back(std::make_unique<BatchNorm2d>(u.out_width, levels));
    relus_.emplace_back();
    w = u.out_width;
    total_stride *= u.stride;
  }
  out_width_ = w;
  if (in_width != out_width_ || total_stride != 1) {
    proj_conv_ = make_conv_unit(pathway, levels, shares, in_width, out_width_, 1, total_stride, rng);
    proj_bn_ = std::make_unique<BatchNorm2d>(out_width_, levels);
  }
}

Tensor ResidualBlock::forward(const Tensor& x, int level, bool training) {
  Tensor h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i]->forward(h, level, training);
    h = bns_[i]->forward(h, level, training);
    if (i + 1 < convs_.size()) h = relus_[i].forward(h, level, training);
  }
  Tensor shortcut =
      proj_conv_ ? proj_bn_->forward(proj_conv_->forward(x, level, training), level, training) : x;
  h.add_(shortcut);
  return out_relu_.forward(h, level, training);
}

Tensor ResidualBlock::backward(const Tensor& grad_out, int level) {
  Tensor g = out_relu_.backward(grad_out, level);
  Tensor dsc = proj_conv_ ? proj_conv_->backward(proj_bn_->backward(g, level), level) : g;
  Tensor gm = g;
  for (std::size_t i = convs_.size(); i-- > 0;) {
    if (i + 1 < convs_.size()) gm = relus_[i].backward(gm, level);
    gm = bns_[i]->backward(gm, level);
    gm = convs_[i]->backward(gm, level);
  }
  gm.add_(dsc);
  return gm;
}

void ResidualBlock::collect(const std::string& prefix, std::vector<ParamRef>* params,
                            std::vector<BufferRef>* buffers) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i]->collect(prefix + "conv" + std::to_string(i) + ".", params, buffers);
    bns_[i]->collect(prefix + "bn" + std::to_string(i) + ".", params, buffers);
  }
  if (proj_conv_) {
    proj_conv_->collect(prefix + "proj_conv.", params, buffers);
    proj_bn_->collect(prefix + "proj_bn.", params, buffers);
  }
}

void ResidualBlock::append_pathway_layers(std::vector<APConv*>& out) {
  if (!pathway_) return;
  for (auto& c : convs_) out.push_back(static_cast<APConv*>(c.get()));
  if (proj_conv_) out.push_back(static_cast<APConv*>(proj_conv_.get()));
}

}  // namespace apnet
