#include "apnet/heap.hpp"

#include <stdexcept>

#include "apnet/image.hpp"
#include "apnet/objective.hpp"

namespace apnet {

namespace {

int downsample_steps(std::int64_t from_res, std::int64_t to_res) {
  int steps = 0;
  std::int64_t r = from_res;
  while (r > to_res) {
    if (r % 2 != 0) throw std::invalid_argument("HeAP: resolution " + std::to_string(r) + " is not halvable");
    r /= 2;
    ++steps;
  }
  if (r != to_res)
    throw std::invalid_argument("HeAP: resolution " + std::to_string(from_res) +
                                " cannot reach " + std::to_string(to_res) + " by stride-2 downsampling");
  return steps;
}

}  // namespace

void HeAPStageSpec::validate() const {
  if (in_channels <= 0) throw std::invalid_argument("HeAPStageSpec: in_channels must be positive");
  if (classes < 2) throw std::invalid_argument("HeAPStageSpec: need at least two classes");
  if (pathways.empty()) throw std::invalid_argument("HeAPStageSpec: need at least one pathway");
  for (std::size_t j = 0; j < pathways.size(); ++j) {
    const HeAPPathwaySpec& p = pathways[j];
    if (p.resolution < 1 || p.width < 1 || p.blocks < 1)
      throw std::invalid_argument("HeAPStageSpec: bad pathway " + std::to_string(j));
    if (j > 0 && p.resolution <= pathways[j - 1].resolution)
      throw std::invalid_argument("HeAPStageSpec: heavier pathways must run at strictly higher resolution");
  }
  for (std::size_t j = 0; j < pathways.size(); ++j)
    for (std::size_t i = j + 1; i < pathways.size(); ++i)
      downsample_steps(pathways[i].resolution, pathways[j].resolution);
}

std::int64_t heap_stage_param_count(const HeAPStageSpec& spec, bool full_fusion) {
  spec.validate();
  const int k = spec.order();
  std::int64_t total = 0;
  for (int j = 0; j < k; ++j) {
    const HeAPPathwaySpec& p = spec.pathways[static_cast<std::size_t>(j)];
    total += spec.in_channels * p.width * 9 + 2 * p.width;  // stem conv + bn
    std::int64_t fused = p.width;
    for (int i = 0; i < k; ++i) {
      if (i == j) continue;
      if (i < j && !full_fusion) continue;
      const HeAPPathwaySpec& src = spec.pathways[static_cast<std::size_t>(i)];
      const int steps = i > j ? downsample_steps(src.resolution, p.resolution)
                              : downsample_steps(p.resolution, src.resolution);
      total += static_cast<std::int64_t>(steps) * src.width * src.width * 4;  // 2x2 resampling convs
      fused += src.width;
    }
    std::int64_t in_w = fused;
    for (int b = 0; b < p.blocks; ++b) {
      total += in_w * p.width * 9 + 2 * p.width;      // conv0 + bn0
      total += p.width * p.width * 9 + 2 * p.width;   // conv1 + bn1
      if (in_w != p.width) total += in_w * p.width + 2 * p.width;  // projection shortcut
      in_w = p.width;
    }
    total += (p.width + 1) * spec.classes;  // head
  }
  return total;
}

HeAPStage::HeAPStage(HeAPStageSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(init_seed);
  const int k = spec_.order();
  for (int j = 0; j < k; ++j) {
    const HeAPPathwaySpec& p = spec_.pathways[static_cast<std::size_t>(j)];
    Pathway path;
    path.stem_conv = std::make_unique<Conv2d>(spec_.in_channels, p.width, 3, 3, 1, 1, /*bias=*/false, rng);
    path.stem_bn = std::make_unique<BatchNorm2d>(p.width, /*stat_slots=*/1);
    for (int i = j + 1; i < k; ++i) {
      const HeAPPathwaySpec& src = spec_.pathways[static_cast<std::size_t>(i)];
      const int steps = downsample_steps(src.resolution, p.resolution);
      std::vector<std::unique_ptr<Conv2d>> chain;
      for (int s = 0; s < steps; ++s)
        chain.push_back(std::make_unique<Conv2d>(src.width, src.width, 2, 2, 2, 0, /*bias=*/false, rng));
      path.down_chains.push_back(std::move(chain));
    }
    std::int64_t in_w = p.width;
    for (int i = j + 1; i < k; ++i) in_w += spec_.pathways[static_cast<std::size_t>(i)].width;
    for (int b = 0; b < p.blocks; ++b) {
      path.blocks.push_back(std::make_unique<ResidualBlock>(
          /*pathway=*/false, /*levels=*/1, std::vector<double>{},
          b == 0 ? in_w : p.width,
          std::vector<ResidualBlock::Unit>{{3, 1, p.width}, {3, 1, p.width}}, rng));
    }
    path.head = std::make_unique<Linear>(p.width, spec_.classes, rng);
    pathways_.push_back(std::move(path));
  }
}

std::int64_t HeAPStage::fused_width(int j) const {
  std::int64_t w = spec_.pathways[static_cast<std::size_t>(j)].width;
  for (int i = j + 1; i < spec_.order(); ++i) w += spec_.pathways[static_cast<std::size_t>(i)].width;
  return w;
}

Conv2d& HeAPStage::downsample_conv(int target, int source, int step) {
  Pathway& p = pathways_.at(static_cast<std::size_t>(target));
  auto& chain = p.down_chains.at(static_cast<std::size_t>(source - target - 1));
  return *chain.at(static_cast<std::size_t>(step));
}

Tensor HeAPStage::run_stem(int j, const Tensor& input, bool training) {
  Pathway& p = pathways_[static_cast<std::size_t>(j)];
  Tensor x = p.stem_conv->forward(input, 0, training);
  x = p.stem_bn->forward(x, 0, training);
  return p.stem_relu.forward(x, 0, training);
}

Tensor HeAPStage::fuse(int j, const std::vector<Tensor>& stem_outs, bool training) {
  Pathway& p = pathways_[static_cast<std::size_t>(j)];
  const int k = spec_.order();
  const Tensor& own = stem_outs[static_cast<std::size_t>(j)];
  const std::int64_t n = own.dim(0), oh = own.dim(2), ow = own.dim(3);
  Tensor fused({n, fused_width(j), oh, ow});
  const std::int64_t plane = oh * ow;
  std::int64_t offset = 0;
  auto copy_in = [&](const Tensor& src) {
    const std::int64_t c = src.dim(1);
    if (src.dim(2) != oh || src.dim(3) != ow)
      throw std::invalid_argument("HeAP: resolution mismatch after downsampling: " + shape_string(src) +
                                  " into " + std::to_string(oh) + "x" + std::to_string(ow));
    for (std::int64_t i = 0; i < n; ++i)
      std::copy(src.data() + i * c * plane, src.data() + (i + 1) * c * plane,
                fused.data() + (i * fused.dim(1) + offset) * plane);
    offset += c;
  };
  copy_in(own);
  for (int i = j + 1; i < k; ++i) {
    Tensor down = stem_outs[static_cast<std::size_t>(i)];
    for (auto& conv : p.down_chains[static_cast<std::size_t>(i - j - 1)])
      down = conv->forward(down, 0, training);
    copy_in(down);
  }
  return fused;
}

Tensor HeAPStage::run_tower(int j, const Tensor& fused, bool training) {
  Pathway& p = pathways_[static_cast<std::size_t>(j)];
  Tensor x = fused;
  for (auto& block : p.blocks) x = block->forward(x, 0, training);
  return x;
}

HeAPForward HeAPStage::forward_train(const std::vector<Tensor>& views, bool training) {
  const int k = spec_.order();
  if (static_cast<int>(views.size()) != k)
    throw std::invalid_argument("HeAP: expected one view per pathway");
  for (int j = 0; j < k; ++j) {
    const Tensor& v = views[static_cast<std::size_t>(j)];
    const std::int64_t r = spec_.pathways[static_cast<std::size_t>(j)].resolution;
    if (v.rank() != 4 || v.dim(1) != spec_.in_channels || v.dim(2) != r || v.dim(3) != r)
      throw std::invalid_argument("HeAP: view " + std::to_string(j) + " must be (N," +
                                  std::to_string(spec_.in_channels) + "," + std::to_string(r) + "," +
                                  std::to_string(r) + "), got " + shape_string(v));
    if (v.dim(0) != views.front().dim(0))
      throw std::invalid_argument("HeAP: views disagree on batch size");
  }

  std::vector<Tensor> stem_outs;
  for (int j = 0; j < k; ++j) stem_outs.push_back(run_stem(j, views[static_cast<std::size_t>(j)], training));
  last_stem_outs_ = stem_outs;

  HeAPForward out;
  for (int j = 0; j < k; ++j) {
    Pathway& p = pathways_[static_cast<std::size_t>(j)];
    Tensor feat = run_tower(j, fuse(j, stem_outs, training), training);
    out.features.push_back(feat);
    out.logits.push_back(p.head->forward(p.pool.forward(feat, 0, training), 0, training));
  }
  return out;
}

Tensor HeAPStage::infer(const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != spec_.in_channels)
    throw std::invalid_argument("HeAP::infer: expected (N," + std::to_string(spec_.in_channels) +
                                ",H,W) batch");
  const int k = spec_.order();
  const std::int64_t n = images.dim(0);
  // Render the light image at every pathway resolution and extract each
  // pathway's features; only the main tower and head run.
  std::vector<Tensor> stem_outs;
  for (int j = 0; j < k; ++j) {
    const std::int64_t r = spec_.pathways[static_cast<std::size_t>(j)].resolution;
    Tensor resized({n, spec_.in_channels, r, r});
    for (std::int64_t i = 0; i < n; ++i) {
      Tensor img({spec_.in_channels, images.dim(2), images.dim(3)});
      std::copy(images.data() + i * img.numel(), images.data() + (i + 1) * img.numel(), img.data());
      Tensor small = resize_bilinear(img, r, r);
      std::copy(small.data(), small.data() + small.numel(), resized.data() + i * small.numel());
    }
    stem_outs.push_back(run_stem(j, resized, /*training=*/false));
  }
  Pathway& main = pathways_.front();
  Tensor feat = run_tower(0, fuse(0, stem_outs, /*training=*/false), /*training=*/false);
  return softmax(main.head->forward(main.pool.forward(feat, 0, false), 0, false));
}

void HeAPStage::backward(const std::vector<Tensor>& dlogits) {
  const int k = spec_.order();
  if (static_cast<int>(dlogits.size()) != k)
    throw std::invalid_argument("HeAP::backward: one logit gradient per pathway required");
  if (last_stem_outs_.empty()) throw std::runtime_error("HeAP::backward without forward_train");

  std::vector<Tensor> dstem(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    Pathway& p = pathways_[static_cast<std::size_t>(j)];
    Tensor g = p.head->backward(dlogits[static_cast<std::size_t>(j)], 0);
    g = p.pool.backward(g, 0);
    for (std::size_t b = p.blocks.size(); b-- > 0;) g = p.blocks[b]->backward(g, 0);
    // Split the fused gradient back to its sources.
    const std::int64_t n = g.dim(0), oh = g.dim(2), ow = g.dim(3), plane = oh * ow;
    const std::int64_t fused_c = g.dim(1);
    std::int64_t offset = 0;
    auto take = [&](std::int64_t c) {
      Tensor part({n, c, oh, ow});
      for (std::int64_t i = 0; i < n; ++i)
        std::copy(g.data() + (i * fused_c + offset) * plane, g.data() + (i * fused_c + offset + c) * plane,
                  part.data() + i * c * plane);
      offset += c;
      return part;
    };
    Tensor own = take(spec_.pathways[static_cast<std::size_t>(j)].width);
    Tensor& acc = dstem[static_cast<std::size_t>(j)];
    if (acc.empty())
      acc = own;
    else
      acc.add_(own);
    for (int i = j + 1; i < k; ++i) {
      Tensor part = take(spec_.pathways[static_cast<std::size_t>(i)].width);
      auto& chain = p.down_chains[static_cast<std::size_t>(i - j - 1)];
      for (std::size_t s = chain.size(); s-- > 0;) part = chain[s]->backward(part, 0);
      Tensor& src = dstem[static_cast<std::size_t>(i)];
      if (src.empty())
        src = part;
      else
        src.add_(part);
    }
  }
  for (int j = 0; j < k; ++j) {
    Pathway& p = pathways_[static_cast<std::size_t>(j)];
    Tensor g = p.stem_relu.backward(dstem[static_cast<std::size_t>(j)], 0);
    g = p.stem_bn->backward(g, 0);
    p.stem_conv->backward(g, 0);
  }
}

void HeAPStage::collect(std::vector<ParamRef>* params, std::vector<BufferRef>* buffers) {
  for (std::size_t j = 0; j < pathways_.size(); ++j) {
    Pathway& p = pathways_[j];
    const std::string base = "pathway" + std::to_string(j) + ".";
    p.stem_conv->collect(base + "stem_conv.", params, buffers);
    p.stem_bn->collect(base + "stem_bn.", params, buffers);
    for (std::size_t c = 0; c < p.down_chains.size(); ++c)
      for (std::size_t s = 0; s < p.down_chains[c].size(); ++s)
        p.down_chains[c][s]->collect(
            base + "down" + std::to_string(c) + "." + std::to_string(s) + ".", params, buffers);
    for (std::size_t b = 0; b < p.blocks.size(); ++b)
      p.blocks[b]->collect(base + "block" + std::to_string(b) + ".", params, buffers);
    p.head->collect(base + "head.", params, buffers);
  }
}

void HeAPStage::zero_grad() {
  std::vector<ParamRef> params;
  collect(&params, nullptr);
  for (ParamRef& p : params) p.grad->zero();
}

std::int64_t HeAPStage::param_count() {
  std::vector<ParamRef> params;
  collect(&params, nullptr);
  std::int64_t n = 0;
  for (const ParamRef& p : params) n += p.value->numel();
  return n;
}

}  // namespace apnet
