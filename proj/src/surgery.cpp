#include "apnet/surgery.hpp"

#include <algorithm>
#include <stdexcept>

#include "apnet/image.hpp"

namespace apnet {

const char* block_type_name(BlockType t) {
  switch (t) {
    case BlockType::Basic: return "basic";
    case BlockType::Bottleneck: return "bottleneck";
  }
  throw std::invalid_argument("unknown block type");
}

BlockType block_type_from_name(const std::string& name) {
  if (name == "basic") return BlockType::Basic;
  if (name == "bottleneck") return BlockType::Bottleneck;
  throw std::invalid_argument("unknown block type: " + name);
}

void BackboneSpec::validate() const {
  if (input_channels <= 0) throw std::invalid_argument("BackboneSpec: input_channels must be positive");
  if (stem.out_channels <= 0 || stem.kernel < 1 || stem.stride < 1)
    throw std::invalid_argument("BackboneSpec: bad stem");
  if (stages.empty()) throw std::invalid_argument("BackboneSpec: stage list must be non-empty");
  for (const StageSpec& s : stages) {
    if (s.blocks < 1) throw std::invalid_argument("BackboneSpec: stage needs at least one block");
    if (s.width <= 0) throw std::invalid_argument("BackboneSpec: stage width must be positive");
    if (s.stride < 1) throw std::invalid_argument("BackboneSpec: stage stride must be >= 1");
    if (s.block == BlockType::Bottleneck && s.width % 4 != 0)
      throw std::invalid_argument("BackboneSpec: bottleneck width must be divisible by 4");
  }
}

std::vector<int> NetworkPlan::replaced() const {
  if (pathways <= 1) return {};
  if (!replace_stages.empty()) {
    std::vector<int> r = replace_stages;
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    return r;
  }
  return {static_cast<int>(backbone.stages.size()) - 1};
}

std::vector<double> NetworkPlan::shares() const {
  if (!split.empty()) return split;
  // Uniform default: each pathway owns 1/k of the channels, so level j sees
  // the trailing (k - j)/k share.
  std::vector<double> s(static_cast<std::size_t>(pathways));
  for (int j = 0; j < pathways; ++j)
    s[static_cast<std::size_t>(j)] = static_cast<double>(pathways - j) / static_cast<double>(pathways);
  return s;
}

namespace {

std::int64_t bottleneck_mid(std::int64_t width) { return width / 4; }

/// Widths entering the first block of each stage.
std::vector<std::int64_t> stage_entry_widths(const BackboneSpec& b) {
  std::vector<std::int64_t> entry;
  std::int64_t prev = b.stem.out_channels;
  for (const StageSpec& s : b.stages) {
    entry.push_back(prev);
    prev = s.width;
  }
  return entry;
}

}  // namespace

void NetworkPlan::validate() const {
  backbone.validate();
  if (classes < 2) throw std::invalid_argument("NetworkPlan: need at least two classes");
  if (pathways < 1) throw std::invalid_argument("NetworkPlan: pathway order must be >= 1");
  if (pathways == 1) {
    if (!replace_stages.empty())
      throw std::invalid_argument("NetworkPlan: replacement requires pathway order >= 2");
    return;
  }
  const std::vector<int> r = replaced();
  if (r.empty()) throw std::invalid_argument("NetworkPlan: nothing to replace");
  const int n_stages = static_cast<int>(backbone.stages.size());
  if (r.back() != n_stages - 1)
    throw std::invalid_argument("NetworkPlan: replaced stages must reach the last stage");
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] < 0 || r[i] >= n_stages) throw std::invalid_argument("NetworkPlan: replaced stage out of range");
    if (i > 0 && r[i] != r[i - 1] + 1)
      throw std::invalid_argument("NetworkPlan: replaced stages must be a contiguous tail");
  }
  const std::vector<double> s = shares();
  if (static_cast<int>(s.size()) != pathways)
    throw std::invalid_argument("NetworkPlan: one split share per pathway required");
  // Every width the replaced stages touch must survive the split without a
  // pathway collapsing to zero channels.
  const std::vector<std::int64_t> entry = stage_entry_widths(backbone);
  for (int idx : r) {
    const StageSpec& stage = backbone.stages[static_cast<std::size_t>(idx)];
    split_channels(entry[static_cast<std::size_t>(idx)], s);
    split_channels(stage.width, s);
    if (stage.block == BlockType::Bottleneck) split_channels(bottleneck_mid(stage.width), s);
  }
}

// --------------------------------------------------------------- blocks

namespace {

std::vector<ResidualBlock::Unit> block_units(const StageSpec& stage, int stride) {
  if (stage.block == BlockType::Basic)
    return {{3, stride, stage.width}, {3, 1, stage.width}};
  const std::int64_t mid = bottleneck_mid(stage.width);
  return {{1, 1, mid}, {3, stride, mid}, {1, 1, stage.width}};
}

Tensor slice_trailing_channels(const Tensor& x, std::int64_t keep) {
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (keep == c) return x;
  Tensor out({n, keep, x.dim(2), x.dim(3)});
  for (std::int64_t i = 0; i < n; ++i)
    std::copy(x.data() + (i * c + (c - keep)) * plane, x.data() + (i + 1) * c * plane,
              out.data() + i * keep * plane);
  return out;
}

Tensor embed_trailing_channels(const Tensor& g, std::int64_t full) {
  const std::int64_t n = g.dim(0), keep = g.dim(1), plane = g.dim(2) * g.dim(3);
  if (keep == full) return g;
  Tensor out({n, full, g.dim(2), g.dim(3)});
  for (std::int64_t i = 0; i < n; ++i)
    std::copy(g.data() + i * keep * plane, g.data() + (i + 1) * keep * plane,
              out.data() + (i * full + (full - keep)) * plane);
  return out;
}

}  // namespace

// --------------------------------------------------------- PathwayNetwork

PathwayNetwork::PathwayNetwork(const NetworkPlan& plan, std::uint64_t init_seed) : plan_(plan) {
  plan_.validate();
  shares_ = plan_.shares();
  const std::vector<int> replaced = plan_.replaced();
  first_replaced_ = replaced.empty() ? -1 : replaced.front();

  Rng rng(init_seed);
  const BackboneSpec& b = plan_.backbone;
  const int levels = plan_.pathways;

  stem_conv_ = std::make_unique<Conv2d>(b.input_channels, b.stem.out_channels, b.stem.kernel,
                                        b.stem.kernel, b.stem.stride, b.stem.kernel / 2,
                                        /*bias=*/false, rng);
  stem_bn_ = std::make_unique<BatchNorm2d>(b.stem.out_channels, levels);
  if (b.stem.max_pool) stem_pool_ = std::make_unique<MaxPool2d>(3, 2, 1);

  std::int64_t prev = b.stem.out_channels;
  for (std::size_t s = 0; s < b.stages.size(); ++s) {
    const StageSpec& stage = b.stages[s];
    const bool pathway = first_replaced_ >= 0 && static_cast<int>(s) >= first_replaced_;
    if (first_replaced_ >= 0 && static_cast<int>(s) == first_replaced_) entry_width_ = prev;
    std::vector<std::unique_ptr<ResidualBlock>>& blocks = stages_.emplace_back();
    for (int i = 0; i < stage.blocks; ++i) {
      const std::int64_t in_w = i == 0 ? prev : stage.width;
      const int stride = i == 0 ? stage.stride : 1;
      blocks.push_back(std::make_unique<ResidualBlock>(pathway, levels, shares_, in_w,
                                                       block_units(stage, stride), rng));
    }
    prev = stage.width;
  }

  const std::int64_t last_width = b.stages.back().width;
  const std::vector<std::int64_t> head_dims =
      levels > 1 ? split_channels(last_width, shares_) : std::vector<std::int64_t>{last_width};
  for (int j = 0; j < levels; ++j)
    heads_.push_back(std::make_unique<Linear>(head_dims[static_cast<std::size_t>(j)], plan_.classes, rng));

  for (auto& stage : stages_)
    for (auto& block : stage) block->append_pathway_layers(ap_layers_);
}

PathwayNetwork surgerize(const NetworkPlan& plan, std::uint64_t init_seed) {
  return PathwayNetwork(plan, init_seed);
}

Tensor PathwayNetwork::forward_level(const Tensor& view, int level, bool training) {
  Tensor x = stem_conv_->forward(view, level, training);
  x = stem_bn_->forward(x, level, training);
  x = stem_relu_.forward(x, level, training);
  if (stem_pool_) x = stem_pool_->forward(x, level, training);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (static_cast<int>(s) == first_replaced_ && level > 0) {
      // Heavier views enter the pathway region through their channel slice.
      const std::int64_t keep = split_channels(entry_width_, shares_)[static_cast<std::size_t>(level)];
      x = slice_trailing_channels(x, keep);
    }
    for (auto& block : stages_[s]) x = block->forward(x, level, training);
  }
  Tensor feat = pool_.forward(x, level, training);
  return heads_[static_cast<std::size_t>(level)]->forward(feat, level, training);
}

std::vector<Tensor> PathwayNetwork::forward_train(const ViewBatch& batch, bool training) {
  if (batch.levels() != plan_.pathways)
    throw std::invalid_argument("forward_train: batch has " + std::to_string(batch.levels()) +
                                " view levels, network routes " + std::to_string(plan_.pathways));
  std::vector<Tensor> logits;
  logits.reserve(batch.views.size());
  for (int j = 0; j < batch.levels(); ++j)
    logits.push_back(forward_level(batch.views[static_cast<std::size_t>(j)], j, training));
  return logits;
}

Tensor PathwayNetwork::infer(const Tensor& images) {
  if (images.rank() != 4) throw std::invalid_argument("infer: expected NCHW batch");
  return softmax(forward_level(images, 0, /*training=*/false));
}

Tensor PathwayNetwork::backward_level(const Tensor& dlogits, int level) {
  Tensor g = heads_[static_cast<std::size_t>(level)]->backward(dlogits, level);
  g = pool_.backward(g, level);
  for (std::size_t s = stages_.size(); s-- > 0;) {
    for (std::size_t i = stages_[s].size(); i-- > 0;) g = stages_[s][i]->backward(g, level);
    if (static_cast<int>(s) == first_replaced_ && level > 0)
      g = embed_trailing_channels(g, entry_width_);
  }
  if (stem_pool_) g = stem_pool_->backward(g, level);
  g = stem_relu_.backward(g, level);
  g = stem_bn_->backward(g, level);
  return stem_conv_->backward(g, level);
}

void PathwayNetwork::backward(const std::vector<Tensor>& dlogits) {
  if (static_cast<int>(dlogits.size()) != plan_.pathways)
    throw std::invalid_argument("backward: one logit gradient per level required");
  for (int j = 0; j < plan_.pathways; ++j) backward_level(dlogits[static_cast<std::size_t>(j)], j);
}

std::vector<SimilarityTap> PathwayNetwork::similarity_taps() {
  std::vector<SimilarityTap> taps;
  for (APConv* layer : ap_layers_)
    for (int j = 0; j < plan_.pathways; ++j)
      if (layer->cached_pathways(j) >= 2) taps.push_back({layer, j});
  return taps;
}

std::vector<PathwayGroup> PathwayNetwork::pathway_groups() {
  std::vector<PathwayGroup> groups;
  for (const SimilarityTap& tap : similarity_taps()) {
    PathwayGroup g;
    const int k = tap.layer->spec().pathways;
    for (int i = tap.level; i < k; ++i) g.outputs.push_back(&tap.layer->pathway_output(tap.level, i));
    groups.push_back(std::move(g));
  }
  return groups;
}

void PathwayNetwork::queue_similarity_grads(const std::vector<std::vector<Tensor>>& grads,
                                            double lambda) {
  const std::vector<SimilarityTap> taps = similarity_taps();
  if (grads.size() != taps.size())
    throw std::invalid_argument("queue_similarity_grads: gradient list does not match taps");
  if (lambda == 0.0) return;
  for (std::size_t t = 0; t < taps.size(); ++t) {
    const SimilarityTap& tap = taps[t];
    const std::vector<Tensor>& blocks = grads[t];
    const APConvSpec& spec = tap.layer->spec();
    const std::int64_t out_ch = spec.pathway_out[static_cast<std::size_t>(tap.level)];
    const Tensor& first = blocks.front();
    const std::int64_t n = first.dim(0), oh = first.dim(2), ow = first.dim(3);
    Tensor full({n, out_ch, oh, ow});
    std::int64_t offset = 0;
    for (const Tensor& blk : blocks) {
      const std::int64_t bc = blk.dim(1), plane = oh * ow;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < bc; ++c) {
          const double* src = blk.data() + (i * bc + c) * plane;
          double* dst = full.data() + (i * out_ch + offset + c) * plane;
          for (std::int64_t q = 0; q < plane; ++q) dst[q] = lambda * src[q];
        }
      offset += bc;
    }
    if (offset != out_ch)
      throw std::invalid_argument("queue_similarity_grads: channel blocks do not cover the level output");
    tap.layer->queue_output_grad(tap.level, full);
  }
}

void PathwayNetwork::collect(std::vector<ParamRef>* params, std::vector<BufferRef>* buffers) {
  stem_conv_->collect("stem.conv.", params, buffers);
  stem_bn_->collect("stem.bn.", params, buffers);
  for (std::size_t s = 0; s < stages_.size(); ++s)
    for (std::size_t i = 0; i < stages_[s].size(); ++i)
      stages_[s][i]->collect("stage" + std::to_string(s) + ".block" + std::to_string(i) + ".", params,
                             buffers);
  for (std::size_t j = 0; j < heads_.size(); ++j)
    heads_[j]->collect("head" + std::to_string(j) + ".", params, buffers);
}

void PathwayNetwork::zero_grad() {
  std::vector<ParamRef> params;
  collect(&params, nullptr);
  for (ParamRef& p : params) p.grad->zero();
}

std::int64_t PathwayNetwork::param_count_train() {
  std::vector<ParamRef> params;
  collect(&params, nullptr);
  std::int64_t n = 0;
  for (const ParamRef& p : params) n += p.value->numel();
  return n;
}

std::int64_t PathwayNetwork::param_count_inference() {
  std::int64_t n = param_count_train();
  for (std::size_t j = 1; j < heads_.size(); ++j) n -= heads_[j]->param_count();
  return n;
}

// ------------------------------------------------------------- accounting

namespace {

struct AccountState {
  PlanAccounting acc;
  std::int64_t h = 0, w = 0;

  void conv(std::int64_t in_w, std::int64_t out_w, int kernel, int stride, bool replaced, int pathways,
            const std::vector<double>& shares) {
    const int pad = kernel / 2;
    const std::int64_t oh = (h + 2 * pad - kernel) / stride + 1;
    const std::int64_t ow = (w + 2 * pad - kernel) / stride + 1;
    const std::int64_t std_params = in_w * out_w * kernel * kernel;
    const std::int64_t std_macs = std_params * oh * ow;
    acc.params_baseline += std_params;
    acc.macs_baseline += std_macs;
    if (replaced) {
      APConvSpec spec = APConvSpec::fractional(in_w, out_w, pathways, shares, kernel, kernel, stride,
                                               pad, /*bias=*/false);
      const ParamCountResult pc = param_count(spec);
      acc.params_inference += pc.total;
      acc.delta_sum += pc.delta_vs_standard;
      acc.macs_inference += mac_count(spec, h, w);
    } else {
      acc.params_inference += std_params;
      acc.macs_inference += std_macs;
    }
    h = oh;
    w = ow;
  }

  void bn(std::int64_t width) {
    acc.params_baseline += 2 * width;
    acc.params_inference += 2 * width;
  }

  void pool3x3s2() {
    h = (h + 2 - 3) / 2 + 1;
    w = (w + 2 - 3) / 2 + 1;
  }
};

}  // namespace

PlanAccounting account(const NetworkPlan& plan, std::int64_t input_h, std::int64_t input_w) {
  plan.validate();
  const BackboneSpec& b = plan.backbone;
  const std::vector<int> replaced = plan.replaced();
  const std::vector<double> shares = plan.shares();

  AccountState st;
  st.h = input_h;
  st.w = input_w;
  st.conv(b.input_channels, b.stem.out_channels, b.stem.kernel, b.stem.stride, false, plan.pathways,
          shares);
  st.bn(b.stem.out_channels);
  if (b.stem.max_pool) st.pool3x3s2();

  std::int64_t prev = b.stem.out_channels;
  for (std::size_t s = 0; s < b.stages.size(); ++s) {
    const StageSpec& stage = b.stages[s];
    const bool is_replaced =
        std::find(replaced.begin(), replaced.end(), static_cast<int>(s)) != replaced.end();
    for (int i = 0; i < stage.blocks; ++i) {
      const std::int64_t in_w = i == 0 ? prev : stage.width;
      const int stride = i == 0 ? stage.stride : 1;
      const std::int64_t bh = st.h, bw = st.w;
      if (stage.block == BlockType::Basic) {
        st.conv(in_w, stage.width, 3, stride, is_replaced, plan.pathways, shares);
        st.bn(stage.width);
        st.conv(stage.width, stage.width, 3, 1, is_replaced, plan.pathways, shares);
        st.bn(stage.width);
      } else {
        const std::int64_t mid = bottleneck_mid(stage.width);
        st.conv(in_w, mid, 1, 1, is_replaced, plan.pathways, shares);
        st.bn(mid);
        st.conv(mid, mid, 3, stride, is_replaced, plan.pathways, shares);
        st.bn(mid);
        st.conv(mid, stage.width, 1, 1, is_replaced, plan.pathways, shares);
        st.bn(stage.width);
      }
      if (in_w != stage.width || stride != 1) {
        // Projection shortcut runs from the block input geometry.
        const std::int64_t oh = st.h, ow = st.w;
        st.h = bh;
        st.w = bw;
        st.conv(in_w, stage.width, 1, stride, is_replaced, plan.pathways, shares);
        st.bn(stage.width);
        st.h = oh;
        st.w = ow;
      }
    }
    prev = stage.width;
  }

  // Heads: the baseline and the inference path use the main head only.
  const std::int64_t last_width = b.stages.back().width;
  const std::int64_t main_head = (last_width + 1) * plan.classes;
  st.acc.params_baseline += main_head;
  st.acc.params_inference += main_head;
  st.acc.macs_baseline += last_width * plan.classes;
  st.acc.macs_inference += last_width * plan.classes;

  st.acc.params_train = st.acc.params_inference;
  if (plan.pathways > 1) {
    const std::vector<std::int64_t> dims = split_channels(last_width, shares);
    for (int j = 1; j < plan.pathways; ++j)
      st.acc.params_train += (dims[static_cast<std::size_t>(j)] + 1) * plan.classes;
  }
  return st.acc;
}

Tensor eval_preprocess(const Tensor& image, std::int64_t resize_short, std::int64_t crop) {
  return center_crop(resize_short_side(image, resize_short), crop, crop);
}

}  // namespace apnet
