#include "apnet/apconv.hpp"

#include <cmath>
#include <stdexcept>

namespace apnet {

void APConvSpec::validate(bool strict) const {
  if (pathways < 2) throw std::invalid_argument("APConvSpec: need at least 2 pathways");
  if (in_channels <= 0 || out_channels <= 0)
    throw std::invalid_argument("APConvSpec: channel counts must be positive");
  if (kernel_h < 1 || kernel_w < 1) throw std::invalid_argument("APConvSpec: bad kernel size");
  if (stride < 1) throw std::invalid_argument("APConvSpec: bad stride");
  if (padding < 0) throw std::invalid_argument("APConvSpec: bad padding");
  const auto check_list = [&](const std::vector<std::int64_t>& v, std::int64_t full, bool strict_list,
                              const char* which) {
    if (static_cast<int>(v.size()) != pathways)
      throw std::invalid_argument(std::string("APConvSpec: ") + which + " list must have one entry per pathway");
    if (v.front() != full)
      throw std::invalid_argument(std::string("APConvSpec: ") + which +
                                  "[0] must equal the full channel count");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] <= 0) throw std::invalid_argument(std::string("APConvSpec: ") + which + " entries must be positive");
      if (i > 0) {
        if (strict_list ? v[i] >= v[i - 1] : v[i] > v[i - 1])
          throw std::invalid_argument(std::string("APConvSpec: ") + which +
                                      (strict_list ? " must be strictly decreasing" : " must be non-increasing"));
      }
    }
  };
  check_list(pathway_in, in_channels, strict, "pathway_in");
  check_list(pathway_out, out_channels, /*strict_list=*/true, "pathway_out");
}

std::int64_t APConvSpec::sub_out_channels(int j) const {
  const std::int64_t next =
      j + 1 < pathways ? pathway_out[static_cast<std::size_t>(j) + 1] : 0;
  return pathway_out[static_cast<std::size_t>(j)] - next;
}

std::vector<std::int64_t> split_channels(std::int64_t width, const std::vector<double>& shares) {
  if (shares.empty()) throw std::invalid_argument("split_channels: empty share list");
  if (shares.front() != 1.0) throw std::invalid_argument("split_channels: share[0] must be 1");
  std::vector<std::int64_t> out(shares.size());
  for (std::size_t i = 0; i < shares.size(); ++i) {
    if (!(shares[i] > 0.0) || shares[i] > 1.0)
      throw std::invalid_argument("split_channels: shares must be in (0, 1]");
    if (i > 0 && shares[i] >= shares[i - 1])
      throw std::invalid_argument("split_channels: shares must be strictly decreasing");
    out[i] = std::llround(shares[i] * static_cast<double>(width));
    if (out[i] < 1)
      throw std::invalid_argument("split_channels: share " + std::to_string(shares[i]) + " of width " +
                                  std::to_string(width) + " rounds to zero channels");
    if (i > 0 && out[i] >= out[i - 1])
      throw std::invalid_argument("split_channels: width " + std::to_string(width) +
                                  " is too narrow for the requested split");
  }
  return out;
}

APConvSpec APConvSpec::fractional(std::int64_t in_channels, std::int64_t out_channels, int pathways,
                                  const std::vector<double>& shares, int kernel_h, int kernel_w,
                                  int stride, int padding, bool bias) {
  if (static_cast<int>(shares.size()) != pathways)
    throw std::invalid_argument("APConvSpec::fractional: one share per pathway required");
  APConvSpec spec;
  spec.pathways = pathways;
  spec.in_channels = in_channels;
  spec.out_channels = out_channels;
  spec.pathway_in = split_channels(in_channels, shares);
  spec.pathway_out = split_channels(out_channels, shares);
  spec.kernel_h = kernel_h;
  spec.kernel_w = kernel_w;
  spec.stride = stride;
  spec.padding = padding;
  spec.bias = bias;
  spec.validate();
  return spec;
}

ParamCountResult param_count(const APConvSpec& spec) {
  spec.validate(/*strict=*/false);
  const std::int64_t kk = static_cast<std::int64_t>(spec.kernel_h) * spec.kernel_w;
  ParamCountResult r;
  for (int j = 0; j < spec.pathways; ++j) {
    const std::int64_t own = spec.sub_out_channels(j);
    r.total += spec.sub_in_channels(j) * kk * own;
    if (spec.bias) r.total += own;
  }
  const std::int64_t standard =
      spec.in_channels * spec.out_channels * kk + (spec.bias ? spec.out_channels : 0);
  r.delta_vs_standard = standard - r.total;
  return r;
}

std::int64_t mac_count(const APConvSpec& spec, std::int64_t in_h, std::int64_t in_w) {
  spec.validate(/*strict=*/true);
  const ConvGeom g = make_conv_geom(spec.in_channels, in_h, in_w, spec.kernel_h, spec.kernel_w,
                                    spec.stride, spec.padding);
  std::int64_t macs = 0;
  for (int j = 0; j < spec.pathways; ++j)
    macs += spec.sub_in_channels(j) * spec.kernel_h * spec.kernel_w * spec.sub_out_channels(j) *
            g.out_positions();
  return macs;
}

std::int64_t standard_mac_count(const APConvSpec& spec, std::int64_t in_h, std::int64_t in_w) {
  const ConvGeom g = make_conv_geom(spec.in_channels, in_h, in_w, spec.kernel_h, spec.kernel_w,
                                    spec.stride, spec.padding);
  return spec.in_channels * spec.kernel_h * spec.kernel_w * spec.out_channels * g.out_positions();
}

std::vector<Tensor> from_standard(const Tensor& dense, const APConvSpec& spec) {
  spec.validate(/*strict=*/false);
  if (dense.rank() != 4 || dense.dim(0) != spec.out_channels || dense.dim(1) != spec.in_channels ||
      dense.dim(2) != spec.kernel_h || dense.dim(3) != spec.kernel_w)
    throw std::invalid_argument("from_standard: weight shape " + shape_string(dense) +
                                " does not match the pathway spec");
  std::vector<Tensor> subs;
  subs.reserve(static_cast<std::size_t>(spec.pathways));
  for (int j = 0; j < spec.pathways; ++j) {
    const std::int64_t own = spec.sub_out_channels(j);
    const std::int64_t in_j = spec.sub_in_channels(j);
    const std::int64_t out_base = spec.out_channels - spec.pathway_out[static_cast<std::size_t>(j)];
    const std::int64_t in_base = spec.in_channels - in_j;
    Tensor w({own, in_j, spec.kernel_h, spec.kernel_w});
    for (std::int64_t o = 0; o < own; ++o)
      for (std::int64_t c = 0; c < in_j; ++c)
        for (std::int64_t kh = 0; kh < spec.kernel_h; ++kh)
          for (std::int64_t kw = 0; kw < spec.kernel_w; ++kw)
            w.at(o, c, kh, kw) = dense.at(out_base + o, in_base + c, kh, kw);
    subs.push_back(std::move(w));
  }
  return subs;
}

Tensor to_standard(const std::vector<Tensor>& sub_weights, const APConvSpec& spec) {
  spec.validate(/*strict=*/false);
  if (static_cast<int>(sub_weights.size()) != spec.pathways)
    throw std::invalid_argument("to_standard: one weight tensor per pathway required");
  Tensor dense({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w});
  for (int j = 0; j < spec.pathways; ++j) {
    const Tensor& w = sub_weights[static_cast<std::size_t>(j)];
    const std::int64_t own = spec.sub_out_channels(j);
    const std::int64_t in_j = spec.sub_in_channels(j);
    if (w.rank() != 4 || w.dim(0) != own || w.dim(1) != in_j || w.dim(2) != spec.kernel_h ||
        w.dim(3) != spec.kernel_w)
      throw std::invalid_argument("to_standard: sub weight " + std::to_string(j) + " has shape " +
                                  shape_string(w));
    const std::int64_t out_base = spec.out_channels - spec.pathway_out[static_cast<std::size_t>(j)];
    const std::int64_t in_base = spec.in_channels - in_j;
    for (std::int64_t o = 0; o < own; ++o)
      for (std::int64_t c = 0; c < in_j; ++c)
        for (std::int64_t kh = 0; kh < spec.kernel_h; ++kh)
          for (std::int64_t kw = 0; kw < spec.kernel_w; ++kw)
            dense.at(out_base + o, in_base + c, kh, kw) = w.at(o, c, kh, kw);
  }
  return dense;
}

// ------------------------------------------------------------------ APConv

APConv::APConv(APConvSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate(/*strict=*/false);
  weights_.reserve(static_cast<std::size_t>(spec_.pathways));
  for (int j = 0; j < spec_.pathways; ++j) {
    const std::int64_t own = spec_.sub_out_channels(j);
    const std::int64_t in_j = spec_.sub_in_channels(j);
    Tensor w({own, in_j, spec_.kernel_h, spec_.kernel_w});
    // Fan-in matches the receptive input of this pathway, not the full layer.
    init_fan_in_uniform(w, in_j * spec_.kernel_h * spec_.kernel_w, rng);
    weights_.push_back(std::move(w));
    weight_grads_.emplace_back(std::vector<std::int64_t>{own, in_j, spec_.kernel_h, spec_.kernel_w});
    if (spec_.bias) {
      Tensor b({own});
      init_fan_in_uniform(b, in_j * spec_.kernel_h * spec_.kernel_w, rng);
      biases_.push_back(std::move(b));
      bias_grads_.emplace_back(std::vector<std::int64_t>{own});
    }
  }
}

Tensor APConv::forward(const Tensor& x, int level, bool training) {
  if (level < 0 || level >= spec_.pathways)
    throw std::invalid_argument("APConv: level " + std::to_string(level) + " out of range for " +
                                std::to_string(spec_.pathways) + " pathways");
  const std::int64_t expect = spec_.pathway_in[static_cast<std::size_t>(level)];
  if (x.rank() != 4 || x.dim(1) != expect)
    throw std::invalid_argument("APConv: level " + std::to_string(level) + " expects " +
                                std::to_string(expect) + " channels, got " + shape_string(x));

  const ConvGeom g = make_conv_geom(expect, x.dim(2), x.dim(3), spec_.kernel_h, spec_.kernel_w,
                                    spec_.stride, spec_.padding);
  const std::int64_t n = x.dim(0);
  const std::int64_t pos = g.out_positions();
  const std::int64_t out_ch = spec_.pathway_out[static_cast<std::size_t>(level)];
  const std::int64_t kk = static_cast<std::int64_t>(spec_.kernel_h) * spec_.kernel_w;

  const std::int64_t cols = n * pos;
  Tensor out({n, out_ch, g.out_h, g.out_w});
  scratch_col_.resize(static_cast<std::size_t>(g.patch_rows() * cols));
  scratch_2d_.resize(static_cast<std::size_t>(out_ch * cols));
  im2col_batch(x, g, scratch_col_.data());
  for (int j = level; j < spec_.pathways; ++j) {
    // Sub-convolution j reads the trailing pathway_in[j] channels, which are
    // the trailing rows of the shared patch matrix.
    const std::int64_t in_j = spec_.sub_in_channels(j);
    const std::int64_t row_off = (expect - in_j) * kk;
    const std::int64_t own = spec_.sub_out_channels(j);
    const std::int64_t ch_off = out_ch - spec_.pathway_out[static_cast<std::size_t>(j)];
    double* dst = scratch_2d_.data() + ch_off * cols;
    gemm_nn(weights_[static_cast<std::size_t>(j)].data(), scratch_col_.data() + row_off * cols, dst,
            own, in_j * kk, cols, false);
    if (spec_.bias) {
      const Tensor& b = biases_[static_cast<std::size_t>(j)];
#pragma omp parallel for schedule(static)
      for (std::int64_t o = 0; o < own; ++o) {
        double* p = dst + o * cols;
        for (std::int64_t q = 0; q < cols; ++q) p[q] += b[o];
      }
    }
  }
  scatter_channel_major(scratch_2d_.data(), 0, out_ch, out);

  detail::level_slot(cached_x_, level) = x;
  auto& outputs = detail::level_slot(cached_outputs_, level);
  outputs.clear();
  if (training) {
    for (int j = level; j < spec_.pathways; ++j) {
      const std::int64_t own = spec_.sub_out_channels(j);
      const std::int64_t ch_off = out_ch - spec_.pathway_out[static_cast<std::size_t>(j)];
      Tensor block({n, own, g.out_h, g.out_w});
      for (std::int64_t i = 0; i < n; ++i)
        std::copy(out.data() + (i * out_ch + ch_off) * pos, out.data() + (i * out_ch + ch_off + own) * pos,
                  block.data() + i * own * pos);
      outputs.push_back(std::move(block));
    }
  }
  return out;
}

Tensor APConv::backward(const Tensor& grad_out, int level) {
  if (level < 0 || level >= spec_.pathways) throw std::invalid_argument("APConv::backward: level out of range");
  const Tensor& x = detail::level_slot(cached_x_, level);
  if (x.empty()) throw std::runtime_error("APConv::backward without cached forward at this level");
  const std::int64_t expect = spec_.pathway_in[static_cast<std::size_t>(level)];
  const ConvGeom g = make_conv_geom(expect, x.dim(2), x.dim(3), spec_.kernel_h, spec_.kernel_w,
                                    spec_.stride, spec_.padding);
  const std::int64_t n = x.dim(0);
  const std::int64_t pos = g.out_positions();
  const std::int64_t out_ch = spec_.pathway_out[static_cast<std::size_t>(level)];
  const std::int64_t kk = static_cast<std::int64_t>(spec_.kernel_h) * spec_.kernel_w;
  if (grad_out.rank() != 4 || grad_out.dim(0) != n || grad_out.dim(1) != out_ch ||
      grad_out.dim(2) != g.out_h || grad_out.dim(3) != g.out_w)
    throw std::invalid_argument("APConv::backward: gradient shape mismatch " + shape_string(grad_out));

  const Tensor* grad = &grad_out;
  Tensor combined;
  Tensor& pending = detail::level_slot(pending_grads_, level);
  if (!pending.empty()) {
    if (!pending.same_shape(grad_out))
      throw std::invalid_argument("APConv: queued output gradient shape mismatch");
    combined = grad_out;
    combined.add_(pending);
    pending = Tensor();
    grad = &combined;
  }

  const std::int64_t cols = n * pos;
  Tensor dx({n, expect, g.in_h, g.in_w});
  scratch_col_.resize(static_cast<std::size_t>(g.patch_rows() * cols));
  scratch_2d_.resize(static_cast<std::size_t>(out_ch * cols));
  scratch_dcol_.assign(static_cast<std::size_t>(g.patch_rows() * cols), 0.0);
  im2col_batch(x, g, scratch_col_.data());
  gather_channel_major(*grad, 0, out_ch, scratch_2d_.data());
  for (int j = level; j < spec_.pathways; ++j) {
    const std::int64_t in_j = spec_.sub_in_channels(j);
    const std::int64_t row_off = (expect - in_j) * kk;
    const std::int64_t own = spec_.sub_out_channels(j);
    const std::int64_t ch_off = out_ch - spec_.pathway_out[static_cast<std::size_t>(j)];
    const double* dout_j = scratch_2d_.data() + ch_off * cols;
    gemm_nt(dout_j, scratch_col_.data() + row_off * cols,
            weight_grads_[static_cast<std::size_t>(j)].data(), own, cols, in_j * kk, true);
    // Deeper sub-convolutions accumulate into overlapping trailing rows.
    gemm_tn(weights_[static_cast<std::size_t>(j)].data(), dout_j, scratch_dcol_.data() + row_off * cols,
            in_j * kk, own, cols, true);
    if (spec_.bias) {
      Tensor& db = bias_grads_[static_cast<std::size_t>(j)];
#pragma omp parallel for schedule(static)
      for (std::int64_t o = 0; o < own; ++o) {
        double acc = 0.0;
        const double* p = dout_j + o * cols;
        for (std::int64_t q = 0; q < cols; ++q) acc += p[q];
        db[o] += acc;
      }
    }
  }
  col2im_batch(scratch_dcol_.data(), g, dx);
  return dx;
}

void APConv::collect(const std::string& prefix, std::vector<ParamRef>* params,
                     std::vector<BufferRef>* buffers) {
  (void)buffers;
  if (!params) return;
  for (int j = 0; j < spec_.pathways; ++j) {
    const std::string base = prefix + "sub" + std::to_string(j) + ".";
    params->push_back({base + "weight", &weights_[static_cast<std::size_t>(j)],
                       &weight_grads_[static_cast<std::size_t>(j)]});
    if (spec_.bias)
      params->push_back(
          {base + "bias", &biases_[static_cast<std::size_t>(j)], &bias_grads_[static_cast<std::size_t>(j)]});
  }
}

const Tensor& APConv::pathway_output(int level, int pathway) const {
  if (level < 0 || static_cast<std::size_t>(level) >= cached_outputs_.size())
    throw std::out_of_range("APConv::pathway_output: level not cached");
  const auto& outputs = cached_outputs_[static_cast<std::size_t>(level)];
  const int idx = pathway - level;
  if (idx < 0 || static_cast<std::size_t>(idx) >= outputs.size())
    throw std::out_of_range("APConv::pathway_output: pathway " + std::to_string(pathway) +
                            " not visible at level " + std::to_string(level));
  return outputs[static_cast<std::size_t>(idx)];
}

int APConv::cached_pathways(int level) const {
  if (level < 0 || static_cast<std::size_t>(level) >= cached_outputs_.size()) return 0;
  return static_cast<int>(cached_outputs_[static_cast<std::size_t>(level)].size());
}

void APConv::queue_output_grad(int level, const Tensor& grad) {
  Tensor& pending = detail::level_slot(pending_grads_, level);
  if (pending.empty())
    pending = grad;
  else
    pending.add_(grad);
}

}  // namespace apnet
