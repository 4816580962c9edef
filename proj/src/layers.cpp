#include "apnet/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace apnet {

void Layer::zero_grad() {
  std::vector<ParamRef> params;
  collect("", &params, nullptr);
  for (ParamRef& p : params) p.grad->zero();
}

std::int64_t Layer::param_count() {
  std::vector<ParamRef> params;
  collect("", &params, nullptr);
  std::int64_t n = 0;
  for (const ParamRef& p : params) n += p.value->numel();
  return n;
}

double fan_in_uniform_bound(std::int64_t fan_in) {
  return fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
}

void init_fan_in_uniform(Tensor& w, std::int64_t fan_in, Rng& rng) {
  const double bound = fan_in_uniform_bound(fan_in);
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel_h, int kernel_w,
               int stride, int pad, bool bias, Rng& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_h_(kernel_h),
      kernel_w_(kernel_w),
      stride_(stride),
      pad_(pad),
      has_bias_(bias) {
  if (in_channels <= 0 || out_channels <= 0)
    throw std::invalid_argument("Conv2d: channel counts must be positive");
  weight = Tensor({out_channels, in_channels, kernel_h, kernel_w});
  weight_grad = Tensor(weight.shape());
  init_fan_in_uniform(weight, in_channels * kernel_h * kernel_w, rng);
  if (has_bias_) {
    this->bias = Tensor({out_channels});
    bias_grad = Tensor({out_channels});
    init_fan_in_uniform(this->bias, in_channels * kernel_h * kernel_w, rng);
  }
}

Tensor Conv2d::forward(const Tensor& x, int level, bool training) {
  if (x.rank() != 4 || x.dim(1) != in_channels_)
    throw std::invalid_argument("Conv2d: expected NCHW input with " + std::to_string(in_channels_) +
                                " channels, got " + shape_string(x));
  const ConvGeom g = make_conv_geom(in_channels_, x.dim(2), x.dim(3), kernel_h_, kernel_w_, stride_, pad_);
  const std::int64_t n = x.dim(0);
  const std::int64_t rows = g.patch_rows(), cols = n * g.out_positions();
  Tensor out({n, out_channels_, g.out_h, g.out_w});
  scratch_col_.resize(static_cast<std::size_t>(rows * cols));
  scratch_2d_.resize(static_cast<std::size_t>(out_channels_ * cols));
  im2col_batch(x, g, scratch_col_.data());
  gemm_nn(weight.data(), scratch_col_.data(), scratch_2d_.data(), out_channels_, rows, cols, false);
  scatter_channel_major(scratch_2d_.data(), 0, out_channels_, out);
  if (has_bias_) {
    const std::int64_t pos = g.out_positions();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n * out_channels_; ++i) {
      const double b = bias[i % out_channels_];
      double* p = out.data() + i * pos;
      for (std::int64_t j = 0; j < pos; ++j) p[j] += b;
    }
  }
  (void)training;
  detail::level_slot(cached_x_, level) = x;
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out, int level) {
  const Tensor& x = detail::level_slot(cached_x_, level);
  if (x.empty()) throw std::runtime_error("Conv2d::backward without cached forward at this level");
  const ConvGeom g = make_conv_geom(in_channels_, x.dim(2), x.dim(3), kernel_h_, kernel_w_, stride_, pad_);
  const std::int64_t n = x.dim(0);
  const std::int64_t rows = g.patch_rows(), pos = g.out_positions(), cols = n * pos;
  if (grad_out.dim(0) != n || grad_out.dim(1) != out_channels_ || grad_out.dim(2) != g.out_h ||
      grad_out.dim(3) != g.out_w)
    throw std::invalid_argument("Conv2d::backward: gradient shape mismatch " + shape_string(grad_out));

  scratch_col_.resize(static_cast<std::size_t>(rows * cols));
  scratch_2d_.resize(static_cast<std::size_t>(out_channels_ * cols));
  scratch_dcol_.resize(static_cast<std::size_t>(rows * cols));
  im2col_batch(x, g, scratch_col_.data());
  gather_channel_major(grad_out, 0, out_channels_, scratch_2d_.data());
  gemm_nt(scratch_2d_.data(), scratch_col_.data(), weight_grad.data(), out_channels_, cols, rows, true);
  gemm_tn(weight.data(), scratch_2d_.data(), scratch_dcol_.data(), rows, out_channels_, cols, false);
  Tensor dx({n, in_channels_, g.in_h, g.in_w});
  col2im_batch(scratch_dcol_.data(), g, dx);
  if (has_bias_) {
#pragma omp parallel for schedule(static)
    for (std::int64_t o = 0; o < out_channels_; ++o) {
      double acc = 0.0;
      const double* p = scratch_2d_.data() + o * cols;
      for (std::int64_t j = 0; j < cols; ++j) acc += p[j];
      bias_grad[o] += acc;
    }
  }
  return dx;
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>* params,
                     std::vector<BufferRef>* buffers) {
  (void)buffers;
  if (!params) return;
  params->push_back({prefix + "weight", &weight, &weight_grad});
  if (has_bias_) params->push_back({prefix + "bias", &bias, &bias_grad});
}

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(std::int64_t channels, int stat_slots, double momentum, double eps)
    : channels_(channels), stat_slots_(stat_slots), momentum_(momentum), eps_(eps) {
  if (channels <= 0) throw std::invalid_argument("BatchNorm2d: channels must be positive");
  if (stat_slots < 1) throw std::invalid_argument("BatchNorm2d: need at least one stat slot");
  gamma = Tensor::full({channels}, 1.0);
  beta = Tensor({channels});
  gamma_grad = Tensor({channels});
  beta_grad = Tensor({channels});
  running_mean.assign(static_cast<std::size_t>(stat_slots), Tensor({channels}));
  running_var.assign(static_cast<std::size_t>(stat_slots), Tensor::full({channels}, 1.0));
}

Tensor BatchNorm2d::forward(const Tensor& x, int level, bool training) {
  if (x.rank() != 4) throw std::invalid_argument("BatchNorm2d: expected NCHW input");
  const std::int64_t active = x.dim(1);
  if (active > channels_ || active <= 0)
    throw std::invalid_argument("BatchNorm2d: input has " + std::to_string(active) +
                                " channels, layer holds " + std::to_string(channels_));
  const std::int64_t offset = channels_ - active;  // trailing slice of affine/stats
  const int slot = std::min(level, stat_slots_ - 1);
  const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::int64_t plane = h * w;
  const double count = static_cast<double>(n * plane);

  LevelCache& cache = detail::level_slot(cache_, level);
  cache.training = training;
  cache.active = active;
  cache.xhat = Tensor(x.shape());
  cache.inv_std = Tensor({active});

  Tensor out(x.shape());
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < active; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0, sq = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * active + c) * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
          sum += p[j];
          sq += p[j] * p[j];
        }
      }
      mean = sum / count;
      var = sq / count - mean * mean;
      if (var < 0.0) var = 0.0;
      Tensor& rm = running_mean[static_cast<std::size_t>(slot)];
      Tensor& rv = running_var[static_cast<std::size_t>(slot)];
      rm[offset + c] = (1.0 - momentum_) * rm[offset + c] + momentum_ * mean;
      rv[offset + c] = (1.0 - momentum_) * rv[offset + c] + momentum_ * var;
    } else {
      mean = running_mean[static_cast<std::size_t>(slot)][offset + c];
      var = running_var[static_cast<std::size_t>(slot)][offset + c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    cache.inv_std[c] = inv;
    const double g = gamma[offset + c], b = beta[offset + c];
    for (std::int64_t i = 0; i < n; ++i) {
      const double* p = x.data() + (i * active + c) * plane;
      double* xh = cache.xhat.data() + (i * active + c) * plane;
      double* o = out.data() + (i * active + c) * plane;
      for (std::int64_t j = 0; j < plane; ++j) {
        xh[j] = (p[j] - mean) * inv;
        o[j] = g * xh[j] + b;
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out, int level) {
  LevelCache& cache = detail::level_slot(cache_, level);
  if (cache.xhat.empty()) throw std::runtime_error("BatchNorm2d::backward without cached forward");
  if (!grad_out.same_shape(cache.xhat))
    throw std::invalid_argument("BatchNorm2d::backward: gradient shape mismatch");
  const std::int64_t active = cache.active;
  const std::int64_t offset = channels_ - active;
  const std::int64_t n = grad_out.dim(0), plane = grad_out.dim(2) * grad_out.dim(3);
  const double count = static_cast<double>(n * plane);

  Tensor dx(grad_out.shape());
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < active; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double* dy = grad_out.data() + (i * active + c) * plane;
      const double* xh = cache.xhat.data() + (i * active + c) * plane;
      for (std::int64_t j = 0; j < plane; ++j) {
        sum_dy += dy[j];
        sum_dy_xhat += dy[j] * xh[j];
      }
    }
    gamma_grad[offset + c] += sum_dy_xhat;
    beta_grad[offset + c] += sum_dy;
    const double g = gamma[offset + c];
    const double inv = cache.inv_std[c];
    for (std::int64_t i = 0; i < n; ++i) {
      const double* dy = grad_out.data() + (i * active + c) * plane;
      const double* xh = cache.xhat.data() + (i * active + c) * plane;
      double* out = dx.data() + (i * active + c) * plane;
      if (cache.training) {
        for (std::int64_t j = 0; j < plane; ++j)
          out[j] = g * inv * (dy[j] - sum_dy / count - xh[j] * sum_dy_xhat / count);
      } else {
        for (std::int64_t j = 0; j < plane; ++j) out[j] = g * inv * dy[j];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>* params,
                          std::vector<BufferRef>* buffers) {
  if (params) {
    params->push_back({prefix + "gamma", &gamma, &gamma_grad});
    params->push_back({prefix + "beta", &beta, &beta_grad});
  }
  if (buffers) {
    for (int s = 0; s < stat_slots_; ++s) {
      buffers->push_back({prefix + "running_mean." + std::to_string(s),
                          &running_mean[static_cast<std::size_t>(s)]});
      buffers->push_back(
          {prefix + "running_var." + std::to_string(s), &running_var[static_cast<std::size_t>(s)]});
    }
  }
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x, int level, bool training) {
  (void)training;
  Tensor y = x;
  for (std::int64_t i = 0; i < y.numel(); ++i)
    if (y[i] < 0.0) y[i] = 0.0;
  detail::level_slot(cached_y_, level) = y;
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out, int level) {
  const Tensor& y = detail::level_slot(cached_y_, level);
  if (!grad_out.same_shape(y)) throw std::invalid_argument("ReLU::backward: shape mismatch");
  Tensor dx = grad_out;
  for (std::int64_t i = 0; i < dx.numel(); ++i)
    if (y[i] <= 0.0) dx[i] = 0.0;
  return dx;
}

// ---------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, int level, bool training) {
  (void)training;
  if (x.rank() != 4) throw std::invalid_argument("GlobalAvgPool: expected NCHW input");
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    const double* p = x.data() + i * plane;
    double acc = 0.0;
    for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
    out[i] = acc / static_cast<double>(plane);
  }
  detail::level_slot(cached_shape_, level) = x.shape();
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out, int level) {
  const auto& shape = detail::level_slot(cached_shape_, level);
  if (shape.size() != 4) throw std::runtime_error("GlobalAvgPool::backward without cached forward");
  const std::int64_t plane = shape[2] * shape[3];
  Tensor dx(shape);
  const double inv = 1.0 / static_cast<double>(plane);
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
    double* p = dx.data() + i * plane;
    const double g = grad_out[i] * inv;
    for (std::int64_t j = 0; j < plane; ++j) p[j] = g;
  }
  return dx;
}

// ------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(int kernel, int stride, int pad) : kernel_(kernel), stride_(stride), pad_(pad) {
  if (kernel < 1 || stride < 1 || pad < 0) throw std::invalid_argument("MaxPool2d: bad geometry");
}

Tensor MaxPool2d::forward(const Tensor& x, int level, bool training) {
  (void)training;
  if (x.rank() != 4) throw std::invalid_argument("MaxPool2d: expected NCHW input");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = (h + 2 * pad_ - kernel_) / stride_ + 1;
  const std::int64_t ow = (w + 2 * pad_ - kernel_) / stride_ + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("MaxPool2d: window larger than input");
  Tensor out({n, c, oh, ow});
  LevelCache& cache = detail::level_slot(cache_, level);
  cache.in_shape = x.shape();
  cache.argmax.assign(static_cast<std::size_t>(out.numel()), -1);
#pragma omp parallel for schedule(static)
  for (std::int64_t ic = 0; ic < n * c; ++ic) {
    const double* src = x.data() + ic * h * w;
    double* dst = out.data() + ic * oh * ow;
    std::int64_t* arg = cache.argmax.data() + ic * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double best = -1e300;
        std::int64_t best_idx = -1;
        for (int ky = 0; ky < kernel_; ++ky) {
          const std::int64_t yy = oy * stride_ + ky - pad_;
          if (yy < 0 || yy >= h) continue;
          for (int kx = 0; kx < kernel_; ++kx) {
            const std::int64_t xx = ox * stride_ + kx - pad_;
            if (xx < 0 || xx >= w) continue;
            const double v = src[yy * w + xx];
            if (v > best) {
              best = v;
              best_idx = yy * w + xx;
            }
          }
        }
        dst[oy * ow + ox] = best;
        arg[oy * ow + ox] = best_idx;
      }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out, int level) {
  LevelCache& cache = detail::level_slot(cache_, level);
  if (cache.in_shape.size() != 4) throw std::runtime_error("MaxPool2d::backward without cached forward");
  Tensor dx(cache.in_shape);
  const std::int64_t planes = cache.in_shape[0] * cache.in_shape[1];
  const std::int64_t in_plane = cache.in_shape[2] * cache.in_shape[3];
  const std::int64_t out_plane = grad_out.dim(2) * grad_out.dim(3);
#pragma omp parallel for schedule(static)
  for (std::int64_t ic = 0; ic < planes; ++ic) {
    double* dst = dx.data() + ic * in_plane;
    const double* g = grad_out.data() + ic * out_plane;
    const std::int64_t* arg = cache.argmax.data() + ic * out_plane;
    for (std::int64_t j = 0; j < out_plane; ++j)
      if (arg[j] >= 0) dst[arg[j]] += g[j];
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng)
    : in_features_(in_features), out_features_(out_features) {
  if (in_features <= 0 || out_features <= 0)
    throw std::invalid_argument("Linear: feature counts must be positive");
  weight = Tensor({out_features, in_features});
  weight_grad = Tensor(weight.shape());
  bias = Tensor({out_features});
  bias_grad = Tensor({out_features});
  init_fan_in_uniform(weight, in_features, rng);
  init_fan_in_uniform(bias, in_features, rng);
}

Tensor Linear::forward(const Tensor& x, int level, bool training) {
  (void)training;
  if (x.rank() != 2 || x.dim(1) != in_features_)
    throw std::invalid_argument("Linear: expected (N, " + std::to_string(in_features_) +
                                ") input, got " + shape_string(x));
  const std::int64_t n = x.dim(0);
  Tensor out({n, out_features_});
  gemm_nt(x.data(), weight.data(), out.data(), n, in_features_, out_features_, false);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t o = 0; o < out_features_; ++o) out.at(i, o) += bias[o];
  detail::level_slot(cached_x_, level) = x;
  return out;
}

Tensor Linear::backward(const Tensor& grad_out, int level) {
  const Tensor& x = detail::level_slot(cached_x_, level);
  if (x.empty()) throw std::runtime_error("Linear::backward without cached forward");
  const std::int64_t n = x.dim(0);
  if (grad_out.rank() != 2 || grad_out.dim(0) != n || grad_out.dim(1) != out_features_)
    throw std::invalid_argument("Linear::backward: gradient shape mismatch");
  gemm_tn(grad_out.data(), x.data(), weight_grad.data(), out_features_, n, in_features_, true);
  for (std::int64_t o = 0; o < out_features_; ++o) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += grad_out.at(i, o);
    bias_grad[o] += acc;
  }
  Tensor dx({n, in_features_});
  gemm_nn(grad_out.data(), weight.data(), dx.data(), n, out_features_, in_features_, false);
  return dx;
}

void Linear::collect(const std::string& prefix, std::vector<ParamRef>* params,
                     std::vector<BufferRef>* buffers) {
  (void)buffers;
  if (!params) return;
  params->push_back({prefix + "weight", &weight, &weight_grad});
  params->push_back({prefix + "bias", &bias, &bias_grad});
}

}  // namespace apnet
