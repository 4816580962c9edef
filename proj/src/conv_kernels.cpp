#include "apnet/conv_kernels.hpp"

#include <stdexcept>
#include <string>

namespace apnet {

ConvGeom make_conv_geom(std::int64_t in_channels, std::int64_t in_h, std::int64_t in_w,
                        std::int64_t kernel_h, std::int64_t kernel_w, std::int64_t stride,
                        std::int64_t pad) {
  if (in_channels <= 0 || in_h <= 0 || in_w <= 0)
    throw std::invalid_argument("conv geom: non-positive input dims");
  if (kernel_h <= 0 || kernel_w <= 0) throw std::invalid_argument("conv geom: non-positive kernel");
  if (stride <= 0) throw std::invalid_argument("conv geom: non-positive stride");
  if (pad < 0) throw std::invalid_argument("conv geom: negative padding");
  const std::int64_t eff_h = in_h + 2 * pad;
  const std::int64_t eff_w = in_w + 2 * pad;
  if (eff_h < kernel_h || eff_w < kernel_w)
    throw std::invalid_argument("conv geom: kernel larger than padded input");
  ConvGeom g;
  g.in_channels = in_channels;
  g.in_h = in_h;
  g.in_w = in_w;
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  g.stride = stride;
  g.pad = pad;
  g.out_h = (eff_h - kernel_h) / stride + 1;
  g.out_w = (eff_w - kernel_w) / stride + 1;
  return g;
}

void im2col(const double* image, const ConvGeom& g, double* col, std::int64_t ld,
            std::int64_t offset) {
  const std::int64_t plane = g.in_h * g.in_w;
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    const double* src = image + c * plane;
    double* dst = col + c * g.kernel_h * g.kernel_w * ld + offset;
    for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
      for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
        double* row = dst + (kh * g.kernel_w + kw) * ld;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t h = oh * g.stride + kh - g.pad;
          double* out = row + oh * g.out_w;
          if (h < 0 || h >= g.in_h) {
            for (std::int64_t ow = 0; ow < g.out_w; ++ow) out[ow] = 0.0;
            continue;
          }
          const double* line = src + h * g.in_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t w = ow * g.stride + kw - g.pad;
            out[ow] = (w < 0 || w >= g.in_w) ? 0.0 : line[w];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* image, std::int64_t ld,
            std::int64_t offset) {
  const std::int64_t plane = g.in_h * g.in_w;
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    double* dst = image + c * plane;
    const double* src = col + c * g.kernel_h * g.kernel_w * ld + offset;
    for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
      for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
        const double* row = src + (kh * g.kernel_w + kw) * ld;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t h = oh * g.stride + kh - g.pad;
          if (h < 0 || h >= g.in_h) continue;
          double* line = dst + h * g.in_w;
          const double* in = row + oh * g.out_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t w = ow * g.stride + kw - g.pad;
            if (w >= 0 && w < g.in_w) line[w] += in[ow];
          }
        }
      }
    }
  }
}

void im2col_batch(const Tensor& x, const ConvGeom& g, double* col) {
  const std::int64_t n = x.dim(0);
  const std::int64_t positions = g.out_positions();
  const std::int64_t sample = g.in_channels * g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    im2col(x.data() + i * sample, g, col, n * positions, i * positions);
}

void col2im_batch(const double* col, const ConvGeom& g, Tensor& dx) {
  const std::int64_t n = dx.dim(0);
  const std::int64_t positions = g.out_positions();
  const std::int64_t sample = g.in_channels * g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    col2im(col, g, dx.data() + i * sample, n * positions, i * positions);
}

void gather_channel_major(const Tensor& x, std::int64_t channel_offset, std::int64_t channels,
                          double* out) {
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < channels; ++ch)
    for (std::int64_t i = 0; i < n; ++i) {
      const double* src = x.data() + (i * c + channel_offset + ch) * plane;
      double* dst = out + ch * n * plane + i * plane;
      for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p];
    }
}

void scatter_channel_major(const double* in, std::int64_t channel_offset, std::int64_t channels,
                           Tensor& x) {
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < channels; ++ch)
    for (std::int64_t i = 0; i < n; ++i) {
      const double* src = in + ch * n * plane + i * plane;
      double* dst = x.data() + (i * c + channel_offset + ch) * plane;
      for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p];
    }
}

namespace {

// Column tiles keep the streamed operand cache-resident. Each output element
// is still accumulated in one fixed bracketing with a single writer per
// parallel region, so results stay bit-reproducible for any thread count.
std::int64_t column_tile(std::int64_t rows) {
  const std::int64_t budget = (std::int64_t{1} << 15) / (rows > 0 ? rows : 1);  // ~256 KB of doubles
  return std::max<std::int64_t>(512, std::min<std::int64_t>(8192, budget));
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate) {
  const std::int64_t tile = column_tile(k);
  for (std::int64_t j0 = 0; j0 < n; j0 += tile) {
    const std::int64_t j1 = std::min(n, j0 + tile);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      if (!accumulate)
        for (std::int64_t j = j0; j < j1; ++j) crow[j] = 0.0;
      const double* arow = a + i * k;
      for (std::int64_t l = 0; l < k; ++l) {
        const double alk = arow[l];
        const double* brow = b + l * n;
#pragma omp simd
        for (std::int64_t j = j0; j < j1; ++j) crow[j] += alk * brow[j];
      }
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t p,
             std::int64_t n, bool accumulate) {
  if (!accumulate) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) c[i * n + j] = 0.0;
  }
  const std::int64_t tile = column_tile(m);
  for (std::int64_t l0 = 0; l0 < p; l0 += tile) {
    const std::int64_t l1 = std::min(p, l0 + tile);
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * p;
      for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * p;
        double dot = 0.0;
#pragma omp simd reduction(+ : dot)
        for (std::int64_t l = l0; l < l1; ++l) dot += arow[l] * brow[l];
        c[i * n + j] += dot;
      }
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t p,
             std::int64_t n, bool accumulate) {
  const std::int64_t tile = column_tile(p);
  for (std::int64_t j0 = 0; j0 < n; j0 += tile) {
    const std::int64_t j1 = std::min(n, j0 + tile);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      if (!accumulate)
        for (std::int64_t j = j0; j < j1; ++j) crow[j] = 0.0;
      for (std::int64_t l = 0; l < p; ++l) {
        const double ali = a[l * m + i];
        const double* brow = b + l * n;
#pragma omp simd
        for (std::int64_t j = j0; j < j1; ++j) crow[j] += ali * brow[j];
      }
    }
  }
}

}  // namespace apnet
