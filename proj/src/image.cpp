#include "apnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace apnet {

void check_image(const Tensor& img) {
  if (img.rank() != 3) throw std::invalid_argument("image must be CHW, got rank " + std::to_string(img.rank()));
  const std::int64_t c = img.dim(0);
  if (c != 1 && c != 3) throw std::invalid_argument("image must have 1 or 3 channels, got " + std::to_string(c));
  if (img.dim(1) <= 0 || img.dim(2) <= 0) throw std::invalid_argument("image has empty spatial dims");
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

Tensor grayscale(const Tensor& img) {
  check_image(img);
  const std::int64_t h = img.dim(1), w = img.dim(2);
  Tensor out({1, h, w});
  if (img.dim(0) == 1) {
    for (std::int64_t i = 0; i < img.numel(); ++i) out[i] = img[i];
    return out;
  }
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      out.at(0, y, x) = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
  return out;
}

namespace {

double sample_bilinear(const Tensor& img, std::int64_t c, double y, double x, double fill) {
  const std::int64_t h = img.dim(1), w = img.dim(2);
  if (y <= -1.0 || y >= static_cast<double>(h) || x <= -1.0 || x >= static_cast<double>(w))
    return fill;
  const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
  const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  auto px = [&](std::int64_t yy, std::int64_t xx) {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return fill;
    return img.at(c, yy, xx);
  };
  const double top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
  const double bot = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

}  // namespace

Tensor resize_bilinear(const Tensor& img, std::int64_t out_h, std::int64_t out_w) {
  check_image(img);
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: non-positive output size");
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (out_h == h && out_w == w) return img;
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < out_h; ++y) {
      const double src_y = std::min(std::max((y + 0.5) * sy - 0.5, 0.0), static_cast<double>(h - 1));
      for (std::int64_t x = 0; x < out_w; ++x) {
        const double src_x = std::min(std::max((x + 0.5) * sx - 0.5, 0.0), static_cast<double>(w - 1));
        out.at(ch, y, x) = sample_bilinear(img, ch, src_y, src_x, 0.0);
      }
    }
  return out;
}

Tensor center_crop(const Tensor& img, std::int64_t crop_h, std::int64_t crop_w) {
  check_image(img);
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (crop_h <= 0 || crop_w <= 0 || crop_h > h || crop_w > w)
    throw std::invalid_argument("center_crop: crop size out of range");
  const std::int64_t y0 = (h - crop_h) / 2;
  const std::int64_t x0 = (w - crop_w) / 2;
  Tensor out({c, crop_h, crop_w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < crop_h; ++y)
      for (std::int64_t x = 0; x < crop_w; ++x) out.at(ch, y, x) = img.at(ch, y0 + y, x0 + x);
  return out;
}

Tensor resize_short_side(const Tensor& img, std::int64_t short_side) {
  check_image(img);
  if (short_side <= 0) throw std::invalid_argument("resize_short_side: non-positive size");
  const std::int64_t h = img.dim(1), w = img.dim(2);
  if (h <= w) {
    const std::int64_t out_w = std::max<std::int64_t>(1, (w * short_side + h / 2) / h);
    return resize_bilinear(img, short_side, out_w);
  }
  const std::int64_t out_h = std::max<std::int64_t>(1, (h * short_side + w / 2) / w);
  return resize_bilinear(img, out_h, short_side);
}

Tensor warp_affine(const Tensor& img, double a11, double a12, double b1, double a21, double a22,
                   double b2, double fill) {
  check_image(img);
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double cx = 0.5 * static_cast<double>(w - 1);
  Tensor out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const double src_x = a11 * dx + a12 * dy + b1 + cx;
        const double src_y = a21 * dx + a22 * dy + b2 + cy;
        out.at(ch, y, x) = sample_bilinear(img, ch, src_y, src_x, fill);
      }
  return out;
}

}  // namespace apnet
