#pragma once

#include "apnet/tensor.hpp"

namespace apnet {

// Images are CHW tensors with values in [0, 1], 1 or 3 channels.

void check_image(const Tensor& img);

/// Rec.601 luma; single-channel images are their own grayscale.
Tensor grayscale(const Tensor& img);

double clamp01(double v);

/// Bilinear resize (half-pixel centers).
Tensor resize_bilinear(const Tensor& img, std::int64_t out_h, std::int64_t out_w);

Tensor center_crop(const Tensor& img, std::int64_t crop_h, std::int64_t crop_w);

/// Resize so the short side equals `short_side`, keeping aspect ratio.
Tensor resize_short_side(const Tensor& img, std::int64_t short_side);

/// Inverse affine warp: for each output pixel (x, y) samples the input at
/// (a11*x + a12*y + b1, a21*x + a22*y + b2) bilinearly around the image
/// center; out-of-range samples read `fill`.
Tensor warp_affine(const Tensor& img, double a11, double a12, double b1, double a21, double a22,
                   double b2, double fill);

}  // namespace apnet
