#pragma once

#include <cstdint>

#include "apnet/tensor.hpp"

namespace apnet {

/// Geometry of a 2-D convolution with square stride and symmetric zero padding.
struct ConvGeom {
  std::int64_t in_channels = 0;
  std::int64_t in_h = 0, in_w = 0;
  std::int64_t kernel_h = 0, kernel_w = 0;
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  std::int64_t out_h = 0, out_w = 0;

  std::int64_t patch_rows() const { return in_channels * kernel_h * kernel_w; }
  std::int64_t out_positions() const { return out_h * out_w; }
};

/// Computes output dims; throws std::invalid_argument when the kernel does not
/// fit the padded input or the stride is non-positive.
ConvGeom make_conv_geom(std::int64_t in_channels, std::int64_t in_h, std::int64_t in_w,
                        std::int64_t kernel_h, std::int64_t kernel_w, std::int64_t stride,
                        std::int64_t pad);

// Patch matrix layout: row r = (c * kernel_h + kh) * kernel_w + kw, column =
// output position. Rows of one channel are contiguous, so "the trailing m
// channels" of the input is exactly the trailing m*kh*kw rows — the pathway
// sub-convolutions rely on this to share one im2col per input. The matrix may
// be a slice of a batch-wide buffer: `ld` is the full row length and `offset`
// this sample's first column.
void im2col(const double* image, const ConvGeom& g, double* col, std::int64_t ld,
            std::int64_t offset);

/// Scatters a patch-matrix gradient back to an image gradient (accumulates;
/// caller zeroes the destination). Strided like im2col.
void col2im(const double* col, const ConvGeom& g, double* image, std::int64_t ld,
            std::int64_t offset);

// Batch-wide conv compute: one patch matrix of shape (patch_rows, N*positions)
// and channel-major 2-D activations of shape (channels, N*positions), so each
// layer runs a single large matrix product per direction per step.

/// Fills the batch patch matrix from NCHW input (parallel over samples).
void im2col_batch(const Tensor& x, const ConvGeom& g, double* col);

/// Accumulates the batch patch-matrix gradient into NCHW dx (zeroed first).
void col2im_batch(const double* col, const ConvGeom& g, Tensor& dx);

/// (N, C, P) <-> (C, N*P) gathers; `channel_offset` selects a block of
/// channels of the NCHW tensor.
void gather_channel_major(const Tensor& x, std::int64_t channel_offset, std::int64_t channels,
                          double* out);
void scatter_channel_major(const double* in, std::int64_t channel_offset, std::int64_t channels,
                           Tensor& x);

// Every GEMM variant assigns each output element to exactly one thread and
// accumulates in a fixed order, so results do not depend on the thread count.

/// C (MxN) = A (MxK) * B (KxN), or += when accumulate.
void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate);

/// C (MxN) = A (MxP) * B (NxP)^T, or += when accumulate.
void gemm_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t p,
             std::int64_t n, bool accumulate);

/// C (MxN) = A (PxM)^T * B (PxN), or += when accumulate.
void gemm_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t p,
             std::int64_t n, bool accumulate);

}  // namespace apnet
