#pragma once

#include <vector>

#include "ghnsearch/tensor.hpp"

namespace ghn {

// Every operation here is differentiable: when a Tape is active and any input
// requires grad, a backward rule is recorded that accumulates into the
// inputs' grad buffers. Without an active tape the same functions run as
// plain (and cheaper) numeric kernels.

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // [N,C] + [C]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// ---- structure ----
Tensor concat(const std::vector<Tensor>& parts, size_t axis);
Tensor slice(const Tensor& x, size_t axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& x, Shape shape);
Tensor reduce_sum_all(const Tensor& x);
Tensor reduce_mean_all(const Tensor& x);
Tensor reduce_sum(const Tensor& x, size_t axis);
Tensor reduce_mean(const Tensor& x, size_t axis);

// ---- spatial (NCHW; rank-3 input is treated as batch 1, rank preserved) ----
struct Conv2dOpts {
  int stride = 1;
  int padding = 0;  // symmetric; padding_w overrides the horizontal pad when >= 0
  int dilation = 1;
  int padding_w = -1;

  int pad_h() const { return padding; }
  int pad_w() const { return padding_w >= 0 ? padding_w : padding; }
};

int64_t conv_out_extent(int64_t in, int64_t k, int stride, int padding, int dilation);

Tensor conv2d(const Tensor& x, const Tensor& w, const Conv2dOpts& opts = {});
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Conv2dOpts& opts = {});
// Depthwise stage (with "same" padding for odd kernels) followed by a 1x1
// pointwise projection. Stride and dilation apply to the depthwise stage.
Tensor separable_conv2d(const Tensor& x, const Tensor& depthwise_w, const Tensor& pointwise_w,
                        int stride = 1, int dilation = 1);

enum class PoolKind { kMax, kAvg };

// Max routes gradient to the first (row-major) maximal element of each
// window; avg divides by the count of in-bounds cells, so a constant field
// stays constant under padding.
Tensor pool2d(const Tensor& x, PoolKind kind, int k, int stride, int padding);
Tensor global_avg_pool(const Tensor& x);          // [B,C,H,W] -> [B,C]
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor downsample_avg(const Tensor& x, int factor);
Tensor channel_affine(const Tensor& x, const Tensor& scale_c, const Tensor& bias_c);

/// y = target * x / sqrt(mean(x^2) + 1e-12). Used as the output
/// parameterization of generated kernels: the hypernet learns the kernel
/// direction while the emitted tensor lands at a prescribed scale.
Tensor rms_scale(const Tensor& x, double target);

// ---- loss ----
// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace ghn
