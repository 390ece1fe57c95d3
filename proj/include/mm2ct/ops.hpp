#pragma once

#include <utility>

#include "mm2ct/rng.hpp"
#include "mm2ct/tensor.hpp"

namespace mm2ct {

// ---- creation ----
Tensor zeros(Shape s, bool requires_grad = false);
Tensor full(Shape s, float v, bool requires_grad = false);
Tensor randn(Shape s, RngStream& rng, float stddev = 1.0f, float mean = 0.0f);
Tensor rand_uniform(Shape s, RngStream& rng, float lo, float hi);
// Normal(0, std) resampled into [-2std, 2std]; the conv/linear weight init.
Tensor trunc_normal(Shape s, RngStream& rng, float stddev);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor emax(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor neg(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor neg_exp(const Tensor& a);  // -exp(a); keeps state matrices negative
Tensor log_t(const Tensor& a);
Tensor abs_t(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus_t(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float negative_slope);
Tensor softmax(const Tensor& a, int axis);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// ---- structure ----
Tensor reshape(const Tensor& a, Shape s);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice_axis0(const Tensor& a, int begin, int end);
Tensor flip0(const Tensor& a);
Tensor detach(const Tensor& a);
// [C,H,W] <-> [H*W,C] raster-order sequence views (copying).
Tensor chw_to_lc(const Tensor& a);
Tensor lc_to_chw(const Tensor& a, int H, int W);
Tensor upsample_nearest2x(const Tensor& a);  // [C,H,W] -> [C,2H,2W]
Tensor replicate_pad1(const Tensor& a);      // [C,H,W] -> [C,H+2,W+2], edge-replicated

// ---- neural-net primitives ----
// x: [..., I], w: [O, I], b: [O] (or undefined for no bias) -> [..., O]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// x: [C,H,W] or [B,C,H,W]; w: [O,C,k,k]; b: [O] or undefined. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);
// Depthwise causal 1D conv over the sequence axis. x: [L,C], w: [C,k], b: [C].
Tensor dwconv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b);
// Normalization over the last axis. gamma, beta: [C].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
// [O,C,k,k] -> [O,C,1,1], summing each kernel window (central-difference conv helper).
Tensor sum_hw(const Tensor& w);

}  // namespace mm2ct
