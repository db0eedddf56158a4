#pragma once

#include "v2vlc/tensor.hpp"

namespace v2vlc::ops {

enum class Padding { Same, Valid };
enum class PoolKind { Max, Mean };

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);
Tensor softmax(const Tensor& x, int axis);
// Backward of softmax given its output y and upstream gradient g.
Tensor softmax_backward(const Tensor& y, const Tensor& g, int axis);

// x: Cin×H×W, w: Cout×Cin×kh×kw, b: Cout. Cross-correlation, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Padding pad, int stride = 1);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout, Padding pad,
                     int stride, Tensor& gx, Tensor& gw, Tensor& gb);

Tensor pool_channel(const Tensor& x, PoolKind kind);
Tensor pool_channel_backward(const Tensor& x, const Tensor& y, const Tensor& g, PoolKind kind);

// Per-position k×k filtering: kf is (k·k)×H×W, the kernel at each position is
// shared across the channels of s. Zero padding at borders.
Tensor apply_kernels(const Tensor& s, const Tensor& kf);
void apply_kernels_backward(const Tensor& s, const Tensor& kf, const Tensor& gout,
                            Tensor& gs, Tensor& gkf);

Tensor upsample2x(const Tensor& x);              // nearest neighbor, C×H×W → C×2H×2W
Tensor upsample2x_backward(const Tensor& g);

Tensor concat_channel(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

double mean_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace v2vlc::ops
