#pragma once

#include <functional>

#include "aa/tensor.hpp"

namespace aa {

// Differentiable ops over the tape. Forward results are f32; reductions and
// inner products accumulate in f64 before the final cast. No broadcasting
// beyond the bias adds; all shapes are explicit.

// Cross-correlation, input [N,C,H,W] x kernel [F,C,k,k] -> [N,F,H',W'].
// k must be odd and (H + 2*padding - k) must divide stride exactly.
TensorPtr conv2d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel, int stride, int padding);

// Per-channel bias add, [N,C,H,W] + [C].
TensorPtr bias_channels(Tape& tape, const TensorPtr& x, const TensorPtr& bias);

// Each pixel replicated factor x factor; backward sums over each block.
TensorPtr upsample_nearest(Tape& tape, const TensorPtr& x, int factor);

TensorPtr leaky_relu(Tape& tape, const TensorPtr& x, float slope);

// Numerically stable logistic; outputs in (0,1) for all finite inputs.
TensorPtr sigmoid(Tape& tape, const TensorPtr& x);

// Affine map [N,D] x [D,E] + [E] -> [N,E].
TensorPtr dense(Tape& tape, const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias);

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& tape, const TensorPtr& x, float c);
TensorPtr abs_elem(Tape& tape, const TensorPtr& x);
TensorPtr exp_elem(Tape& tape, const TensorPtr& x);
TensorPtr log_elem(Tape& tape, const TensorPtr& x);

// Pass-through gradient inside [lo, hi], zero outside.
TensorPtr clamp(Tape& tape, const TensorPtr& x, float lo, float hi);

TensorPtr sum_all(Tape& tape, const TensorPtr& x);
TensorPtr mean_all(Tape& tape, const TensorPtr& x);

// [N,C,H,W] -> [N,C], mean over the spatial dims.
TensorPtr global_avg_pool(Tape& tape, const TensorPtr& x);

// [N,...] -> [N, rest].
TensorPtr flatten2d(Tape& tape, const TensorPtr& x);

TensorPtr reshape(Tape& tape, const TensorPtr& x, std::vector<int> shape);

// Builds a scalar loss from x on the given tape.
using ScalarFn = std::function<TensorPtr(Tape&, const TensorPtr&)>;

// Central-difference check of backward()'s gradient of f at x. Returns the
// max elementwise relative error with denominator max(|a|,|b|,1e-8). The
// difference quotient is formed in f64 from the actually-stored perturbations.
float finite_diff_check(const ScalarFn& f, const TensorPtr& x, float eps);

}  // namespace aa
