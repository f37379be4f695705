#pragma once

#include "gaot/rng.hpp"
#include "gaot/tensor.hpp"

namespace gaot::ad {

// Differentiable primitives over dense real64 tensors.  Binary elementwise
// ops broadcast numpy-style: shapes are right-aligned, missing leading axes
// are treated as extent 1, and an extent-1 axis stretches to match.  Every op
// validates shapes and throws std::invalid_argument naming the op.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scalar_mul(const Tensor& a, double c);
Tensor scalar_add(const Tensor& a, double c);

Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // 2-D

// Reductions drop the axis unless keepdim, in which case it stays extent 1.
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);   // -> [1]
Tensor mean_all(const Tensor& x);  // -> [1]

Tensor exp(const Tensor& x);
Tensor ln(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor rsqrt(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

// Rows of x selected by index; duplicate indices accumulate gradient.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx);

// Rows summed into buckets: offsets has size B+1, bucket b owns rows
// [offsets[b], offsets[b+1]).  Row count must equal offsets.back().
Tensor segment_sum(const Tensor& x, const std::vector<int64_t>& offsets);

// Softmax over each bucket of a flat [E] or [E,1] tensor.  Empty buckets are
// legal and contribute nothing.
Tensor segment_softmax(const Tensor& x, const std::vector<int64_t>& offsets);

// Inverted dropout: zeroes entries with probability rate and scales the rest
// by 1/(1-rate).  Identity when training is false or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

// Rotates channel pairs (2j, 2j+1) of each row by angles[row][j].  The
// angles are positional constants; gradient flows through x only.
Tensor rotate_pairs(const Tensor& x, const std::vector<double>& angles);

}  // namespace gaot::ad
