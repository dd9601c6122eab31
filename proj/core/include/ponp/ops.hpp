#pragma once

#include <optional>
#include <vector>

#include "ponp/tensor.hpp"

namespace ponp {

// ---------------------------------------------------------------------------
// Differentiable ops. All take value handles and return fresh graph nodes.
// Supported closure: affine/matmul, elementwise add/sub/mul/divide, sin, cos,
// relu, softplus, exp, log, tanh, square, softmax, sum/mean reductions,
// concatenation, batched matmul, 2D convolution, plus the structural ops the
// forward maps need (row gather, reshape, slicing, broadcasts). Anything
// outside this list does not exist in the graph by construction.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);

/// [m,k] @ [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched matmul: [b,m,k] @ [b,k,n] -> [b,m,n].
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Row-wise softmax over the last axis of a 2D tensor.
Tensor softmax(const Tensor& a);

Tensor sum_all(const Tensor& a);   // -> [1]
Tensor mean_all(const Tensor& a);  // -> [1]
/// Reduce one axis of a 2D tensor; axis 0 -> [1,n], axis 1 -> [m,1].
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);

/// b broadcast over the rows of a: a[m,n] + b[1,n].
Tensor add_rowvec(const Tensor& a, const Tensor& b);
/// b broadcast over the rows of a: a[m,n] * b[1,n].
Tensor mul_rowvec(const Tensor& a, const Tensor& b);
/// Tile a [1,n] row m times -> [m,n].
Tensor repeat_rows(const Tensor& a, int m);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Select rows of a 2D tensor; gradient scatters back.
Tensor gather_rows(const Tensor& a, const std::vector<int>& indices);
/// Scatter-add rows of a [k,n] tensor into a zero [m,n] tensor.
Tensor scatter_rows(const Tensor& a, const std::vector<int>& indices, int m);
/// Columns [from, to) of a 2D tensor.
Tensor slice_cols(const Tensor& a, int from, int to);
/// Fill a tensor of the given shape with the value of a scalar tensor.
Tensor broadcast_scalar(const Tensor& a, Shape shape);

Tensor reshape(const Tensor& a, Shape shape);

enum class Padding { zero, periodic };

/// 2D convolution, stride 1, same-size output. x is [cin,h,w], w is
/// [cout,cin,kh,kw] with odd kernel extents, bias [cout] optional.
Tensor conv2d(const Tensor& x, const Tensor& w,
              const std::optional<Tensor>& bias, Padding padding);

/// mean((a-b)^2) over all entries.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace ponp
