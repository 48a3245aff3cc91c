#pragma once

#include <functional>
#include <vector>

#include "msdial/tape.hpp"
#include "msdial/tensor.hpp"

namespace msdial {

// Elementwise ops. Binary ops broadcast length-1 axes (NumPy style, lower
// rank left-padded with 1s); mismatched non-1 axes are an error naming both
// shapes. Each op records a tape entry when an input requires a gradient
// and a tape is active.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);  // strictly positive inputs only
Tensor exp(const Tensor& a);

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// x: [N x Cin x H x W], w: [Cout x Cin x kh x kw], bias: [Cout].
/// Direct convolution; H' = (H + 2*padding - kh) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);

/// Row-wise numerically stable log-softmax over [N x C], C >= 2.
Tensor log_softmax(const Tensor& logits);

/// Sums axes down to `target` (same rank, each axis equal or 1).
Tensor sum_to(const Tensor& a, const Shape& target);
/// Sum of all elements as a rank-0 scalar.
Tensor sum_all(const Tensor& a);

/// Rows [start, start+count) along axis 0.
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
/// Concatenation along axis 0; parts must agree on trailing dims.
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Same element count, new shape.
Tensor reshape(const Tensor& a, const Shape& new_shape);

/// Central-difference check of the tape gradient of a deterministic scalar
/// function. Coordinates where one-sided differences disagree (ReLU kinks)
/// are reported and excluded from max_rel_err.
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool has_nan = false;
    std::vector<std::size_t> kink_coords;

    bool ok(double tol) const { return !has_nan && max_rel_err < tol; }
};

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double h = 1e-5);

}  // namespace msdial
