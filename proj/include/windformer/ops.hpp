#pragma once

#include <cstdint>
#include <vector>

#include "windformer/value.hpp"

namespace windformer {

enum class Activation { Relu, Gelu };

// -- elementwise ------------------------------------------------------------
// add/mul accept equal shapes, or b whose shape is a trailing suffix of a's
// (the bias case); the broadcast grad sums over the leading axes.
ValuePtr add(const ValuePtr& a, const ValuePtr& b);
ValuePtr mul(const ValuePtr& a, const ValuePtr& b);
ValuePtr scale(const ValuePtr& a, double s);
ValuePtr add_scalar(const ValuePtr& a, double s);
ValuePtr relu(const ValuePtr& a);
ValuePtr gelu(const ValuePtr& a);
ValuePtr activate(const ValuePtr& a, Activation act);

// -- structural -------------------------------------------------------------
ValuePtr transpose(const ValuePtr& a, int64_t axis_i, int64_t axis_j);
ValuePtr reshape(const ValuePtr& a, Shape s);
ValuePtr concat(const std::vector<ValuePtr>& xs, int64_t axis);
ValuePtr slice(const ValuePtr& a, int64_t axis, int64_t start, int64_t len);
// a.dims[axis] must be 1; repeats it n times, grad sums back over the axis.
ValuePtr repeat_axis(const ValuePtr& a, int64_t axis, int64_t n);

// -- reductions -------------------------------------------------------------
ValuePtr reduce_sum(const ValuePtr& a);
ValuePtr reduce_mean(const ValuePtr& a);

// -- linear algebra ---------------------------------------------------------
// a: [.., m, k], b: [k, n] (shared) or [.., k, n] with equal leading extents.
ValuePtr matmul(const ValuePtr& a, const ValuePtr& b);

// -- normalization ----------------------------------------------------------
// Numerically stabilized; each last-dim slice of the output sums to 1.
ValuePtr softmax_lastdim(const ValuePtr& a);
// Per-last-dim-slice standardization (population variance) then affine.
ValuePtr layer_norm(const ValuePtr& x, const ValuePtr& gamma, const ValuePtr& beta,
                    double eps = 1e-5);

// -- lookup -----------------------------------------------------------------
// Gathers rows of table [R x E] at idx (flattened idx_shape); output shape is
// idx_shape + [E]. Grads scatter-add into the table. table_name appears in
// the out-of-range error message.
ValuePtr embedding_lookup(const ValuePtr& table, const std::vector<int64_t>& idx,
                          const Shape& idx_shape, const char* table_name);

// -- loss -------------------------------------------------------------------
// Mean over elements of: 0.5 e^2 for |e| < 1, |e| - 0.5 otherwise.
ValuePtr smooth_l1(const ValuePtr& pred, const std::vector<double>& target);

}  // namespace windformer
