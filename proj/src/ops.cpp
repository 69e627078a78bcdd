#include "windformer/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "windformer/errors.hpp"

namespace windformer {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

inline size_t zu(int64_t v) { return static_cast<size_t>(v); }

std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(zu(s.rank()), 1);
    for (int64_t i = s.rank() - 2; i >= 0; --i) st[zu(i)] = st[zu(i + 1)] * s[i + 1];
    return st;
}

// true if b's shape equals the trailing suffix of a's
bool is_suffix(const Shape& a, const Shape& b) {
    if (b.rank() > a.rank()) return false;
    int64_t off = a.rank() - b.rank();
    for (int64_t i = 0; i < b.rank(); ++i)
        if (a[off + i] != b[i]) return false;
    return true;
}

void check_axis(const Shape& s, int64_t axis, const char* op) {
    if (axis < 0 || axis >= s.rank())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + s.str());
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

ValuePtr add(const ValuePtr& a, const ValuePtr& b) {
    if (!is_suffix(a->shape, b->shape))
        throw ShapeError("add: shape " + b->shape.str() + " is not a suffix of " +
                         a->shape.str());
    auto out = Value::make(a->shape, {a, b}, "add");
    const int64_t n = a->numel(), bn = b->numel();
    for (int64_t i = 0; i < n; ++i) out->data[zu(i)] = a->data[zu(i)] + b->data[zu(i % bn)];
    Value* ap = a.get();
    Value* bp = b.get();
    out->backward_fn = [ap, bp, n, bn](const Value& self) {
        const auto& g = self.grad_view();
        if (ap->needs_grad) {
            auto& ga = ap->grad();
            for (int64_t i = 0; i < n; ++i) ga[zu(i)] += g[zu(i)];
        }
        if (bp->needs_grad) {
            auto& gb = bp->grad();
            for (int64_t i = 0; i < n; ++i) gb[zu(i % bn)] += g[zu(i)];
        }
    };
    return out;
}

ValuePtr mul(const ValuePtr& a, const ValuePtr& b) {
    if (!is_suffix(a->shape, b->shape))
        throw ShapeError("mul: shape " + b->shape.str() + " is not a suffix of " +
                         a->shape.str());
    auto out = Value::make(a->shape, {a, b}, "mul");
    const int64_t n = a->numel(), bn = b->numel();
    for (int64_t i = 0; i < n; ++i) out->data[zu(i)] = a->data[zu(i)] * b->data[zu(i % bn)];
    Value* ap = a.get();
    Value* bp = b.get();
    out->backward_fn = [ap, bp, n, bn](const Value& self) {
        const auto& g = self.grad_view();
        if (ap->needs_grad) {
            auto& ga = ap->grad();
            for (int64_t i = 0; i < n; ++i) ga[zu(i)] += g[zu(i)] * bp->data[zu(i % bn)];
        }
        if (bp->needs_grad) {
            auto& gb = bp->grad();
            for (int64_t i = 0; i < n; ++i) gb[zu(i % bn)] += g[zu(i)] * ap->data[zu(i)];
        }
    };
    return out;
}

ValuePtr scale(const ValuePtr& a, double s) {
    auto out = Value::make(a->shape, {a}, "scale");
    const int64_t n = a->numel();
    for (int64_t i = 0; i < n; ++i) out->data[zu(i)] = a->data[zu(i)] * s;
    Value* ap = a.get();
    out->backward_fn = [ap, s, n](const Value& self) {
        if (!ap->needs_grad) return;
        const auto& g = self.grad_view();
        auto& ga = ap->grad();
        for (int64_t i = 0; i < n; ++i) ga[zu(i)] += g[zu(i)] * s;
    };
    return out;
}

ValuePtr add_scalar(const ValuePtr& a, double s) {
    auto out = Value::make(a->shape, {a}, "add_scalar");
    const int64_t n = a->numel();
    for (int64_t i = 0; i < n; ++i) out->data[zu(i)] = a->data[zu(i)] + s;
    Value* ap = a.get();
    out->backward_fn = [ap, n](const Value& self) {
        if (!ap->needs_grad) return;
        const auto& g = self.grad_view();
        auto& ga = ap->grad();
        for (int64_t i = 0; i < n; ++i) ga[zu(i)] += g[zu(i)];
    };
    return out;
}

ValuePtr relu(const ValuePtr& a) {
    auto out = Value::make(a->shape, {a}, "relu");
    const int64_t n = a->numel();
    for (int64_t i = 0; i < n; ++i) out->data[zu(i)] = a->data[zu(i)] > 0.0 ? a->data[zu(i)] : 0.0;
    Value* ap = a.get();
    out->backward_fn = [ap, n](const Value& self) {
        if (!ap->needs_grad) return;
        const auto& g = self.grad_view();
        auto& ga = ap->grad();
        for (int64_t i = 0; i < n; ++i)
            if (ap->data[zu(i)] > 0.0) ga[zu(i)] += g[zu(i)];
    };
    return out;
}

ValuePtr gelu(const ValuePtr& a) {
    auto out = Value::make(a->shape, {a}, "gelu");
    const int64_t n = a->numel();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (int64_t i = 0; i < n; ++i) {
        double x = a->data[zu(i)];
        out->data[zu(i)] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    Value* ap = a.get();
    out->backward_fn = [ap, n](const Value& self) {
        if (!ap->needs_grad) return;
        const auto& g = self.grad_view();
        auto& ga = ap->grad();
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        for (int64_t i = 0; i < n; ++i) {
            double x = ap->data[zu(i)];
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            ga[zu(i)] += g[zu(i)] * (cdf + x * pdf);
        }
    };
    return out;
}

ValuePtr activate(const ValuePtr& a, Activation act) {
    return act == Activation::Relu ? relu(a) : gelu(a);
}

// ---------------------------------------------------------------------------
// structural
// ---------------------------------------------------------------------------

ValuePtr transpose(const ValuePtr& a, int64_t axis_i, int64_t axis_j) {
    check_axis(a->shape, axis_i, "transpose");
    check_axis(a->shape, axis_j, "transpose");
    auto dims = a->shape.dims;
    std::swap(dims[zu(axis_i)], dims[zu(axis_j)]);
    Shape out_shape(dims);
    auto out = Value::make(out_shape, {a}, "transpose");

    const auto in_strides = strides_of(a->shape);
    // source stride for each axis of the output coordinate system
    std::vector<int64_t> src_stride = in_strides;
    std::swap(src_stride[zu(axis_i)], src_stride[zu(axis_j)]);

    const int64_t rank = out_shape.rank();
    const int64_t n = out_shape.numel();
    auto permuted_copy = [rank, n, out_shape, src_stride](const double* src, double* dst,
                                                          bool accumulate) {
        std::vector<int64_t> coord(zu(rank), 0);
        int64_t src_off = 0;
        for (int64_t li = 0; li < n; ++li) {
            if (accumulate)
                dst[zu(src_off)] += src[zu(li)];
            else
                dst[zu(li)] = src[zu(src_off)];
            // advance mixed-radix counter over output coords
            for (int64_t ax = rank - 1; ax >= 0; --ax) {
                coord[zu(ax)]++;
                src_off += src_stride[zu(ax)];
                if (coord[zu(ax)] < out_shape[ax]) break;
                src_off -= src_stride[zu(ax)] * out_shape[ax];
                coord[zu(ax)] = 0;
            }
        }
    };
    permuted_copy(a->data.data(), out->data.data(), false);

    Value* ap = a.get();
    out->backward_fn = [ap, permuted_copy](const Value& self) {
        if (!ap->needs_grad) return;
        // scatter: grad flows through the inverse permutation
        permuted_copy(self.grad_view().data(), ap->grad().data(), true);
    };
    return out;
}

ValuePtr reshape(const ValuePtr& a, Shape s) {
    if (s.numel() != a->numel())
        throw ShapeError("reshape: cannot view " + a->shape.str() + " as " + s.str());
    auto out = Value::make(std::move(s), {a}, "reshape");
    out->data = a->data;
    Value* ap = a.get();
    const int64_t n = a->numel();
    out->backward_fn = [ap, n](const Value& self) {
        if (!ap->needs_grad) return;
        const auto& g = self.grad_view();
        auto& ga = ap->grad();
        for (int64_t i = 0; i < n; ++i) ga[zu(i)] += g[zu(i)];
    };
    return out;
}

ValuePtr concat(const std::vector<ValuePtr>& xs, int64_t axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const Shape& first = xs[0]->shape;
    check_axis(first, axis, "concat");
    int64_t joined = 0;
    for (const auto& x : xs) {
        if (x->shape.rank() != first.rank())
            throw ShapeError("concat: rank mismatch between " + first.str() + " and " +
                             x->shape.str());
        for (int64_t i = 0; i < first.rank(); ++i)
            if (i != axis && x->shape[i] != first[i])
                throw ShapeError("concat: extent mismatch on non-joined axis " +
                                 std::to_string(i) + ": " + first.str() + " vs " +
                                 x->shape.str());
        joined += x->shape[axis];
    }
    auto dims = first.dims;
    dims[zu(axis)] = joined;
    auto out = Value::make(Shape(dims), xs, "concat");

    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= first[i];
    for (int64_t i = axis + 1; i < first.rank(); ++i) inner *= first[i];

    const int64_t out_block = joined * inner;
    int64_t offset = 0;
    for (const auto& x : xs) {
        const int64_t in_block = x->shape[axis] * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out->data.data() + o * out_block + offset,
                        x->data.data() + o * in_block, zu(in_block) * sizeof(double));
        offset += in_block;
    }

    std::vector<Value*> raw;
    std::vector<int64_t> blocks;
    for (const auto& x : xs) {
        raw.push_back(x.get());
        blocks.push_back(x->shape[axis] * inner);
    }
    out->backward_fn = [raw, blocks, outer, out_block](const Value& self) {
        const auto& g = self.grad_view();
        int64_t offset = 0;
        for (size_t k = 0; k < raw.size(); ++k) {
            if (raw[k]->needs_grad) {
                auto& gp = raw[k]->grad();
                for (int64_t o = 0; o < outer; ++o) {
                    const double* src = g.data() + o * out_block + offset;
                    double* dst = gp.data() + o * blocks[k];
                    for (int64_t i = 0; i < blocks[k]; ++i) dst[zu(i)] += src[zu(i)];
                }
            }
            offset += blocks[k];
        }
    };
    return out;
}

ValuePtr slice(const ValuePtr& a, int64_t axis, int64_t start, int64_t len) {
    check_axis(a->shape, axis, "slice");
    if (start < 0 || len < 1 || start + len > a->shape[axis])
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for axis " +
                         std::to_string(axis) + " of " + a->shape.str());
    auto dims = a->shape.dims;
    dims[zu(axis)] = len;
    auto out = Value::make(Shape(dims), {a}, "slice");

    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= a->shape[i];
    for (int64_t i = axis + 1; i < a->shape.rank(); ++i) inner *= a->shape[i];
    const int64_t in_block = a->shape[axis] * inner;
    const int64_t out_block = len * inner;
    const int64_t skip = start * inner;

    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out->data.data() + o * out_block, a->data.data() + o * in_block + skip,
                    zu(out_block) * sizeof(double));

    Value* ap = a.get();
    out->backward_fn = [ap, outer, in_block, out_block, skip](const Value& self) {
        if (!ap->needs_grad) return;
        const auto& g = self.grad_view();
        auto& ga = ap->grad();
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = g.data() + o * out_block;
            double* dst = ga.data() + o * in_block + skip;
            for (int64_t i = 0; i < out_block; ++i) dst[zu(i)] += src[zu(i)];
        }
    };
    return out;
}

ValuePtr repeat_axis(const ValuePtr& a, int64_t axis, int64_t n) {
    check_axis(a->shape, axis, "repeat_axis");
    if (a->shape[axis] != 1)
        throw ShapeError("repeat_axis: axis " + std::to_string(axis) +
                         " must have extent 1 in " + a->shape.str());
    if (n < 1) throw ShapeError("repeat_axis: repeat count must be >= 1");
    auto dims = a->shape.dims;
    dims[zu(axis)] = n;
    auto out = Value::make(Shape(dims), {a}, "repeat_axis");

    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= a->shape[i];
    for (int64_t i = axis + 1; i < a->shape.rank(); ++i) inner *= a->shape[i];

    for (int64_t o = 0; o < outer; ++o)
        for (int64_t r = 0; r < n; ++r)
            std::memcpy(out->data.data() + (o * n + r) * inner, a->data.data() + o * inner,
                        zu(inner) * sizeof(double));

    Value* ap = a.get();
    out->backward_fn = [ap, outer, inner, n](const Value& self) {
        if (!ap->needs_grad) return;
        const auto& g = self.grad_view();
        auto& ga = ap->grad();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t r = 0; r < n; ++r) {
                const double* src = g.data() + (o * n + r) * inner;
                double* dst = ga.data() + o * inner;
                for (int64_t i = 0; i < inner; ++i) dst[zu(i)] += src[zu(i)];
            }
    };
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

ValuePtr reduce_sum(const ValuePtr& a) {
    auto out = Value::make(Shape{1}, {a}, "reduce_sum");
    double acc = 0.0;
    for (double v : a->data) acc += v;
    out->data[0] = acc;
    Value* ap = a.get();
    const int64_t n = a->numel();
    out->backward_fn = [ap, n](const Value& self) {
        if (!ap->needs_grad) return;
        const double g = self.grad_view()[0];
        auto& ga = ap->grad();
        for (int64_t i = 0; i < n; ++i) ga[zu(i)] += g;
    };
    return out;
}

ValuePtr reduce_mean(const ValuePtr& a) {
    auto out = Value::make(Shape{1}, {a}, "reduce_mean");
    double acc = 0.0;
    for (double v : a->data) acc += v;
    const int64_t n = a->numel();
    out->data[0] = acc / static_cast<double>(n);
    Value* ap = a.get();
    out->backward_fn = [ap, n](const Value& self) {
        if (!ap->needs_grad) return;
        const double g = self.grad_view()[0] / static_cast<double>(n);
        auto& ga = ap->grad();
        for (int64_t i = 0; i < n; ++i) ga[zu(i)] += g;
    };
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

ValuePtr matmul(const ValuePtr& a, const ValuePtr& b) {
    const Shape& sa = a->shape;
    const Shape& sb = b->shape;
    if (sa.rank() < 2 || sb.rank() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + sa.str() + " and " +
                         sb.str());
    const bool shared_b = sb.rank() == 2 && sa.rank() > 2;
    if (!shared_b && sa.rank() != sb.rank())
        throw ShapeError("matmul: rank mismatch between " + sa.str() + " and " + sb.str());
    const int64_t m = sa[sa.rank() - 2];
    const int64_t k = sa[sa.rank() - 1];
    const int64_t kb = sb[sb.rank() - 2];
    const int64_t n = sb[sb.rank() - 1];
    if (k != kb)
        throw ShapeError("matmul: inner extents differ, " + sa.str() + " x " + sb.str());
    int64_t batch = 1;
    for (int64_t i = 0; i < sa.rank() - 2; ++i) {
        batch *= sa[i];
        if (!shared_b && sa[i] != sb[i])
            throw ShapeError("matmul: leading extents differ, " + sa.str() + " x " + sb.str());
    }

    auto dims = sa.dims;
    dims[zu(sa.rank() - 1)] = n;
    auto out = Value::make(Shape(dims), {a, b}, "matmul");

    const double* ad = a->data.data();
    const double* bd = b->data.data();
    double* cd = out->data.data();
    for (int64_t s = 0; s < batch; ++s) {
        MapConst A(ad + s * m * k, m, k);
        MapConst B(bd + (shared_b ? 0 : s * k * n), k, n);
        MapMat C(cd + s * m * n, m, n);
        C.noalias() = A * B;
    }

    Value* ap = a.get();
    Value* bp = b.get();
    out->backward_fn = [ap, bp, batch, m, k, n, shared_b](const Value& self) {
        const double* g = self.grad_view().data();
        if (ap->needs_grad) {
            double* ga = ap->grad().data();
            for (int64_t s = 0; s < batch; ++s) {
                MapConst G(g + s * m * n, m, n);
                MapConst B(bp->data.data() + (shared_b ? 0 : s * k * n), k, n);
                MapMat GA(ga + s * m * k, m, k);
                GA.noalias() += G * B.transpose();
            }
        }
        if (bp->needs_grad) {
            double* gb = bp->grad().data();
            for (int64_t s = 0; s < batch; ++s) {
                MapConst G(g + s * m * n, m, n);
                MapConst A(ap->data.data() + s * m * k, m, k);
                MapMat GB(gb + (shared_b ? 0 : s * k * n), k, n);
                GB.noalias() += A.transpose() * G;
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

ValuePtr softmax_lastdim(const ValuePtr& a) {
    const int64_t d = a->shape[a->shape.rank() - 1];
    const int64_t rows = a->numel() / d;
    auto out = Value::make(a->shape, {a}, "softmax");
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a->data.data() + r * d;
        double* y = out->data.data() + r * d;
        double mx = x[0];
        for (int64_t i = 1; i < d; ++i) mx = std::max(mx, x[zu(i)]);
        double sum = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            y[zu(i)] = std::exp(x[zu(i)] - mx);
            sum += y[zu(i)];
        }
        const double inv = 1.0 / sum;
        for (int64_t i = 0; i < d; ++i) y[zu(i)] *= inv;
    }
    Value* ap = a.get();
    out->backward_fn = [ap, rows, d](const Value& self) {
        if (!ap->needs_grad) return;
        const auto& g = self.grad_view();
        auto& ga = ap->grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* s = self.data.data() + r * d;
            const double* gr = g.data() + r * d;
            double* gx = ga.data() + r * d;
            double dot = 0.0;
            for (int64_t i = 0; i < d; ++i) dot += gr[zu(i)] * s[zu(i)];
            for (int64_t i = 0; i < d; ++i) gx[zu(i)] += s[zu(i)] * (gr[zu(i)] - dot);
        }
    };
    return out;
}

ValuePtr layer_norm(const ValuePtr& x, const ValuePtr& gamma, const ValuePtr& beta,
                    double eps) {
    if (eps <= 0.0) throw NumericError("layer_norm: eps must be > 0");
    const int64_t d = x->shape[x->shape.rank() - 1];
    if (gamma->shape != Shape{d} || beta->shape != Shape{d})
        throw ShapeError("layer_norm: gamma/beta must have shape [" + std::to_string(d) +
                         "], got " + gamma->shape.str() + " and " + beta->shape.str());
    const int64_t rows = x->numel() / d;
    auto out = Value::make(x->shape, {x, gamma, beta}, "layer_norm");

    // cache normalized values and 1/std per row for the backward pass
    std::vector<double> norm(zu(x->numel()));
    std::vector<double> inv_std(zu(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x->data.data() + r * d;
        double mean = 0.0;
        for (int64_t i = 0; i < d; ++i) mean += xr[zu(i)];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double c = xr[zu(i)] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[zu(r)] = istd;
        double* nr = norm.data() + r * d;
        double* yr = out->data.data() + r * d;
        for (int64_t i = 0; i < d; ++i) {
            nr[zu(i)] = (xr[zu(i)] - mean) * istd;
            yr[zu(i)] = gamma->data[zu(i)] * nr[zu(i)] + beta->data[zu(i)];
        }
    }

    Value* xp = x.get();
    Value* gp = gamma.get();
    Value* bp = beta.get();
    out->backward_fn = [xp, gp, bp, rows, d, norm = std::move(norm),
                        inv_std = std::move(inv_std)](const Value& self) {
        const auto& g = self.grad_view();
        for (int64_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * d;
            const double* nr = norm.data() + r * d;
            if (gp->needs_grad) {
                auto& gg = gp->grad();
                for (int64_t i = 0; i < d; ++i) gg[zu(i)] += gr[zu(i)] * nr[zu(i)];
            }
            if (bp->needs_grad) {
                auto& gb = bp->grad();
                for (int64_t i = 0; i < d; ++i) gb[zu(i)] += gr[zu(i)];
            }
            if (xp->needs_grad) {
                // dx = istd * (h - mean(h) - y * mean(h*y)), h = gamma .* dL/dy
                double mean_h = 0.0, mean_hy = 0.0;
                for (int64_t i = 0; i < d; ++i) {
                    double h = gr[zu(i)] * gp->data[zu(i)];
                    mean_h += h;
                    mean_hy += h * nr[zu(i)];
                }
                mean_h /= static_cast<double>(d);
                mean_hy /= static_cast<double>(d);
                auto& gx = xp->grad();
                double* gxr = gx.data() + r * d;
                for (int64_t i = 0; i < d; ++i) {
                    double h = gr[zu(i)] * gp->data[zu(i)];
                    gxr[zu(i)] += inv_std[zu(r)] * (h - mean_h - nr[zu(i)] * mean_hy);
                }
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// lookup
// ---------------------------------------------------------------------------

ValuePtr embedding_lookup(const ValuePtr& table, const std::vector<int64_t>& idx,
                          const Shape& idx_shape, const char* table_name) {
    if (table->shape.rank() != 2)
        throw ShapeError("embedding_lookup: table must be rank 2, got " + table->shape.str());
    const int64_t rows = table->shape[0];
    const int64_t width = table->shape[1];
    if (static_cast<int64_t>(idx.size()) != idx_shape.numel())
        throw ShapeError("embedding_lookup: index count does not match index shape");
    for (int64_t i : idx)
        if (i < 0 || i >= rows)
            throw DataError("embedding_lookup: index " + std::to_string(i) +
                            " out of range [0, " + std::to_string(rows) + ") for table " +
                            table_name);
    auto dims = idx_shape.dims;
    dims.push_back(width);
    auto out = Value::make(Shape(dims), {table}, "embedding_lookup");
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(out->data.data() + static_cast<int64_t>(r) * width,
                    table->data.data() + idx[r] * width, zu(width) * sizeof(double));

    Value* tp = table.get();
    out->backward_fn = [tp, idx, width](const Value& self) {
        if (!tp->needs_grad) return;
        const auto& g = self.grad_view();
        auto& gt = tp->grad();
        for (size_t r = 0; r < idx.size(); ++r) {
            const double* src = g.data() + static_cast<int64_t>(r) * width;
            double* dst = gt.data() + idx[r] * width;
            for (int64_t i = 0; i < width; ++i) dst[zu(i)] += src[zu(i)];
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

ValuePtr smooth_l1(const ValuePtr& pred, const std::vector<double>& target) {
    if (static_cast<int64_t>(target.size()) != pred->numel())
        throw ShapeError("smooth_l1: target size " + std::to_string(target.size()) +
                         " does not match prediction shape " + pred->shape.str());
    auto out = Value::make(Shape{1}, {pred}, "smooth_l1");
    const int64_t n = pred->numel();
    std::vector<double> err(zu(n));
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double e = pred->data[zu(i)] - target[zu(i)];
        err[zu(i)] = e;
        double ae = std::abs(e);
        acc += ae < 1.0 ? 0.5 * e * e : ae - 0.5;
    }
    out->data[0] = acc / static_cast<double>(n);

    Value* pp = pred.get();
    out->backward_fn = [pp, n, err = std::move(err)](const Value& self) {
        if (!pp->needs_grad) return;
        const double g = self.grad_view()[0] / static_cast<double>(n);
        auto& gp = pp->grad();
        for (int64_t i = 0; i < n; ++i) {
            double e = err[zu(i)];
            double de = e < -1.0 ? -1.0 : (e > 1.0 ? 1.0 : e);
            gp[zu(i)] += g * de;
        }
    };
    return out;
}

}  // namespace windformer
