#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mm/error.hpp"

namespace mm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) {
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    if (s.empty()) {
        return "scalar";
    }
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) {
            out += 'x';
        }
        out += std::to_string(s[i]);
    }
    return out;
}

// Dense row-major tensor. grad is sized like data iff requires_grad.
template <typename S>
struct Tensor {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;
    bool requires_grad = false;
    bool is_leaf = true; // op outputs are non-leaves; their grads reset per backward pass

    Tensor(Shape sh, bool req) : shape(std::move(sh)), requires_grad(req) {
        data.assign(shape_numel(shape), S(0));
        if (requires_grad) {
            grad.assign(data.size(), S(0));
        }
    }

    std::size_t numel() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }

    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), S(0));
        }
    }

    void zero_grad() {
        std::fill(grad.begin(), grad.end(), S(0));
    }
};

template <typename S>
using TensorPtr = std::shared_ptr<Tensor<S>>;

template <typename S>
TensorPtr<S> make_tensor(Shape shape, bool requires_grad = false) {
    return std::make_shared<Tensor<S>>(std::move(shape), requires_grad);
}

template <typename S>
TensorPtr<S> make_tensor(Shape shape, std::vector<S> values, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<S>>(std::move(shape), requires_grad);
    if (values.size() != t->numel()) {
        fail(ErrCode::shape, "tensor init: " + std::to_string(values.size()) + " values for shape " +
                                 shape_str(t->shape));
    }
    t->data = std::move(values);
    return t;
}

// Records one closure per forward op, in execution order; backward replays in
// reverse, so inputs always precede their consumers. Confine a tape to one
// worker thread.
template <typename S>
class Tape {
public:
    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    void record(const TensorPtr<S>& out, std::function<void()> fn) {
        nodes_.push_back(std::move(fn));
        outputs_.push_back(out);
    }

    // Populates d(loss)/d(leaf) for every requires_grad leaf reachable from
    // loss. Leaf gradients accumulate across calls; intermediate gradients are
    // reset each pass.
    void backward(const TensorPtr<S>& loss) {
        if (loss->numel() != 1) {
            fail(ErrCode::shape, "backward: loss must be scalar, got " + shape_str(loss->shape));
        }
        for (auto& t : outputs_) {
            if (!t->grad.empty()) {
                t->zero_grad();
            }
        }
        loss->ensure_grad();
        loss->grad[0] = S(1);
        for (std::size_t i = nodes_.size(); i > 0; --i) {
            nodes_[i - 1]();
        }
    }

    void clear() {
        nodes_.clear();
        outputs_.clear();
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<std::function<void()>> nodes_;
    std::vector<TensorPtr<S>> outputs_;
    bool recording_ = true;
};

namespace detail {

template <typename S>
TensorPtr<S> op_output(Tape<S>& tape, Shape shape, bool needs_grad) {
    auto out = make_tensor<S>(std::move(shape), false);
    out->is_leaf = false;
    out->requires_grad = needs_grad && tape.recording();
    if (out->requires_grad) {
        out->ensure_grad();
    }
    return out;
}

template <typename S>
void require_2d(const TensorPtr<S>& t, const char* op) {
    if (t->shape.size() != 2) {
        fail(ErrCode::shape, std::string(op) + ": expected 2-d tensor, got " + shape_str(t->shape));
    }
}

template <typename S>
void require_chw(const TensorPtr<S>& t, const char* op) {
    if (t->shape.size() != 3) {
        fail(ErrCode::shape, std::string(op) + ": expected CxHxW tensor, got " + shape_str(t->shape));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise and structural ops

template <typename S>
TensorPtr<S> add(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->shape != b->shape) {
        fail(ErrCode::shape, "add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    auto out = detail::op_output(tape, a->shape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < out->numel(); ++i) {
        out->data[i] = a->data[i] + b->data[i];
    }
    if (out->requires_grad) {
        tape.record(out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->numel(); ++i) {
                    a->grad[i] += out->grad[i];
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < out->numel(); ++i) {
                    b->grad[i] += out->grad[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> mul(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->shape != b->shape) {
        fail(ErrCode::shape, "mul: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    auto out = detail::op_output(tape, a->shape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < out->numel(); ++i) {
        out->data[i] = a->data[i] * b->data[i];
    }
    if (out->requires_grad) {
        tape.record(out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->numel(); ++i) {
                    a->grad[i] += out->grad[i] * b->data[i];
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < out->numel(); ++i) {
                    b->grad[i] += out->grad[i] * a->data[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> neg(Tape<S>& tape, const TensorPtr<S>& x) {
    auto out = detail::op_output(tape, x->shape, x->requires_grad);
    for (std::size_t i = 0; i < out->numel(); ++i) {
        out->data[i] = -x->data[i];
    }
    if (out->requires_grad) {
        tape.record(out, [x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < out->numel(); ++i) {
                x->grad[i] -= out->grad[i];
            }
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> scale(Tape<S>& tape, const TensorPtr<S>& x, S factor) {
    auto out = detail::op_output(tape, x->shape, x->requires_grad);
    for (std::size_t i = 0; i < out->numel(); ++i) {
        out->data[i] = x->data[i] * factor;
    }
    if (out->requires_grad) {
        tape.record(out, [x, out, factor] {
            x->ensure_grad();
            for (std::size_t i = 0; i < out->numel(); ++i) {
                x->grad[i] += out->grad[i] * factor;
            }
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> relu(Tape<S>& tape, const TensorPtr<S>& x) {
    auto out = detail::op_output(tape, x->shape, x->requires_grad);
    for (std::size_t i = 0; i < out->numel(); ++i) {
        out->data[i] = x->data[i] > S(0) ? x->data[i] : S(0);
    }
    if (out->requires_grad) {
        // subgradient 0 at x == 0
        tape.record(out, [x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < out->numel(); ++i) {
                if (x->data[i] > S(0)) {
                    x->grad[i] += out->grad[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> sigmoid(Tape<S>& tape, const TensorPtr<S>& x) {
    auto out = detail::op_output(tape, x->shape, x->requires_grad);
    for (std::size_t i = 0; i < out->numel(); ++i) {
        out->data[i] = S(1) / (S(1) + std::exp(-x->data[i]));
    }
    if (out->requires_grad) {
        tape.record(out, [x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < out->numel(); ++i) {
                const S y = out->data[i];
                x->grad[i] += out->grad[i] * y * (S(1) - y);
            }
        });
    }
    return out;
}

// Identity with a new shape (same element count, row-major order preserved).
template <typename S>
TensorPtr<S> reshape(Tape<S>& tape, const TensorPtr<S>& x, Shape shape) {
    if (shape_numel(shape) != x->numel()) {
        fail(ErrCode::shape,
             "reshape: " + shape_str(x->shape) + " cannot view as " + shape_str(shape));
    }
    auto out = detail::op_output(tape, std::move(shape), x->requires_grad);
    out->data = x->data;
    if (out->requires_grad) {
        tape.record(out, [x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < out->numel(); ++i) {
                x->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matrix ops

template <typename S>
TensorPtr<S> matmul(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    if (a->dim(1) != b->dim(0)) {
        fail(ErrCode::shape,
             "matmul: inner extents disagree: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    const std::size_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
    auto out = detail::op_output(tape, {m, n}, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const S av = a->data[i * k + l];
            for (std::size_t j = 0; j < n; ++j) {
                out->data[i * n + j] += av * b->data[l * n + j];
            }
        }
    }
    if (out->requires_grad) {
        tape.record(out, [a, b, out, m, k, n] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t l = 0; l < k; ++l) {
                        S acc = 0;
                        for (std::size_t j = 0; j < n; ++j) {
                            acc += out->grad[i * n + j] * b->data[l * n + j];
                        }
                        a->grad[i * k + l] += acc;
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t l = 0; l < k; ++l) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const S av = a->data[i * k + l];
                        for (std::size_t j = 0; j < n; ++j) {
                            b->grad[l * n + j] += av * out->grad[i * n + j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// a [m x k] times b-transposed, b given as [n x k]
template <typename S>
TensorPtr<S> matmul_nt(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    detail::require_2d(a, "matmul_nt");
    detail::require_2d(b, "matmul_nt");
    if (a->dim(1) != b->dim(1)) {
        fail(ErrCode::shape,
             "matmul_nt: inner extents disagree: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    }
    const std::size_t m = a->dim(0), k = a->dim(1), n = b->dim(0);
    auto out = detail::op_output(tape, {m, n}, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            S acc = 0;
            for (std::size_t l = 0; l < k; ++l) {
                acc += a->data[i * k + l] * b->data[j * k + l];
            }
            out->data[i * n + j] = acc;
        }
    }
    if (out->requires_grad) {
        tape.record(out, [a, b, out, m, k, n] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        const S g = out->grad[i * n + j];
                        for (std::size_t l = 0; l < k; ++l) {
                            a->grad[i * k + l] += g * b->data[j * k + l];
                        }
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t j = 0; j < n; ++j) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const S g = out->grad[i * n + j];
                        for (std::size_t l = 0; l < k; ++l) {
                            b->grad[j * k + l] += g * a->data[i * k + l];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Row-stable softmax over the last axis of an [m x n] tensor.
template <typename S>
TensorPtr<S> softmax_rows(Tape<S>& tape, const TensorPtr<S>& x) {
    detail::require_2d(x, "softmax_rows");
    const std::size_t m = x->dim(0), n = x->dim(1);
    if (n == 0) {
        fail(ErrCode::shape, "softmax_rows: empty rows");
    }
    auto out = detail::op_output(tape, x->shape, x->requires_grad);
    for (std::size_t i = 0; i < m; ++i) {
        const S* row = &x->data[i * n];
        S mx = row[0];
        for (std::size_t j = 1; j < n; ++j) {
            mx = std::max(mx, row[j]);
        }
        S sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const S e = std::exp(row[j] - mx);
            out->data[i * n + j] = e;
            sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) {
            out->data[i * n + j] /= sum;
        }
    }
    if (out->requires_grad) {
        tape.record(out, [x, out, m, n] {
            x->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                S dot = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    dot += out->grad[i * n + j] * out->data[i * n + j];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    x->grad[i * n + j] += out->data[i * n + j] * (out->grad[i * n + j] - dot);
                }
            }
        });
    }
    return out;
}

// x [L x D] plus a [1 x D] row vector broadcast over rows
template <typename S>
TensorPtr<S> add_rowvec(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& v) {
    detail::require_2d(x, "add_rowvec");
    if (v->shape != Shape{1, x->dim(1)}) {
        fail(ErrCode::shape,
             "add_rowvec: vector " + shape_str(v->shape) + " does not match " + shape_str(x->shape));
    }
    const std::size_t rows = x->dim(0), cols = x->dim(1);
    auto out = detail::op_output(tape, x->shape, x->requires_grad || v->requires_grad);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out->data[i * cols + j] = x->data[i * cols + j] + v->data[j];
        }
    }
    if (out->requires_grad) {
        tape.record(out, [x, v, out, rows, cols] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t i = 0; i < out->numel(); ++i) {
                    x->grad[i] += out->grad[i];
                }
            }
            if (v->requires_grad) {
                v->ensure_grad();
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        v->grad[j] += out->grad[i * cols + j];
                    }
                }
            }
        });
    }
    return out;
}

// x [L x D] scaled per column by a [1 x D] row vector
template <typename S>
TensorPtr<S> mul_rowvec(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& v) {
    detail::require_2d(x, "mul_rowvec");
    if (v->shape != Shape{1, x->dim(1)}) {
        fail(ErrCode::shape,
             "mul_rowvec: vector " + shape_str(v->shape) + " does not match " + shape_str(x->shape));
    }
    const std::size_t rows = x->dim(0), cols = x->dim(1);
    auto out = detail::op_output(tape, x->shape, x->requires_grad || v->requires_grad);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out->data[i * cols + j] = x->data[i * cols + j] * v->data[j];
        }
    }
    if (out->requires_grad) {
        tape.record(out, [x, v, out, rows, cols] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        x->grad[i * cols + j] += out->grad[i * cols + j] * v->data[j];
                    }
                }
            }
            if (v->requires_grad) {
                v->ensure_grad();
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        v->grad[j] += out->grad[i * cols + j] * x->data[i * cols + j];
                    }
                }
            }
        });
    }
    return out;
}

// Mean of the selected rows of x [L x D] as a [1 x D] tensor.
template <typename S>
TensorPtr<S> mean_rows(Tape<S>& tape, const TensorPtr<S>& x, std::vector<std::size_t> rows) {
    detail::require_2d(x, "mean_rows");
    if (rows.empty()) {
        fail(ErrCode::shape, "mean_rows: empty row selection");
    }
    const std::size_t cols = x->dim(1);
    for (auto r : rows) {
        if (r >= x->dim(0)) {
            fail(ErrCode::shape, "mean_rows: row " + std::to_string(r) + " out of range for " +
                                     shape_str(x->shape));
        }
    }
    auto out = detail::op_output(tape, {std::size_t(1), cols}, x->requires_grad);
    const S inv = S(1) / S(rows.size());
    for (auto r : rows) {
        for (std::size_t j = 0; j < cols; ++j) {
            out->data[j] += x->data[r * cols + j] * inv;
        }
    }
    if (out->requires_grad) {
        tape.record(out, [x, out, rows = std::move(rows), cols, inv] {
            x->ensure_grad();
            for (auto r : rows) {
                for (std::size_t j = 0; j < cols; ++j) {
                    x->grad[r * cols + j] += out->grad[j] * inv;
                }
            }
        });
    }
    return out;
}

// Row t of x [T x D] as a [1 x D] tensor.
template <typename S>
TensorPtr<S> slice_row(Tape<S>& tape, const TensorPtr<S>& x, std::size_t t) {
    detail::require_2d(x, "slice_row");
    if (t >= x->dim(0)) {
        fail(ErrCode::shape, "slice_row: row " + std::to_string(t) + " out of range for " +
                                 shape_str(x->shape));
    }
    const std::size_t cols = x->dim(1);
    auto out = detail::op_output(tape, {std::size_t(1), cols}, x->requires_grad);
    std::copy_n(&x->data[t * cols], cols, out->data.begin());
    if (out->requires_grad) {
        tape.record(out, [x, out, t, cols] {
            x->ensure_grad();
            for (std::size_t j = 0; j < cols; ++j) {
                x->grad[t * cols + j] += out->grad[j];
            }
        });
    }
    return out;
}

// Stack [1 x C] tensors into a [B x C] matrix.
template <typename S>
TensorPtr<S> concat_rows(Tape<S>& tape, const std::vector<TensorPtr<S>>& parts) {
    if (parts.empty()) {
        fail(ErrCode::shape, "concat_rows: no inputs");
    }
    const std::size_t cols = parts[0]->dim(1);
    bool needs = false;
    for (const auto& p : parts) {
        detail::require_2d(p, "concat_rows");
        if (p->dim(0) != 1 || p->dim(1) != cols) {
            fail(ErrCode::shape, "concat_rows: row shape mismatch " + shape_str(p->shape));
        }
        needs = needs || p->requires_grad;
    }
    auto out = detail::op_output(tape, {parts.size(), cols}, needs);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        std::copy_n(parts[i]->data.begin(), cols, &out->data[i * cols]);
    }
    if (out->requires_grad) {
        tape.record(out, [parts, out, cols] {
            for (std::size_t i = 0; i < parts.size(); ++i) {
                if (!parts[i]->requires_grad) {
                    continue;
                }
                parts[i]->ensure_grad();
                for (std::size_t j = 0; j < cols; ++j) {
                    parts[i]->grad[j] += out->grad[i * cols + j];
                }
            }
        });
    }
    return out;
}

// Concatenate [L x d_i] tensors along columns into [L x sum(d_i)].
template <typename S>
TensorPtr<S> concat_cols(Tape<S>& tape, const std::vector<TensorPtr<S>>& parts) {
    if (parts.empty()) {
        fail(ErrCode::shape, "concat_cols: no inputs");
    }
    const std::size_t rows = parts[0]->dim(0);
    std::size_t total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        detail::require_2d(p, "concat_cols");
        if (p->dim(0) != rows) {
            fail(ErrCode::shape, "concat_cols: row count mismatch " + shape_str(p->shape));
        }
        total += p->dim(1);
        needs = needs || p->requires_grad;
    }
    auto out = detail::op_output(tape, {rows, total}, needs);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t d = p->dim(1);
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy_n(&p->data[i * d], d, &out->data[i * total + off]);
        }
        off += d;
    }
    if (out->requires_grad) {
        tape.record(out, [parts, out, rows, total] {
            std::size_t off = 0;
            for (const auto& p : parts) {
                const std::size_t d = p->dim(1);
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < rows; ++i) {
                        for (std::size_t j = 0; j < d; ++j) {
                            p->grad[i * d + j] += out->grad[i * total + off + j];
                        }
                    }
                }
                off += d;
            }
        });
    }
    return out;
}

// Concatenate [C_i x H x W] tensors along the channel axis.
template <typename S>
TensorPtr<S> concat_channels(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    detail::require_chw(a, "concat_channels");
    detail::require_chw(b, "concat_channels");
    if (a->dim(1) != b->dim(1) || a->dim(2) != b->dim(2)) {
        fail(ErrCode::shape, "concat_channels: spatial mismatch " + shape_str(a->shape) + " vs " +
                                 shape_str(b->shape));
    }
    auto out = detail::op_output(tape, {a->dim(0) + b->dim(0), a->dim(1), a->dim(2)},
                                 a->requires_grad || b->requires_grad);
    std::copy(a->data.begin(), a->data.end(), out->data.begin());
    std::copy(b->data.begin(), b->data.end(), out->data.begin() + a->numel());
    if (out->requires_grad) {
        tape.record(out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->numel(); ++i) {
                    a->grad[i] += out->grad[i];
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->numel(); ++i) {
                    b->grad[i] += out->grad[a->numel() + i];
                }
            }
        });
    }
    return out;
}

// [C x H x W] -> [(H*W) x C]; row p is the channel vector at spatial index p.
template <typename S>
TensorPtr<S> rows_from_chw(Tape<S>& tape, const TensorPtr<S>& x) {
    detail::require_chw(x, "rows_from_chw");
    const std::size_t c = x->dim(0), hw = x->dim(1) * x->dim(2);
    auto out = detail::op_output(tape, {hw, c}, x->requires_grad);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < hw; ++p) {
            out->data[p * c + ch] = x->data[ch * hw + p];
        }
    }
    if (out->requires_grad) {
        tape.record(out, [x, out, c, hw] {
            x->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t p = 0; p < hw; ++p) {
                    x->grad[ch * hw + p] += out->grad[p * c + ch];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution and morphology primitives

namespace detail {

template <typename S>
void require_odd_kernel(const TensorPtr<S>& w, const char* op) {
    if (w->shape.size() != 3 || w->dim(1) % 2 == 0 || w->dim(2) % 2 == 0) {
        fail(ErrCode::config, std::string(op) + ": kernel extents must be odd, got " + shape_str(w->shape));
    }
}

} // namespace detail

// Per-channel 2-D correlation with zero same-padding, plus per-channel bias.
// x [C x H x W], w [C x kh x kw], bias [C]; no cross-channel mixing.
template <typename S>
TensorPtr<S> depthwise_conv2d(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& w,
                              const TensorPtr<S>& bias) {
    detail::require_chw(x, "depthwise_conv2d");
    detail::require_odd_kernel(w, "depthwise_conv2d");
    if (w->dim(0) != x->dim(0) || bias->shape != Shape{x->dim(0)}) {
        fail(ErrCode::shape, "depthwise_conv2d: channel mismatch x=" + shape_str(x->shape) +
                                 " w=" + shape_str(w->shape) + " bias=" + shape_str(bias->shape));
    }
    const std::size_t c = x->dim(0), h = x->dim(1), wd = x->dim(2);
    const std::size_t kh = w->dim(1), kw = w->dim(2);
    const std::ptrdiff_t ph = kh / 2, pw = kw / 2;
    auto out = detail::op_output(tape, x->shape,
                                 x->requires_grad || w->requires_grad || bias->requires_grad);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const S* xc = &x->data[ch * h * wd];
        const S* wc = &w->data[ch * kh * kw];
        S* oc = &out->data[ch * h * wd];
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x0 = 0; x0 < wd; ++x0) {
                S acc = bias->data[ch];
                for (std::size_t u = 0; u < kh; ++u) {
                    const std::ptrdiff_t iy = std::ptrdiff_t(y) + std::ptrdiff_t(u) - ph;
                    if (iy < 0 || iy >= std::ptrdiff_t(h)) {
                        continue;
                    }
                    for (std::size_t v = 0; v < kw; ++v) {
                        const std::ptrdiff_t ix = std::ptrdiff_t(x0) + std::ptrdiff_t(v) - pw;
                        if (ix < 0 || ix >= std::ptrdiff_t(wd)) {
                            continue;
                        }
                        acc += xc[iy * wd + ix] * wc[u * kw + v];
                    }
                }
                oc[y * wd + x0] = acc;
            }
        }
    }
    if (out->requires_grad) {
        tape.record(out, [x, w, bias, out, c, h, wd, kh, kw, ph, pw] {
            if (x->requires_grad) {
                x->ensure_grad();
            }
            if (w->requires_grad) {
                w->ensure_grad();
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
                const S* xc = &x->data[ch * h * wd];
                const S* wc = &w->data[ch * kh * kw];
                const S* gc = &out->grad[ch * h * wd];
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x0 = 0; x0 < wd; ++x0) {
                        const S g = gc[y * wd + x0];
                        if (bias->requires_grad) {
                            bias->grad[ch] += g;
                        }
                        for (std::size_t u = 0; u < kh; ++u) {
                            const std::ptrdiff_t iy = std::ptrdiff_t(y) + std::ptrdiff_t(u) - ph;
                            if (iy < 0 || iy >= std::ptrdiff_t(h)) {
                                continue;
                            }
                            for (std::size_t v = 0; v < kw; ++v) {
                                const std::ptrdiff_t ix = std::ptrdiff_t(x0) + std::ptrdiff_t(v) - pw;
                                if (ix < 0 || ix >= std::ptrdiff_t(wd)) {
                                    continue;
                                }
                                if (x->requires_grad) {
                                    x->grad[ch * h * wd + iy * wd + ix] += g * wc[u * kw + v];
                                }
                                if (w->requires_grad) {
                                    w->grad[ch * kh * kw + u * kw + v] += g * xc[iy * wd + ix];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Per-pixel linear map across channels: x [C x H x W], w [D x C], bias [D].
template <typename S>
TensorPtr<S> pointwise_conv(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& w,
                            const TensorPtr<S>& bias) {
    detail::require_chw(x, "pointwise_conv");
    detail::require_2d(w, "pointwise_conv");
    if (w->dim(1) != x->dim(0) || bias->shape != Shape{w->dim(0)}) {
        fail(ErrCode::shape, "pointwise_conv: channel mismatch x=" + shape_str(x->shape) +
                                 " w=" + shape_str(w->shape) + " bias=" + shape_str(bias->shape));
    }
    const std::size_t c = x->dim(0), hw = x->dim(1) * x->dim(2), d = w->dim(0);
    auto out = detail::op_output(tape, {d, x->dim(1), x->dim(2)},
                                 x->requires_grad || w->requires_grad || bias->requires_grad);
    for (std::size_t od = 0; od < d; ++od) {
        S* oc = &out->data[od * hw];
        std::fill_n(oc, hw, bias->data[od]);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const S wv = w->data[od * c + ch];
            const S* xc = &x->data[ch * hw];
            for (std::size_t p = 0; p < hw; ++p) {
                oc[p] += wv * xc[p];
            }
        }
    }
    if (out->requires_grad) {
        tape.record(out, [x, w, bias, out, c, hw, d] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t ch = 0; ch < c; ++ch) {
                    for (std::size_t od = 0; od < d; ++od) {
                        const S wv = w->data[od * c + ch];
                        const S* gc = &out->grad[od * hw];
                        for (std::size_t p = 0; p < hw; ++p) {
                            x->grad[ch * hw + p] += wv * gc[p];
                        }
                    }
                }
            }
            if (w->requires_grad) {
                w->ensure_grad();
                for (std::size_t od = 0; od < d; ++od) {
                    const S* gc = &out->grad[od * hw];
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        S acc = 0;
                        const S* xc = &x->data[ch * hw];
                        for (std::size_t p = 0; p < hw; ++p) {
                            acc += gc[p] * xc[p];
                        }
                        w->grad[od * c + ch] += acc;
                    }
                }
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (std::size_t od = 0; od < d; ++od) {
                    const S* gc = &out->grad[od * hw];
                    for (std::size_t p = 0; p < hw; ++p) {
                        bias->grad[od] += gc[p];
                    }
                }
            }
        });
    }
    return out;
}

// Sliding additive maximum: out(c,j) = max over in-bounds window positions i
// of x(c,i) + se(c,i-j). Out-of-bounds neighbors are excluded (-inf padding).
// Backward routes the gradient to the first (row-major) arg-max pair.
template <typename S>
TensorPtr<S> windowed_max(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& se) {
    detail::require_chw(x, "windowed_max");
    detail::require_odd_kernel(se, "windowed_max");
    if (se->dim(0) != x->dim(0)) {
        fail(ErrCode::shape, "windowed_max: channel mismatch x=" + shape_str(x->shape) +
                                 " se=" + shape_str(se->shape));
    }
    const std::size_t c = x->dim(0), h = x->dim(1), wd = x->dim(2);
    const std::size_t kh = se->dim(1), kw = se->dim(2);
    const std::ptrdiff_t ph = kh / 2, pw = kw / 2;
    auto out = detail::op_output(tape, x->shape, x->requires_grad || se->requires_grad);
    const bool track = out->requires_grad;
    auto argmax = track ? std::make_shared<std::vector<std::uint32_t>>(out->numel()) : nullptr;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const S* xc = &x->data[ch * h * wd];
        const S* sc = &se->data[ch * kh * kw];
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x0 = 0; x0 < wd; ++x0) {
                S best = -std::numeric_limits<S>::infinity();
                std::uint32_t best_uv = 0;
                for (std::size_t u = 0; u < kh; ++u) {
                    const std::ptrdiff_t iy = std::ptrdiff_t(y) + std::ptrdiff_t(u) - ph;
                    if (iy < 0 || iy >= std::ptrdiff_t(h)) {
                        continue;
                    }
                    for (std::size_t v = 0; v < kw; ++v) {
                        const std::ptrdiff_t ix = std::ptrdiff_t(x0) + std::ptrdiff_t(v) - pw;
                        if (ix < 0 || ix >= std::ptrdiff_t(wd)) {
                            continue;
                        }
                        const S val = xc[iy * wd + ix] + sc[u * kw + v];
                        if (val > best) {
                            best = val;
                            best_uv = std::uint32_t(u * kw + v);
                        }
                    }
                }
                const std::size_t oi = ch * h * wd + y * wd + x0;
                out->data[oi] = best;
                if (track) {
                    (*argmax)[oi] = best_uv;
                }
            }
        }
    }
    if (track) {
        tape.record(out, [x, se, out, argmax, c, h, wd, kh, kw, ph, pw] {
            if (x->requires_grad) {
                x->ensure_grad();
            }
            if (se->requires_grad) {
                se->ensure_grad();
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x0 = 0; x0 < wd; ++x0) {
                        const std::size_t oi = ch * h * wd + y * wd + x0;
                        const S g = out->grad[oi];
                        if (g == S(0)) {
                            continue;
                        }
                        const std::uint32_t uv = (*argmax)[oi];
                        const std::size_t u = uv / kw, v = uv % kw;
                        const std::ptrdiff_t iy = std::ptrdiff_t(y) + std::ptrdiff_t(u) - ph;
                        const std::ptrdiff_t ix = std::ptrdiff_t(x0) + std::ptrdiff_t(v) - pw;
                        if (x->requires_grad) {
                            x->grad[ch * h * wd + iy * wd + ix] += g;
                        }
                        if (se->requires_grad) {
                            se->grad[ch * kh * kw + uv] += g;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions and losses

template <typename S>
TensorPtr<S> sum_all(Tape<S>& tape, const TensorPtr<S>& x) {
    auto out = detail::op_output(tape, {std::size_t(1)}, x->requires_grad);
    S acc = 0;
    for (const S v : x->data) {
        acc += v;
    }
    out->data[0] = acc;
    if (out->requires_grad) {
        tape.record(out, [x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->numel(); ++i) {
                x->grad[i] += out->grad[0];
            }
        });
    }
    return out;
}

template <typename S>
TensorPtr<S> sum_squares(Tape<S>& tape, const TensorPtr<S>& x) {
    auto out = detail::op_output(tape, {std::size_t(1)}, x->requires_grad);
    S acc = 0;
    for (const S v : x->data) {
        acc += v * v;
    }
    out->data[0] = acc;
    if (out->requires_grad) {
        tape.record(out, [x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->numel(); ++i) {
                x->grad[i] += S(2) * x->data[i] * out->grad[0];
            }
        });
    }
    return out;
}

// Standardize a [1 x N] vector to mean 0 and unit population sd, eps inside
// the square root.
template <typename S>
TensorPtr<S> standardize_row(Tape<S>& tape, const TensorPtr<S>& x, S eps) {
    detail::require_2d(x, "standardize_row");
    if (x->dim(0) != 1) {
        fail(ErrCode::shape, "standardize_row: expected a single row, got " + shape_str(x->shape));
    }
    const std::size_t n = x->dim(1);
    auto out = detail::op_output(tape, x->shape, x->requires_grad);
    S mean = 0;
    for (const S v : x->data) {
        mean += v;
    }
    mean /= S(n);
    S var = 0;
    for (const S v : x->data) {
        var += (v - mean) * (v - mean);
    }
    var /= S(n);
    const S inv = S(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
        out->data[i] = (x->data[i] - mean) * inv;
    }
    if (out->requires_grad) {
        tape.record(out, [x, out, n, inv] {
            x->ensure_grad();
            S gmean = 0, gydot = 0;
            for (std::size_t i = 0; i < n; ++i) {
                gmean += out->grad[i];
                gydot += out->grad[i] * out->data[i];
            }
            gmean /= S(n);
            gydot /= S(n);
            for (std::size_t i = 0; i < n; ++i) {
                x->grad[i] += inv * (out->grad[i] - gmean - out->data[i] * gydot);
            }
        });
    }
    return out;
}

// Mean softmax cross-entropy over a batch of logits [B x K]; labels 0-based.
template <typename S>
TensorPtr<S> softmax_cross_entropy(Tape<S>& tape, const TensorPtr<S>& logits,
                                   const std::vector<int>& labels) {
    detail::require_2d(logits, "softmax_cross_entropy");
    const std::size_t b = logits->dim(0), k = logits->dim(1);
    if (labels.size() != b) {
        fail(ErrCode::shape, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                 " labels for " + std::to_string(b) + " rows");
    }
    for (const int y : labels) {
        if (y < 0 || std::size_t(y) >= k) {
            fail(ErrCode::invalid, "softmax_cross_entropy: label " + std::to_string(y) +
                                       " out of range [0," + std::to_string(k - 1) + "]");
        }
    }
    auto out = detail::op_output(tape, {std::size_t(1)}, logits->requires_grad);
    std::vector<S> lse(b);
    S total = 0;
    for (std::size_t i = 0; i < b; ++i) {
        const S* row = &logits->data[i * k];
        S mx = row[0];
        for (std::size_t j = 1; j < k; ++j) {
            mx = std::max(mx, row[j]);
        }
        S sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            sum += std::exp(row[j] - mx);
        }
        lse[i] = mx + std::log(sum);
        total += lse[i] - row[labels[i]];
    }
    out->data[0] = total / S(b);
    if (out->requires_grad) {
        tape.record(out, [logits, out, labels, lse = std::move(lse), b, k] {
            logits->ensure_grad();
            const S g = out->grad[0] / S(b);
            for (std::size_t i = 0; i < b; ++i) {
                const S* row = &logits->data[i * k];
                for (std::size_t j = 0; j < k; ++j) {
                    S p = std::exp(row[j] - lse[i]);
                    if (std::size_t(labels[i]) == j) {
                        p -= S(1);
                    }
                    logits->grad[i * k + j] += g * p;
                }
            }
        });
    }
    return out;
}

template <typename S>
bool all_finite(const TensorPtr<S>& t) {
    for (const S v : t->data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

} // namespace mm
