#pragma once

// Dense row-major tensors with reverse-mode autodiff.
//
// Ops record a backward closure on the thread-local active Tape; backward()
// replays them in reverse execution order (which is already topological).
// Tensors are immutable once produced by an op; only parameter values (via
// optimizers) and grad buffers mutate.  f32 is the training precision, f64
// the verification precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace distillab {

// Raised when an op produces NaN/Inf or a numeric routine fails.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

template <typename T>
struct TensorNode {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;        // empty until backward touches this node
    bool requires_grad = false;
    bool on_tape = false;
};

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape) {
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->value.assign(static_cast<size_t>(shape_numel(n->shape)), T(0));
        return Tensor(std::move(n));
    }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.node_->value.begin(), t.node_->value.end(), v);
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<T> values) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw std::invalid_argument("Tensor::from: " + shape_str(shape) + " does not hold " +
                                        std::to_string(values.size()) + " values");
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v) { return from({}, {v}); }

    bool defined() const { return static_cast<bool>(node_); }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
    int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

    T* data() { return node_->value.data(); }
    const T* data() const { return node_->value.data(); }
    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    T item() const {
        if (node_->value.size() != 1)
            throw std::invalid_argument("Tensor::item on non-scalar " + shape_str(node_->shape));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    NodePtr<T> node() const { return node_; }

private:
    explicit Tensor(NodePtr<T> n) : node_(std::move(n)) {}
    NodePtr<T> node_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename T>
class Tape;

template <typename T>
inline thread_local Tape<T>* g_active_tape = nullptr;

template <typename T>
class Tape {
public:
    Tape() : prev_(g_active_tape<T>) { g_active_tape<T> = this; }
    ~Tape() {
        release_outputs();
        g_active_tape<T> = prev_;
    }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void push(NodePtr<T> out, std::function<void()> backward) {
        out->on_tape = true;
        outputs_.push_back(out);
        records_.push_back(std::move(backward));
    }

    size_t num_records() const { return records_.size(); }

    // Populates grads of every participating tensor reachable from `loss`,
    // then consumes the tape.
    void backward(const Tensor<T>& loss) {
        if (loss.size() != 1 || loss.rank() != 0)
            throw std::invalid_argument("backward: loss must be rank-0, got " + shape_str(loss.shape()));
        if (!loss.node()->on_tape)
            throw std::invalid_argument("backward: loss is detached from the tape");
        loss.node()->grad.assign(1, T(1));
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
        records_.clear();
        release_outputs();
    }

private:
    void release_outputs() {
        for (auto& n : outputs_) n->on_tape = false;
        outputs_.clear();
        records_.clear();
    }

    Tape<T>* prev_;
    std::vector<std::function<void()>> records_;
    std::vector<NodePtr<T>> outputs_;
};

namespace detail {

template <typename T>
bool participates(const NodePtr<T>& n) {
    return n->requires_grad || n->on_tape;
}

template <typename T>
void ensure_grad(const NodePtr<T>& n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), T(0));
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    for (T v : t.values())
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite output of ") + op);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// gemm kernels (row-major).  Shapes are small; plain loops with the innermost
// index contiguous so the compiler vectorizes them.
// ---------------------------------------------------------------------------

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, T(0));
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            T av = arow[l];
            const T* brow = b + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] (+)= a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<size_t>(j) * k;
            T acc = 0;
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// c[m,n] (+)= a[k,m]^T * b[k,n]
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, T(0));
    for (int l = 0; l < k; ++l) {
        const T* arow = a + static_cast<size_t>(l) * m;
        const T* brow = b + static_cast<size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            T av = arow[i];
            T* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

// Shared skeleton for unary elementwise ops: fwd maps value, bwd maps
// (input value, output value, upstream grad) -> input grad contribution.
template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Fwd fwd, Bwd bwd) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    for (int64_t i = 0, n = x.size(); i < n; ++i) ov[i] = fwd(xv[i]);
    check_finite(out, name);
    if (g_active_tape<T> && participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on, bwd] {
            if (on->grad.empty()) return;
            ensure_grad(xn);
            for (size_t i = 0; i < xn->value.size(); ++i)
                xn->grad[i] += bwd(xn->value[i], on->value[i], on->grad[i]);
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (int64_t i = 0, n = a.size(); i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    detail::check_finite(out, "add");
    if (g_active_tape<T> && (detail::participates(a.node()) || detail::participates(b.node()))) {
        auto an = a.node(), bn = b.node(), on = out.node();
        g_active_tape<T>->push(on, [an, bn, on] {
            if (on->grad.empty()) return;
            if (detail::participates(an)) {
                detail::ensure_grad(an);
                for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (detail::participates(bn)) {
                detail::ensure_grad(bn);
                for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (int64_t i = 0, n = a.size(); i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    detail::check_finite(out, "sub");
    if (g_active_tape<T> && (detail::participates(a.node()) || detail::participates(b.node()))) {
        auto an = a.node(), bn = b.node(), on = out.node();
        g_active_tape<T>->push(on, [an, bn, on] {
            if (on->grad.empty()) return;
            if (detail::participates(an)) {
                detail::ensure_grad(an);
                for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (detail::participates(bn)) {
                detail::ensure_grad(bn);
                for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (int64_t i = 0, n = a.size(); i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    detail::check_finite(out, "mul");
    if (g_active_tape<T> && (detail::participates(a.node()) || detail::participates(b.node()))) {
        auto an = a.node(), bn = b.node(), on = out.node();
        g_active_tape<T>->push(on, [an, bn, on] {
            if (on->grad.empty()) return;
            if (detail::participates(an)) {
                detail::ensure_grad(an);
                for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->value[i];
            }
            if (detail::participates(bn)) {
                detail::ensure_grad(bn);
                for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->value[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return detail::unary_op(
        x, "scale", [c](T v) { return v * c; }, [c](T, T, T g) { return g * c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return detail::unary_op(
        x, "add_scalar", [c](T v) { return v + c; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return detail::unary_op(
        x, "neg", [](T v) { return -v; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary_op(
        x, "square", [](T v) { return v * v; }, [](T xv, T, T g) { return T(2) * xv * g; });
}

template <typename T>
Tensor<T> sqrt_t(const Tensor<T>& x) {
    return detail::unary_op(
        x, "sqrt", [](T v) { return std::sqrt(v); },
        [](T, T ov, T g) { return g / (T(2) * ov); });
}

template <typename T>
Tensor<T> exp_t(const Tensor<T>& x) {
    return detail::unary_op(
        x, "exp", [](T v) { return std::exp(v); }, [](T, T ov, T g) { return g * ov; });
}

template <typename T>
Tensor<T> log_t(const Tensor<T>& x) {
    return detail::unary_op(
        x, "log", [](T v) { return std::log(v); }, [](T xv, T, T g) { return g / xv; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary_op(
        x, "softplus",
        [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](T xv, T, T g) { return g / (T(1) + std::exp(-xv)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        x, "relu", [](T v) { return v > T(0) ? v : T(0); },
        [](T xv, T, T g) { return xv > T(0) ? g : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.values()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    detail::check_finite(out, "sum");
    if (g_active_tape<T> && detail::participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on] {
            if (on->grad.empty()) return;
            detail::ensure_grad(xn);
            T g = on->grad[0];
            for (auto& gv : xn->grad) gv += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.size() == 0) throw std::invalid_argument("mean of empty tensor");
    T inv = T(1) / static_cast<T>(x.size());
    T acc = 0;
    for (T v : x.values()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc * inv);
    detail::check_finite(out, "mean");
    if (g_active_tape<T> && detail::participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on, inv] {
            if (on->grad.empty()) return;
            detail::ensure_grad(xn);
            T g = on->grad[0] * inv;
            for (auto& gv : xn->grad) gv += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.values()) acc += v * v;
    T nrm = std::sqrt(acc);
    Tensor<T> out = Tensor<T>::scalar(nrm);
    detail::check_finite(out, "l2_norm");
    if (g_active_tape<T> && detail::participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on] {
            if (on->grad.empty()) return;
            detail::ensure_grad(xn);
            T nv = on->value[0];
            if (nv == T(0)) return;  // subgradient 0 at the origin
            T g = on->grad[0] / nv;
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g * xn->value[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
void require_rank(const Tensor<T>& t, int r, const char* op) {
    if (t.rank() != r)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) +
                                    ", got " + shape_str(t.shape()));
}
}  // namespace detail

// [m,k] @ [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw std::invalid_argument("matmul: inner dims " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros({m, n});
    detail::gemm_nn(m, n, k, a.data(), b.data(), out.data(), false);
    detail::check_finite(out, "matmul");
    if (g_active_tape<T> && (detail::participates(a.node()) || detail::participates(b.node()))) {
        auto an = a.node(), bn = b.node(), on = out.node();
        g_active_tape<T>->push(on, [an, bn, on, m, n, k] {
            if (on->grad.empty()) return;
            if (detail::participates(an)) {
                detail::ensure_grad(an);
                detail::gemm_nt(m, k, n, on->grad.data(), bn->value.data(), an->grad.data(), true);
            }
            if (detail::participates(bn)) {
                detail::ensure_grad(bn);
                detail::gemm_tn(k, n, m, an->value.data(), on->grad.data(), bn->grad.data(), true);
            }
        });
    }
    return out;
}

// [m,k] @ [n,k]^T -> [m,n]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a, 2, "matmul_nt");
    detail::require_rank(b, 2, "matmul_nt");
    int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw std::invalid_argument("matmul_nt: inner dims " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros({m, n});
    detail::gemm_nt(m, n, k, a.data(), b.data(), out.data(), false);
    detail::check_finite(out, "matmul_nt");
    if (g_active_tape<T> && (detail::participates(a.node()) || detail::participates(b.node()))) {
        auto an = a.node(), bn = b.node(), on = out.node();
        g_active_tape<T>->push(on, [an, bn, on, m, n, k] {
            if (on->grad.empty()) return;
            if (detail::participates(an)) {
                detail::ensure_grad(an);
                detail::gemm_nn(m, k, n, on->grad.data(), bn->value.data(), an->grad.data(), true);
            }
            if (detail::participates(bn)) {
                detail::ensure_grad(bn);
                detail::gemm_tn(n, k, m, on->grad.data(), an->value.data(), bn->grad.data(), true);
            }
        });
    }
    return out;
}

namespace detail {
template <typename T>
void require_rowvec(const Tensor<T>& m, const Tensor<T>& v, const char* op) {
    require_rank(m, 2, op);
    require_rank(v, 1, op);
    if (m.dim(1) != v.dim(0))
        throw std::invalid_argument(std::string(op) + ": " + shape_str(m.shape()) + " vs " +
                                    shape_str(v.shape()));
}
}  // namespace detail

// [n,c] + [c], broadcast over rows
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& m, const Tensor<T>& v) {
    detail::require_rowvec(m, v, "add_rowvec");
    int n = m.dim(0), c = m.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            out.data()[static_cast<size_t>(i) * c + j] = m.data()[static_cast<size_t>(i) * c + j] + v.data()[j];
    detail::check_finite(out, "add_rowvec");
    if (g_active_tape<T> && (detail::participates(m.node()) || detail::participates(v.node()))) {
        auto mn = m.node(), vn = v.node(), on = out.node();
        g_active_tape<T>->push(on, [mn, vn, on, n, c] {
            if (on->grad.empty()) return;
            if (detail::participates(mn)) {
                detail::ensure_grad(mn);
                for (size_t i = 0; i < mn->grad.size(); ++i) mn->grad[i] += on->grad[i];
            }
            if (detail::participates(vn)) {
                detail::ensure_grad(vn);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) vn->grad[j] += on->grad[static_cast<size_t>(i) * c + j];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub_rowvec(const Tensor<T>& m, const Tensor<T>& v) {
    detail::require_rowvec(m, v, "sub_rowvec");
    int n = m.dim(0), c = m.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            out.data()[static_cast<size_t>(i) * c + j] = m.data()[static_cast<size_t>(i) * c + j] - v.data()[j];
    detail::check_finite(out, "sub_rowvec");
    if (g_active_tape<T> && (detail::participates(m.node()) || detail::participates(v.node()))) {
        auto mn = m.node(), vn = v.node(), on = out.node();
        g_active_tape<T>->push(on, [mn, vn, on, n, c] {
            if (on->grad.empty()) return;
            if (detail::participates(mn)) {
                detail::ensure_grad(mn);
                for (size_t i = 0; i < mn->grad.size(); ++i) mn->grad[i] += on->grad[i];
            }
            if (detail::participates(vn)) {
                detail::ensure_grad(vn);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) vn->grad[j] -= on->grad[static_cast<size_t>(i) * c + j];
            }
        });
    }
    return out;
}

// [n,c] / [c] elementwise per row
template <typename T>
Tensor<T> div_rowvec(const Tensor<T>& m, const Tensor<T>& v) {
    detail::require_rowvec(m, v, "div_rowvec");
    int n = m.dim(0), c = m.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            out.data()[static_cast<size_t>(i) * c + j] = m.data()[static_cast<size_t>(i) * c + j] / v.data()[j];
    detail::check_finite(out, "div_rowvec");
    if (g_active_tape<T> && (detail::participates(m.node()) || detail::participates(v.node()))) {
        auto mn = m.node(), vn = v.node(), on = out.node();
        g_active_tape<T>->push(on, [mn, vn, on, n, c] {
            if (on->grad.empty()) return;
            if (detail::participates(mn)) {
                detail::ensure_grad(mn);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j)
                        mn->grad[static_cast<size_t>(i) * c + j] +=
                            on->grad[static_cast<size_t>(i) * c + j] / vn->value[j];
            }
            if (detail::participates(vn)) {
                detail::ensure_grad(vn);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) {
                        size_t idx = static_cast<size_t>(i) * c + j;
                        vn->grad[j] -= on->grad[idx] * mn->value[idx] / (vn->value[j] * vn->value[j]);
                    }
            }
        });
    }
    return out;
}

// Row-wise x / max(||x||_2, eps).  Rows below eps are treated as constant-norm
// so the gradient stays bounded.
template <typename T>
Tensor<T> row_l2_normalize(const Tensor<T>& m, T eps) {
    detail::require_rank(m, 2, "row_l2_normalize");
    int n = m.dim(0), c = m.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, c});
    std::vector<T> norms(static_cast<size_t>(n));
    std::vector<char> guarded(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const T* row = m.data() + static_cast<size_t>(i) * c;
        T acc = 0;
        for (int j = 0; j < c; ++j) acc += row[j] * row[j];
        T nv = std::sqrt(acc);
        guarded[static_cast<size_t>(i)] = nv < eps;
        nv = std::max(nv, eps);
        norms[static_cast<size_t>(i)] = nv;
        T* orow = out.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) orow[j] = row[j] / nv;
    }
    detail::check_finite(out, "row_l2_normalize");
    if (g_active_tape<T> && detail::participates(m.node())) {
        auto mn = m.node(), on = out.node();
        g_active_tape<T>->push(on, [mn, on, n, c, norms, guarded] {
            if (on->grad.empty()) return;
            detail::ensure_grad(mn);
            for (int i = 0; i < n; ++i) {
                const T* g = on->grad.data() + static_cast<size_t>(i) * c;
                const T* y = on->value.data() + static_cast<size_t>(i) * c;
                T* gx = mn->grad.data() + static_cast<size_t>(i) * c;
                T nv = norms[static_cast<size_t>(i)];
                if (guarded[static_cast<size_t>(i)]) {
                    for (int j = 0; j < c; ++j) gx[j] += g[j] / nv;
                } else {
                    T dot = 0;
                    for (int j = 0; j < c; ++j) dot += g[j] * y[j];
                    for (int j = 0; j < c; ++j) gx[j] += (g[j] - dot * y[j]) / nv;
                }
            }
        });
    }
    return out;
}

// out[:, i] = m[:, idx[i]]; differentiable pass-through used for the logit
// restriction map.
template <typename T>
Tensor<T> gather_cols(const Tensor<T>& m, const std::vector<int>& idx) {
    detail::require_rank(m, 2, "gather_cols");
    int n = m.dim(0), c = m.dim(1), cp = static_cast<int>(idx.size());
    for (int j : idx)
        if (j < 0 || j >= c)
            throw std::invalid_argument("gather_cols: index " + std::to_string(j) + " out of range for " +
                                        shape_str(m.shape()));
    Tensor<T> out = Tensor<T>::zeros({n, cp});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cp; ++j)
            out.data()[static_cast<size_t>(i) * cp + j] = m.data()[static_cast<size_t>(i) * c + idx[static_cast<size_t>(j)]];
    if (g_active_tape<T> && detail::participates(m.node())) {
        auto mn = m.node(), on = out.node();
        g_active_tape<T>->push(on, [mn, on, idx, n, c, cp] {
            if (on->grad.empty()) return;
            detail::ensure_grad(mn);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < cp; ++j)
                    mn->grad[static_cast<size_t>(i) * c + idx[static_cast<size_t>(j)]] +=
                        on->grad[static_cast<size_t>(i) * cp + j];
        });
    }
    return out;
}

// Convenience overloads; all defer to the recorded ops above.
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace distillab
