#pragma once

// Neural-net kernels on NCHW activations: conv (im2col + gemm), pooling,
// row-wise softmax family, and layout helpers for channel-last statistics.

#include "distillab/tensor.hpp"

namespace distillab {

namespace detail {

// Scatter x[b] into cols[Cin*kh*kw, OH*OW] for one image.
template <typename T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, T* cols) {
    for (int c = 0; c < cin; ++c) {
        const T* plane = x + static_cast<size_t>(c) * h * w;
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                T* crow = cols + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ki) * kw + kj) *
                                     (static_cast<size_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) {
                        std::fill(crow + static_cast<size_t>(oi) * ow, crow + (static_cast<size_t>(oi) + 1) * ow, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<size_t>(ii) * w;
                    for (int oj = 0; oj < ow; ++oj) {
                        int jj = oj * stride - pad + kj;
                        crow[static_cast<size_t>(oi) * ow + oj] = (jj >= 0 && jj < w) ? src[jj] : T(0);
                    }
                }
            }
    }
}

// Adjoint of im2col: accumulate cols back into the image.
template <typename T>
void col2im_add(const T* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, T* x) {
    for (int c = 0; c < cin; ++c) {
        T* plane = x + static_cast<size_t>(c) * h * w;
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const T* crow = cols + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ki) * kw + kj) *
                                           (static_cast<size_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    T* dst = plane + static_cast<size_t>(ii) * w;
                    for (int oj = 0; oj < ow; ++oj) {
                        int jj = oj * stride - pad + kj;
                        if (jj >= 0 && jj < w) dst[jj] += crow[static_cast<size_t>(oi) * ow + oj];
                    }
                }
            }
    }
}

}  // namespace detail

// x[B,Cin,H,W], w[Cout,Cin,kh,kw], b[Cout] -> [B,Cout,OH,OW]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
    detail::require_rank(x, 4, "conv2d");
    detail::require_rank(w, 4, "conv2d");
    detail::require_rank(b, 1, "conv2d");
    int bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin || b.dim(0) != cout)
        throw std::invalid_argument("conv2d: " + shape_str(x.shape()) + " with " + shape_str(w.shape()) +
                                    " and " + shape_str(b.shape()));
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");
    int ckk = cin * kh * kw, p = oh * ow;

    Tensor<T> out = Tensor<T>::zeros({bsz, cout, oh, ow});
    // Per-image column buffers; kept alive by the backward closure so the
    // weight gradient needs no re-expansion.
    auto cols = std::make_shared<std::vector<T>>(static_cast<size_t>(bsz) * ckk * p);
    for (int i = 0; i < bsz; ++i) {
        T* ci = cols->data() + static_cast<size_t>(i) * ckk * p;
        detail::im2col(x.data() + static_cast<size_t>(i) * cin * h * wd, cin, h, wd, kh, kw, stride, pad, oh, ow, ci);
        T* oi = out.data() + static_cast<size_t>(i) * cout * p;
        detail::gemm_nn(cout, p, ckk, w.data(), ci, oi, false);
        for (int c = 0; c < cout; ++c) {
            T bias = b.data()[c];
            T* orow = oi + static_cast<size_t>(c) * p;
            for (int j = 0; j < p; ++j) orow[j] += bias;
        }
    }
    detail::check_finite(out, "conv2d");

    bool any = detail::participates(x.node()) || detail::participates(w.node()) || detail::participates(b.node());
    if (g_active_tape<T> && any) {
        auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, wn, bn, on, cols, bsz, cin, h, wd, cout, kh, kw, stride, pad, oh, ow, ckk, p] {
            if (on->grad.empty()) return;
            bool wx = detail::participates(xn), ww = detail::participates(wn), wb = detail::participates(bn);
            if (wx) detail::ensure_grad(xn);
            if (ww) detail::ensure_grad(wn);
            if (wb) detail::ensure_grad(bn);
            std::vector<T> dcols;
            if (wx) dcols.resize(static_cast<size_t>(ckk) * p);
            for (int i = 0; i < bsz; ++i) {
                const T* go = on->grad.data() + static_cast<size_t>(i) * cout * p;
                const T* ci = cols->data() + static_cast<size_t>(i) * ckk * p;
                if (ww) detail::gemm_nt(cout, ckk, p, go, ci, wn->grad.data(), true);
                if (wb)
                    for (int c = 0; c < cout; ++c) {
                        const T* grow = go + static_cast<size_t>(c) * p;
                        T acc = 0;
                        for (int j = 0; j < p; ++j) acc += grow[j];
                        bn->grad[static_cast<size_t>(c)] += acc;
                    }
                if (wx) {
                    detail::gemm_tn(ckk, p, cout, wn->value.data(), go, dcols.data(), false);
                    detail::col2im_add(dcols.data(), cin, h, wd, kh, kw, stride, pad, oh, ow,
                                       xn->grad.data() + static_cast<size_t>(i) * cin * h * wd);
                }
            }
        });
    }
    return out;
}

// Non-overlapping-or-strided max pool; remembers argmax for backward.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int k, int stride) {
    detail::require_rank(x, 4, "max_pool2d");
    int bsz = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("max_pool2d: empty output");
    Tensor<T> out = Tensor<T>::zeros({bsz, c, oh, ow});
    auto argmax = std::make_shared<std::vector<int>>(out.size());
    for (int b = 0; b < bsz; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T* plane = x.data() + (static_cast<size_t>(b) * c + ch) * h * w;
            for (int oi = 0; oi < oh; ++oi)
                for (int oj = 0; oj < ow; ++oj) {
                    int bi = oi * stride, bj = oj * stride;
                    T best = plane[static_cast<size_t>(bi) * w + bj];
                    int besti = bi * w + bj;
                    for (int ki = 0; ki < k; ++ki)
                        for (int kj = 0; kj < k; ++kj) {
                            int idx = (bi + ki) * w + (bj + kj);
                            if (plane[idx] > best) { best = plane[idx]; besti = idx; }
                        }
                    size_t oidx = ((static_cast<size_t>(b) * c + ch) * oh + oi) * ow + oj;
                    out.data()[oidx] = best;
                    (*argmax)[oidx] = besti;
                }
        }
    detail::check_finite(out, "max_pool2d");
    if (g_active_tape<T> && detail::participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on, argmax, c, h, w, oh, ow] {
            if (on->grad.empty()) return;
            detail::ensure_grad(xn);
            int bsz2 = static_cast<int>(on->value.size()) / (c * oh * ow);
            for (int b = 0; b < bsz2; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    T* gplane = xn->grad.data() + (static_cast<size_t>(b) * c + ch) * h * w;
                    size_t base = (static_cast<size_t>(b) * c + ch) * oh * ow;
                    for (int j = 0; j < oh * ow; ++j)
                        gplane[(*argmax)[base + j]] += on->grad[base + j];
                }
        });
    }
    return out;
}

// [B,C,H,W] -> [B,C] spatial mean
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    detail::require_rank(x, 4, "global_avg_pool");
    int bsz = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out = Tensor<T>::zeros({bsz, c});
    T inv = T(1) / static_cast<T>(hw);
    for (int b = 0; b < bsz; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T* plane = x.data() + (static_cast<size_t>(b) * c + ch) * hw;
            T acc = 0;
            for (int j = 0; j < hw; ++j) acc += plane[j];
            out.data()[static_cast<size_t>(b) * c + ch] = acc * inv;
        }
    detail::check_finite(out, "global_avg_pool");
    if (g_active_tape<T> && detail::participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on, c, hw, inv] {
            if (on->grad.empty()) return;
            detail::ensure_grad(xn);
            int bsz2 = static_cast<int>(on->value.size()) / c;
            for (int b = 0; b < bsz2; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    T g = on->grad[static_cast<size_t>(b) * c + ch] * inv;
                    T* gplane = xn->grad.data() + (static_cast<size_t>(b) * c + ch) * hw;
                    for (int j = 0; j < hw; ++j) gplane[j] += g;
                }
        });
    }
    return out;
}

// [B,C,H,W] -> [B*H*W, C]: one row per spatial position, features = channels.
template <typename T>
Tensor<T> nchw_to_rows(const Tensor<T>& x) {
    detail::require_rank(x, 4, "nchw_to_rows");
    int bsz = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out = Tensor<T>::zeros({bsz * hw, c});
    for (int b = 0; b < bsz; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T* plane = x.data() + (static_cast<size_t>(b) * c + ch) * hw;
            for (int j = 0; j < hw; ++j)
                out.data()[(static_cast<size_t>(b) * hw + j) * c + ch] = plane[j];
        }
    if (g_active_tape<T> && detail::participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on, c, hw] {
            if (on->grad.empty()) return;
            detail::ensure_grad(xn);
            int bsz2 = static_cast<int>(on->value.size()) / (c * hw);
            for (int b = 0; b < bsz2; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    T* gplane = xn->grad.data() + (static_cast<size_t>(b) * c + ch) * hw;
                    for (int j = 0; j < hw; ++j)
                        gplane[j] += on->grad[(static_cast<size_t>(b) * hw + j) * c + ch];
                }
        });
    }
    return out;
}

// [B,C,H,W] -> [B, H*W]: sum of squares over channels (attention map energy).
template <typename T>
Tensor<T> channel_sumsq(const Tensor<T>& x) {
    detail::require_rank(x, 4, "channel_sumsq");
    int bsz = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out = Tensor<T>::zeros({bsz, hw});
    for (int b = 0; b < bsz; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T* plane = x.data() + (static_cast<size_t>(b) * c + ch) * hw;
            T* orow = out.data() + static_cast<size_t>(b) * hw;
            for (int j = 0; j < hw; ++j) orow[j] += plane[j] * plane[j];
        }
    detail::check_finite(out, "channel_sumsq");
    if (g_active_tape<T> && detail::participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on, c, hw] {
            if (on->grad.empty()) return;
            detail::ensure_grad(xn);
            int bsz2 = static_cast<int>(on->value.size()) / hw;
            for (int b = 0; b < bsz2; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const T* plane = xn->value.data() + (static_cast<size_t>(b) * c + ch) * hw;
                    T* gplane = xn->grad.data() + (static_cast<size_t>(b) * c + ch) * hw;
                    const T* grow = on->grad.data() + static_cast<size_t>(b) * hw;
                    for (int j = 0; j < hw; ++j) gplane[j] += T(2) * plane[j] * grow[j];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax family (row-wise over the last axis of a [n,c] matrix)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    detail::require_rank(x, 2, "softmax_rows");
    int n = x.dim(0), c = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, c});
    for (int i = 0; i < n; ++i) {
        const T* row = x.data() + static_cast<size_t>(i) * c;
        T* orow = out.data() + static_cast<size_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T z = 0;
        for (int j = 0; j < c; ++j) { orow[j] = std::exp(row[j] - mx); z += orow[j]; }
        for (int j = 0; j < c; ++j) orow[j] /= z;
    }
    detail::check_finite(out, "softmax_rows");
    if (g_active_tape<T> && detail::participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on, n, c] {
            if (on->grad.empty()) return;
            detail::ensure_grad(xn);
            for (int i = 0; i < n; ++i) {
                const T* y = on->value.data() + static_cast<size_t>(i) * c;
                const T* g = on->grad.data() + static_cast<size_t>(i) * c;
                T* gx = xn->grad.data() + static_cast<size_t>(i) * c;
                T dot = 0;
                for (int j = 0; j < c; ++j) dot += g[j] * y[j];
                for (int j = 0; j < c; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
    detail::require_rank(x, 2, "log_softmax_rows");
    int n = x.dim(0), c = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, c});
    for (int i = 0; i < n; ++i) {
        const T* row = x.data() + static_cast<size_t>(i) * c;
        T* orow = out.data() + static_cast<size_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T z = 0;
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        T lz = mx + std::log(z);
        for (int j = 0; j < c; ++j) orow[j] = row[j] - lz;
    }
    detail::check_finite(out, "log_softmax_rows");
    if (g_active_tape<T> && detail::participates(x.node())) {
        auto xn = x.node(), on = out.node();
        g_active_tape<T>->push(on, [xn, on, n, c] {
            if (on->grad.empty()) return;
            detail::ensure_grad(xn);
            for (int i = 0; i < n; ++i) {
                const T* ly = on->value.data() + static_cast<size_t>(i) * c;
                const T* g = on->grad.data() + static_cast<size_t>(i) * c;
                T* gx = xn->grad.data() + static_cast<size_t>(i) * c;
                T gsum = 0;
                for (int j = 0; j < c; ++j) gsum += g[j];
                for (int j = 0; j < c; ++j) gx[j] += g[j] - std::exp(ly[j]) * gsum;
            }
        });
    }
    return out;
}

// Mean over rows of -log softmax(x)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    detail::require_rank(logits, 2, "cross_entropy");
    int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(n) + " rows");
    Tensor<T> lsm = log_softmax_rows(logits);
    T acc = 0;
    for (int i = 0; i < n; ++i) {
        int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= c) throw std::invalid_argument("cross_entropy: label out of range");
        acc -= lsm.data()[static_cast<size_t>(i) * c + y];
    }
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    detail::check_finite(out, "cross_entropy");
    if (g_active_tape<T> && detail::participates(lsm.node())) {
        auto ln = lsm.node(), on = out.node();
        g_active_tape<T>->push(on, [ln, on, labels, n, c] {
            if (on->grad.empty()) return;
            detail::ensure_grad(ln);
            T g = on->grad[0] / static_cast<T>(n);
            for (int i = 0; i < n; ++i)
                ln->grad[static_cast<size_t>(i) * c + labels[static_cast<size_t>(i)]] -= g;
        });
    }
    return out;
}

// Mean over rows of KL(p || q) given both distributions as log-probabilities.
// Gradients flow into both arguments.
template <typename T>
Tensor<T> kl_div_rows(const Tensor<T>& log_p, const Tensor<T>& log_q) {
    detail::require_same_shape(log_p, log_q, "kl_div_rows");
    detail::require_rank(log_p, 2, "kl_div_rows");
    int n = log_p.dim(0), c = log_p.dim(1);
    T acc = 0;
    for (int64_t i = 0, t = log_p.size(); i < t; ++i) {
        T p = std::exp(log_p.data()[i]);
        acc += p * (log_p.data()[i] - log_q.data()[i]);
    }
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    detail::check_finite(out, "kl_div_rows");
    if (g_active_tape<T> && (detail::participates(log_p.node()) || detail::participates(log_q.node()))) {
        auto pn = log_p.node(), qn = log_q.node(), on = out.node();
        g_active_tape<T>->push(on, [pn, qn, on, n] {
            if (on->grad.empty()) return;
            T g = on->grad[0] / static_cast<T>(n);
            if (detail::participates(pn)) {
                detail::ensure_grad(pn);
                for (size_t i = 0; i < pn->value.size(); ++i) {
                    T p = std::exp(pn->value[i]);
                    pn->grad[i] += g * p * (T(1) + pn->value[i] - qn->value[i]);
                }
            }
            if (detail::participates(qn)) {
                detail::ensure_grad(qn);
                for (size_t i = 0; i < qn->value.size(); ++i)
                    qn->grad[i] -= g * std::exp(pn->value[i]);
            }
        });
    }
    return out;
}

// x @ W^T + b with W[c_out, c_in]: the fully-connected layer layout.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_rowvec(matmul_nt(x, w), b);
}

}  // namespace distillab
