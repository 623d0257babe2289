#pragma once

// Small dense symmetric eigensolver (cyclic Jacobi) and row orthonormalization.
// Everything here runs in verification precision internally; sizes are tiny
// (channel dims ≤ 256), so robustness beats speed.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "distillab/tensor.hpp"

namespace distillab {

struct SymEig {
    int d = 0;
    std::vector<double> values;   // descending
    std::vector<double> vectors;  // row k = eigenvector for values[k], row-major d×d
};

// Full eigendecomposition of a symmetric d×d matrix (row-major).  The input is
// symmetrized defensively; eigenvalues come back sorted descending with their
// vectors as rows, each sign-normalized so its first non-negligible entry is
// positive.
inline SymEig sym_eig(const std::vector<double>& a_in, int d) {
    if (d <= 0 || d > 256) throw std::invalid_argument("sym_eig: d must be in [1,256], got " + std::to_string(d));
    if (static_cast<int>(a_in.size()) != d * d)
        throw std::invalid_argument("sym_eig: matrix size does not match d");

    std::vector<double> a(static_cast<size_t>(d) * d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            a[static_cast<size_t>(i) * d + j] =
                0.5 * (a_in[static_cast<size_t>(i) * d + j] + a_in[static_cast<size_t>(j) * d + i]);
    for (double v : a)
        if (!std::isfinite(v)) throw NumericError("sym_eig: non-finite input");

    std::vector<double> v(static_cast<size_t>(d) * d, 0.0);  // columns accumulate eigenvectors
    for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;

    double fro = 0.0;
    for (double x : a) fro += x * x;
    const double tol = 1e-28 * (1.0 + fro);

    const int max_sweeps = 100;
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) {
                double x = a[static_cast<size_t>(i) * d + j];
                off += 2.0 * x * x;
            }
        if (off <= tol) break;

        for (int p = 0; p < d - 1; ++p)
            for (int q = p + 1; q < d; ++q) {
                double apq = a[static_cast<size_t>(p) * d + q];
                if (apq == 0.0) continue;
                double app = a[static_cast<size_t>(p) * d + p];
                double aqq = a[static_cast<size_t>(q) * d + q];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;

                for (int k = 0; k < d; ++k) {
                    double akp = a[static_cast<size_t>(k) * d + p];
                    double akq = a[static_cast<size_t>(k) * d + q];
                    a[static_cast<size_t>(k) * d + p] = c * akp - s * akq;
                    a[static_cast<size_t>(k) * d + q] = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    double apk = a[static_cast<size_t>(p) * d + k];
                    double aqk = a[static_cast<size_t>(q) * d + k];
                    a[static_cast<size_t>(p) * d + k] = c * apk - s * aqk;
                    a[static_cast<size_t>(q) * d + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < d; ++k) {
                    double vkp = v[static_cast<size_t>(k) * d + p];
                    double vkq = v[static_cast<size_t>(k) * d + q];
                    v[static_cast<size_t>(k) * d + p] = c * vkp - s * vkq;
                    v[static_cast<size_t>(k) * d + q] = s * vkp + c * vkq;
                }
            }
    }
    if (sweep == max_sweeps) throw NumericError("sym_eig: no convergence within 100 sweeps");

    std::vector<int> order(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
        return a[static_cast<size_t>(i) * d + i] > a[static_cast<size_t>(j) * d + j];
    });

    SymEig out;
    out.d = d;
    out.values.resize(static_cast<size_t>(d));
    out.vectors.resize(static_cast<size_t>(d) * d);
    for (int k = 0; k < d; ++k) {
        int col = order[static_cast<size_t>(k)];
        out.values[static_cast<size_t>(k)] = a[static_cast<size_t>(col) * d + col];
        double* row = out.vectors.data() + static_cast<size_t>(k) * d;
        for (int i = 0; i < d; ++i) row[i] = v[static_cast<size_t>(i) * d + col];
        for (int i = 0; i < d; ++i) {
            if (std::abs(row[i]) > 1e-12) {
                if (row[i] < 0.0)
                    for (int j = 0; j < d; ++j) row[j] = -row[j];
                break;
            }
        }
    }
    return out;
}

namespace detail {

// Modified Gram–Schmidt with a second orthogonalization pass, accumulating in
// double.  Leaves row signs as the input directions dictate (continuous in the
// input), which is what iterative re-orthonormalization during training needs.
template <typename T>
void mgs_rows(T* m, int rows, int cols) {
    if (rows > cols) throw std::invalid_argument("orthonormalize_rows: more rows than columns");
    std::vector<double> work(static_cast<size_t>(rows) * cols);
    for (size_t i = 0; i < work.size(); ++i) work[i] = static_cast<double>(m[i]);
    for (int i = 0; i < rows; ++i) {
        double* vi = work.data() + static_cast<size_t>(i) * cols;
        double orig = 0.0;
        for (int k = 0; k < cols; ++k) orig += vi[k] * vi[k];
        orig = std::sqrt(orig);
        for (int pass = 0; pass < 2; ++pass)
            for (int j = 0; j < i; ++j) {
                const double* vj = work.data() + static_cast<size_t>(j) * cols;
                double dot = 0.0;
                for (int k = 0; k < cols; ++k) dot += vi[k] * vj[k];
                for (int k = 0; k < cols; ++k) vi[k] -= dot * vj[k];
            }
        double nrm = 0.0;
        for (int k = 0; k < cols; ++k) nrm += vi[k] * vi[k];
        nrm = std::sqrt(nrm);
        if (!(nrm > 1e-10 * (orig + 1e-30)) || nrm == 0.0)
            throw std::invalid_argument("orthonormalize_rows: rank-deficient input at row " + std::to_string(i));
        for (int k = 0; k < cols; ++k) vi[k] /= nrm;
    }
    for (size_t i = 0; i < work.size(); ++i) m[i] = static_cast<T>(work[i]);
}

template <typename T>
void canonicalize_row_signs(T* m, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        T* row = m + static_cast<size_t>(i) * cols;
        for (int k = 0; k < cols; ++k) {
            if (std::abs(static_cast<double>(row[k])) > 1e-12) {
                if (row[k] < T(0))
                    for (int j = 0; j < cols; ++j) row[j] = -row[j];
                break;
            }
        }
    }
}

}  // namespace detail

// Returns the orthonormalized copy of a K×d matrix (K ≤ d), rows spanning the
// same space, first non-negligible entry of each row positive.  Not recorded
// on any tape.
template <typename T>
Tensor<T> orthonormalize_rows(const Tensor<T>& w) {
    detail::require_rank(w, 2, "orthonormalize_rows");
    Tensor<T> out = Tensor<T>::from(w.shape(), w.values());
    detail::mgs_rows(out.data(), w.dim(0), w.dim(1));
    detail::canonicalize_row_signs(out.data(), w.dim(0), w.dim(1));
    return out;
}

// In-place re-orthonormalization for constraint projection inside training
// loops.  Skips the sign convention so the map stays continuous step-to-step.
template <typename T>
void reorthonormalize_rows_inplace(Tensor<T>& w) {
    detail::require_rank(w, 2, "reorthonormalize_rows_inplace");
    detail::mgs_rows(w.data(), w.dim(0), w.dim(1));
}

// max |(A Aᵀ − I)_{ij}| for a K×d row matrix: the orthogonality defect.
template <typename T>
double row_gram_defect(const Tensor<T>& w) {
    int k = w.dim(0), d = w.dim(1);
    double worst = 0.0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c)
                dot += static_cast<double>(w.data()[static_cast<size_t>(i) * d + c]) *
                       static_cast<double>(w.data()[static_cast<size_t>(j) * d + c]);
            worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
        }
    return worst;
}

}  // namespace distillab
