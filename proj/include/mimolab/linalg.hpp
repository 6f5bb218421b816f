#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "mimolab/errors.hpp"

namespace mimolab {

using Vec = std::vector<double>;

// Dense row-major f64 matrix. Sized for desk-scale nets (widths <= 256), so
// plain loops are enough; no BLAS.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    Mat(int r, int c, double fill) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {}

    double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t size() const { return a.size(); }

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Mat column(const Vec& v) {
        Mat m(static_cast<int>(v.size()), 1);
        m.a = v;
        return m;
    }

    Vec to_vec() const { return a; }
};

inline Mat matmul(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw ShapeError("matmul dims");
    Mat out(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i) {
        double* orow = &out.a[static_cast<std::size_t>(i) * out.cols];
        for (int k = 0; k < x.cols; ++k) {
            const double xv = x(i, k);
            if (xv == 0.0) continue;
            const double* yrow = &y.a[static_cast<std::size_t>(k) * y.cols];
            for (int j = 0; j < y.cols; ++j) orow[j] += xv * yrow[j];
        }
    }
    return out;
}

inline Mat transpose(const Mat& x) {
    Mat out(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
    return out;
}

// In-place Gauss-Jordan inverse with partial pivoting. Returns false on pivot
// breakdown instead of throwing; callers decide how to treat singularity.
inline bool invert_in_place(Mat& m) {
    if (m.rows != m.cols) throw ShapeError("invert: square required");
    const int n = m.rows;
    Mat inv = Mat::identity(n);
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        double best = std::fabs(m(col, col));
        for (int r = col + 1; r < n; ++r) {
            const double v = std::fabs(m(r, col));
            if (v > best) {
                best = v;
                pivot = r;
            }
        }
        if (!(best > 0.0) || !std::isfinite(best)) return false;
        if (pivot != col) {
            for (int j = 0; j < n; ++j) {
                std::swap(m(pivot, j), m(col, j));
                std::swap(inv(pivot, j), inv(col, j));
            }
        }
        const double d = 1.0 / m(col, col);
        for (int j = 0; j < n; ++j) {
            m(col, j) *= d;
            inv(col, j) *= d;
        }
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = m(r, col);
            if (f == 0.0) continue;
            for (int j = 0; j < n; ++j) {
                m(r, j) -= f * m(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    m = std::move(inv);
    return true;
}

inline double frobenius_norm(const Mat& m) {
    double s = 0.0;
    for (double v : m.a) s += v * v;
    return std::sqrt(s);
}

// Complex dense matrix, row-major, for CSI work.
struct CMat {
    int rows = 0;
    int cols = 0;
    std::vector<std::complex<double>> a;

    CMat() = default;
    CMat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, {0.0, 0.0}) {}

    std::complex<double>& operator()(int r, int c) {
        return a[static_cast<std::size_t>(r) * cols + c];
    }
    std::complex<double> operator()(int r, int c) const {
        return a[static_cast<std::size_t>(r) * cols + c];
    }

    CMat col(int c) const {
        CMat out(rows, 1);
        for (int r = 0; r < rows; ++r) out(r, 0) = (*this)(r, c);
        return out;
    }
};

inline CMat cmatmul(const CMat& x, const CMat& y) {
    if (x.cols != y.rows) throw ShapeError("cmatmul dims");
    CMat out(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int k = 0; k < x.cols; ++k) {
            const std::complex<double> xv = x(i, k);
            for (int j = 0; j < y.cols; ++j) out(i, j) += xv * y(k, j);
        }
    return out;
}

inline CMat hermitian(const CMat& x) {
    CMat out(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out(j, i) = std::conj(x(i, j));
    return out;
}

inline double frobenius_norm(const CMat& m) {
    double s = 0.0;
    for (const auto& v : m.a) s += std::norm(v);
    return std::sqrt(s);
}

// Complex inverse through the split real representation
// [[Re, -Im], [Im, Re]], inverted with partial-pivoting elimination.
// Returns false on pivot breakdown.
inline bool cinvert(const CMat& g, CMat& out) {
    if (g.rows != g.cols) throw ShapeError("cinvert: square required");
    const int n = g.rows;
    Mat split(2 * n, 2 * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const auto v = g(i, j);
            split(i, j) = v.real();
            split(i, j + n) = -v.imag();
            split(i + n, j) = v.imag();
            split(i + n, j + n) = v.real();
        }
    if (!invert_in_place(split)) return false;
    out = CMat(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out(i, j) = {split(i, j), split(i + n, j)};
    return true;
}

}  // namespace mimolab
