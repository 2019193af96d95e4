#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace platekit {

template <int D>
using Vec = std::array<double, D>;

// Rows are the frame vectors.
template <int D>
using Frame = std::array<Vec<D>, D>;

template <int D>
inline double dot(const Vec<D>& a, const Vec<D>& b) {
    double s = 0.0;
    for (int i = 0; i < D; ++i) s += a[i] * b[i];
    return s;
}

template <int D>
inline double norm(const Vec<D>& a) {
    return std::sqrt(dot<D>(a, a));
}

template <std::size_t N>
inline std::array<double, N> operator+(const std::array<double, N>& a, const std::array<double, N>& b) {
    std::array<double, N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + b[i];
    return r;
}

template <std::size_t N>
inline std::array<double, N> operator-(const std::array<double, N>& a, const std::array<double, N>& b) {
    std::array<double, N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] - b[i];
    return r;
}

// Operators are templated on std::size_t so the extent deduces from
// std::array directly.
template <std::size_t N>
inline std::array<double, N> operator*(double s, const std::array<double, N>& a) {
    std::array<double, N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = s * a[i];
    return r;
}

template <int D>
inline Vec<D> zero_vec() {
    Vec<D> r;
    r.fill(0.0);
    return r;
}

template <int D>
inline Vec<D> filled(double v) {
    Vec<D> r;
    r.fill(v);
    return r;
}

template <int D>
inline Vec<D> normalized(const Vec<D>& a) {
    double n = norm<D>(a);
    if (n == 0.0) throw std::invalid_argument("cannot normalize the zero vector");
    return (1.0 / n) * a;
}

// Coordinates of v in the frame (frame rows orthonormal).
template <int D>
inline Vec<D> to_frame(const Frame<D>& f, const Vec<D>& v) {
    Vec<D> r;
    for (int i = 0; i < D; ++i) r[i] = dot<D>(f[i], v);
    return r;
}

template <int D>
inline Vec<D> from_frame(const Frame<D>& f, const Vec<D>& u) {
    Vec<D> r = zero_vec<D>();
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) r[j] += u[i] * f[i][j];
    return r;
}

template <int D>
inline Frame<D> identity_frame() {
    Frame<D> f;
    for (int i = 0; i < D; ++i) {
        f[i] = zero_vec<D>();
        f[i][i] = 1.0;
    }
    return f;
}

template <int D>
inline double orthonormality_error(const Frame<D>& f) {
    double err = 0.0;
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) {
            double target = (i == j) ? 1.0 : 0.0;
            err = std::max(err, std::abs(dot<D>(f[i], f[j]) - target));
        }
    return err;
}

template <int D>
inline double determinant(const Frame<D>& f) {
    std::array<std::array<double, D>, D> a;
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) a[i][j] = f[i][j];
    double det = 1.0;
    for (int c = 0; c < D; ++c) {
        int piv = c;
        for (int r = c + 1; r < D; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        if (a[piv][c] == 0.0) return 0.0;
        if (piv != c) {
            std::swap(a[piv], a[c]);
            det = -det;
        }
        det *= a[c][c];
        for (int r = c + 1; r < D; ++r) {
            double m = a[r][c] / a[c][c];
            for (int k = c; k < D; ++k) a[r][k] -= m * a[c][k];
        }
    }
    return det;
}

template <int D>
inline bool same_frame(const Frame<D>& a, const Frame<D>& b, double tol = 1e-9) {
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j)
            if (std::abs(a[i][j] - b[i][j]) > tol) return false;
    return true;
}

// Spatial part (first D-1 coordinates) of a space-time vector.
template <int D>
inline Vec<D - 1> spatial(const Vec<D>& v) {
    Vec<D - 1> r;
    for (int i = 0; i < D - 1; ++i) r[i] = v[i];
    return r;
}

template <int D>
inline Vec<D> lift(const Vec<D - 1>& x, double time) {
    Vec<D> r;
    for (int i = 0; i < D - 1; ++i) r[i] = x[i];
    r[D - 1] = time;
    return r;
}

}  // namespace platekit
