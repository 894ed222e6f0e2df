#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace rre {

/// Dense row-major matrix. Reductions over elements (matmul, dot, column
/// sums) accumulate in 64-bit and round once at the end, with a fixed
/// per-element summation order.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T value = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, value) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> flat() { return {data_.data(), data_.size()}; }
    std::span<const T> flat() const { return {data_.data(), data_.size()}; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Inner product accumulated in 64-bit, summing elements in index order.
template <typename T>
inline double dot(std::span<const T> a, std::span<const T> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

namespace detail {

// 4x8 register-tiled kernel. Every output element accumulates over the
// shared dimension in ascending order, so results do not depend on tile
// placement beyond rounding of the final 64->storage conversion.
template <typename T>
void matmul_acc64(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                  std::size_t n, bool accumulate) {
    constexpr std::size_t TI = 4, TJ = 8;
    for (std::size_t i0 = 0; i0 < m; i0 += TI) {
        const std::size_t ni = std::min(TI, m - i0);
        for (std::size_t j0 = 0; j0 < n; j0 += TJ) {
            const std::size_t nj = std::min(TJ, n - j0);
            if (ni == TI && nj == TJ) {
                double acc[TI][TJ] = {};
                for (std::size_t p = 0; p < k; ++p) {
                    const T* brow = b + p * n + j0;
                    double bz[TJ];
                    for (std::size_t j = 0; j < TJ; ++j) bz[j] = static_cast<double>(brow[j]);
                    for (std::size_t i = 0; i < TI; ++i) {
                        const double av = static_cast<double>(a[(i0 + i) * k + p]);
                        for (std::size_t j = 0; j < TJ; ++j) acc[i][j] += av * bz[j];
                    }
                }
                for (std::size_t i = 0; i < TI; ++i) {
                    T* crow = c + (i0 + i) * n + j0;
                    for (std::size_t j = 0; j < TJ; ++j) {
                        const T v = static_cast<T>(acc[i][j]);
                        crow[j] = accumulate ? static_cast<T>(crow[j] + v) : v;
                    }
                }
            } else {
                for (std::size_t i = 0; i < ni; ++i) {
                    for (std::size_t j = 0; j < nj; ++j) {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < k; ++p)
                            acc += static_cast<double>(a[(i0 + i) * k + p]) *
                                   static_cast<double>(b[p * n + j0 + j]);
                        T& out = c[(i0 + i) * n + j0 + j];
                        const T v = static_cast<T>(acc);
                        out = accumulate ? static_cast<T>(out + v) : v;
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
void matmul_into(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b,
                 bool accumulate = false) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions disagree");
    if (c.rows() != a.rows() || c.cols() != b.cols())
        throw std::invalid_argument("matmul: output shape disagrees");
    detail::matmul_acc64(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(),
                         accumulate);
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    Matrix<T> c(a.rows(), b.cols());
    matmul_into(c, a, b);
    return c;
}

template <typename T>
Matrix<T> transposed(const Matrix<T>& a) {
    Matrix<T> t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// M.row(i) += bias for every row.
template <typename T>
void add_row_bias(Matrix<T>& m, std::span<const T> bias) {
    if (bias.size() != m.cols())
        throw std::invalid_argument("add_row_bias: bias length disagrees");
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j)
            r[j] = static_cast<T>(r[j] + bias[j]);
    }
}

/// out[j] += sum over rows of m(:, j), accumulated in 64-bit.
template <typename T>
void add_column_sums(std::span<T> out, const Matrix<T>& m) {
    if (out.size() != m.cols())
        throw std::invalid_argument("add_column_sums: output length disagrees");
    std::vector<double> acc(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) acc[j] += static_cast<double>(r[j]);
    }
    for (std::size_t j = 0; j < m.cols(); ++j)
        out[j] = static_cast<T>(out[j] + acc[j]);
}

template <typename T>
void add_scaled(Matrix<T>& dst, const Matrix<T>& src, T scale) {
    if (dst.rows() != src.rows() || dst.cols() != src.cols())
        throw std::invalid_argument("add_scaled: shape disagrees");
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst.data()[i] = static_cast<T>(dst.data()[i] + scale * src.data()[i]);
}

}  // namespace rre
