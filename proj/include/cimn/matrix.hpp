// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <span>
#include <vector>

#include "cimn/errors.hpp"

namespace cimn {

// Dense row-major matrix of doubles. The only numeric container in the
// project; scalars are 1x1, row vectors 1xc, column vectors rx1.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix scalar(double v) {
        Matrix m(1, 1);
        m.data_[0] = v;
        return m;
    }

    static Matrix from_rows(std::size_t rows, std::size_t cols, std::span<const double> values) {
        if (values.size() != rows * cols) throw ContractViolation("from_rows: size mismatch");
        Matrix m(rows, cols);
        std::memcpy(m.data_.data(), values.data(), values.size() * sizeof(double));
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<const double> values() const { return data_; }
    std::span<double> values() { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Bitwise equality; distinguishes -0.0 from 0.0 and treats NaN == NaN.
    bool bit_equal(const Matrix& other) const {
        return same_shape(other) &&
               std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace cimn
