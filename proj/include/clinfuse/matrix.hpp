#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clinfuse/errors.hpp"

namespace clinfuse {

// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix from_rows(std::span<const std::vector<double>> rows_in) {
        Matrix m;
        m.rows = rows_in.size();
        m.cols = rows_in.empty() ? 0 : rows_in[0].size();
        m.data.reserve(m.rows * m.cols);
        for (const auto& r : rows_in) {
            if (r.size() != m.cols) throw DimensionMismatch("ragged matrix rows");
            m.data.insert(m.data.end(), r.begin(), r.end());
        }
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    void append_row(std::span<const double> r) {
        if (rows == 0 && cols == 0) cols = r.size();
        if (r.size() != cols) throw DimensionMismatch("row width differs from matrix");
        data.insert(data.end(), r.begin(), r.end());
        ++rows;
    }

    bool operator==(const Matrix&) const = default;
};

}  // namespace clinfuse
