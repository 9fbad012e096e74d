#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <initializer_list>

#include "micro/common.hpp"

namespace micro {

/// Dense row-major matrix of doubles. Vectors are [1,n] or [n,1]; scalars
/// are [1,1]. All learned state in the project lives in Tensors so that
/// checkpointing and the autodiff tape share one representation.
struct Tensor {
    size_t rows = 0;
    size_t cols = 0;
    Vec data;

    Tensor() = default;
    Tensor(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }

    static Tensor row(std::initializer_list<double> xs) {
        Tensor t(1, xs.size());
        size_t i = 0;
        for (double x : xs) t.data[i++] = x;
        return t;
    }

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }
    size_t size() const { return rows * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    double item() const {
        require(rows == 1 && cols == 1, "Tensor::item: tensor is not a scalar");
        return data[0];
    }
};

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<EMat> emap(Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

inline Eigen::Map<const EMat> emap(const Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

/// C = A * B via Eigen.
inline Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    require_arg(a.cols == b.rows, "matmul: inner dimensions disagree");
    Tensor c(a.rows, b.cols);
    emap(c).noalias() = emap(a) * emap(b);
    return c;
}

/// [A | B]: rows match, columns concatenate.
inline Tensor hstack(const Tensor& a, const Tensor& b) {
    require_arg(a.rows == b.rows, "hstack: row counts disagree");
    Tensor c(a.rows, a.cols + b.cols);
    for (size_t r = 0; r < a.rows; ++r) {
        for (size_t j = 0; j < a.cols; ++j) c.at(r, j) = a.at(r, j);
        for (size_t j = 0; j < b.cols; ++j) c.at(r, a.cols + j) = b.at(r, j);
    }
    return c;
}

}  // namespace micro
