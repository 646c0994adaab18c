#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include <trajlab/common/error.hpp>
#include <trajlab/common/rng.hpp>

namespace trajlab::nn {

// All tensors are rank <= 2, 64-bit, row-major. A scalar is 1x1.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_str(const Mat& m) {
    return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// Named trainable tensor with its gradient accumulator and optimizer
/// moments. The moments always mirror the value's shape.
struct Param {
    std::string name;
    Mat value;
    Mat grad;
    Mat moment1;
    Mat moment2;

    Param() = default;
    Param(std::string n, Eigen::Index rows, Eigen::Index cols) { init_zero(std::move(n), rows, cols); }

    void init_zero(std::string n, Eigen::Index rows, Eigen::Index cols) {
        name = std::move(n);
        value = Mat::Zero(rows, cols);
        reset_state();
    }

    /// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
    void init_uniform(std::string n, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                      Rng& rng) {
        name = std::move(n);
        value.resize(rows, cols);
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) value(i, j) = rng.uniform(-bound, bound);
        reset_state();
    }

    void reset_state() {
        grad = Mat::Zero(value.rows(), value.cols());
        moment1 = Mat::Zero(value.rows(), value.cols());
        moment2 = Mat::Zero(value.rows(), value.cols());
    }

    Eigen::Index count() const { return value.size(); }
};

}  // namespace trajlab::nn
