#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace certilev {

using Vec = std::vector<double>;

// Dense row-major matrix. Also used as a sequence of row vectors
// (rows = sequence positions, cols = vector dimension).
class Mat {
public:
    Mat() = default;
    Mat(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(static_cast<size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("Mat: negative dimension");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool empty() const { return rows_ == 0; }
    size_t size() const { return v_.size(); }

    double& operator()(int r, int c) {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return v_[static_cast<size_t>(r) * cols_ + c];
    }
    double operator()(int r, int c) const {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return v_[static_cast<size_t>(r) * cols_ + c];
    }

    double* row(int r) { return v_.data() + static_cast<size_t>(r) * cols_; }
    const double* row(int r) const { return v_.data() + static_cast<size_t>(r) * cols_; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }

    bool operator==(const Mat& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_;
    }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void scale(double s) {
        for (double& x : v_) x *= s;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> v_;
};

} // namespace certilev
