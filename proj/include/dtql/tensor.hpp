#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace dtql {

// Dense row-major float64 matrix. Vectors are 1xN, scalars 1x1; that is the
// only shape family the batched MLPs here ever need.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    Tensor(int r, int c, double fill) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    static Tensor scalar(double x);
    static Tensor row(std::initializer_list<double> xs);

    size_t numel() const { return v.size(); }
    bool empty() const { return v.empty(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    double* row_ptr(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
    void resize(int r, int c) {
        rows = r;
        cols = c;
        v.assign(static_cast<size_t>(r) * c, 0.0);
    }

    bool all_finite() const;
    double max_abs() const;
};

// Squared Frobenius distance; shapes must match.
double sq_distance(const Tensor& a, const Tensor& b);

}  // namespace dtql
