#include "dtql/tensor.hpp"

#include <cmath>

#include "dtql/errors.hpp"

namespace dtql {

Tensor Tensor::scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
}

Tensor Tensor::row(std::initializer_list<double> xs) {
    Tensor t(1, static_cast<int>(xs.size()));
    int i = 0;
    for (double x : xs) t.v[i++] = x;
    return t;
}

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

double sq_distance(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw config_error("sq_distance: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        double d = a.v[i] - b.v[i];
        s += d * d;
    }
    return s;
}

}  // namespace dtql
