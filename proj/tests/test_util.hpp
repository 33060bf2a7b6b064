#pragma once

// Shared helpers for the test suites: finite-difference oracles and
// tolerance checks.

#include <cmath>
#include <functional>

#include "dtql/nn.hpp"
#include "dtql/tensor.hpp"

namespace dtql::testutil {

inline bool rel_close(double a, double b, double rtol, double atol = 0.0) {
    return std::fabs(a - b) <= atol + rtol * std::max(std::fabs(a), std::fabs(b));
}

// Central finite difference of a scalar-valued function with respect to one
// coordinate of a tensor owned elsewhere.
inline double central_diff(Tensor& storage, size_t flat_index,
                           const std::function<double()>& eval, double h = 1e-5) {
    double saved = storage.v[flat_index];
    storage.v[flat_index] = saved + h;
    double up = eval();
    storage.v[flat_index] = saved - h;
    double down = eval();
    storage.v[flat_index] = saved;
    return (up - down) / (2.0 * h);
}

// Relative error between an analytic gradient coordinate and its
// finite-difference estimate, with a floor for near-zero pairs.
inline double grad_rel_err(double analytic, double fd) {
    double denom = std::max({std::fabs(analytic), std::fabs(fd), 1e-8});
    return std::fabs(analytic - fd) / denom;
}

// Checks a sample of parameter coordinates of one store against central
// differences of `eval` (which must rebuild the loss from current values).
// Returns the worst relative error seen.
inline double check_store_gradients(ParamStore& store,
                                    const std::function<double()>& eval,
                                    const std::function<const Tensor&(const std::string&)>& grad_of,
                                    int coords_per_param, Rng& pick, double h = 1e-5) {
    double worst = 0.0;
    for (auto& p : store.entries()) {
        const Tensor& g = grad_of(p.name);
        int n = static_cast<int>(p.value.numel());
        for (int c = 0; c < coords_per_param; ++c) {
            size_t i = static_cast<size_t>(pick.uniform_int(n));
            double fd = central_diff(p.value, i, eval, h);
            worst = std::max(worst, grad_rel_err(g.v[i], fd));
        }
    }
    return worst;
}

}  // namespace dtql::testutil
