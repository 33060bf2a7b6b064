#pragma once

#include "dtql/rng.hpp"
#include "dtql/tensor.hpp"

namespace dtql {

// Continuous-time noise schedule with identity signal scale: a_t = a0 + t*eps,
// sigma_t = t. Noise levels are sampled log-logistically and clamped to
// [sigma_min, sigma_max].
struct EdmSchedule {
    double sigma_data = 0.5;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double logistic_location = -0.6931471805599453;  // ln(sigma_data)
    double logistic_scale = 0.5;

    void validate() const;
};

struct EdmCoeffs {
    double c_skip;
    double c_out;
    double c_in;
    double c_noise;
    double lambda;  // 1 / c_out^2, makes the preconditioned residual unit-weighted
};

double sample_sigma(const EdmSchedule& s, Rng& rng);
EdmCoeffs coefficients(const EdmSchedule& s, double sigma);

// a0 + sigma * eps; shapes must match.
Tensor perturb(const Tensor& a0, double sigma, const Tensor& eps);

// Squared signal-to-noise ratio 1/t^2 and its negative time derivative 2/t^3;
// both positive and strictly monotone for t > 0.
double snr(double t);
double elbo_weight(double t);

// One (sigma, eps) pair per batch row.
struct DiffusionDraws {
    std::vector<double> sigma;
    Tensor eps;
};

DiffusionDraws sample_draws(const EdmSchedule& s, int batch, int dim, Rng& rng);

}  // namespace dtql
