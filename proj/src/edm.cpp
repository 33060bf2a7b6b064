#include "dtql/edm.hpp"

#include <cmath>

#include "dtql/errors.hpp"

namespace dtql {

void EdmSchedule::validate() const {
    if (!(sigma_min > 0.0 && sigma_min < sigma_max))
        throw config_error("EdmSchedule: need 0 < sigma_min < sigma_max");
    if (!(sigma_data > 0.0)) throw config_error("EdmSchedule: sigma_data must be positive");
    if (!(logistic_scale > 0.0)) throw config_error("EdmSchedule: logistic_scale must be positive");
}

double sample_sigma(const EdmSchedule& s, Rng& rng) {
    double log_sigma = rng.logistic(s.logistic_location, s.logistic_scale);
    double sigma = std::exp(log_sigma);
    if (sigma < s.sigma_min) sigma = s.sigma_min;
    if (sigma > s.sigma_max) sigma = s.sigma_max;
    return sigma;
}

EdmCoeffs coefficients(const EdmSchedule& s, double sigma) {
    if (!(sigma > 0.0)) throw config_error("coefficients: sigma must be positive");
    double sd2 = s.sigma_data * s.sigma_data;
    double tot = sigma * sigma + sd2;
    EdmCoeffs c;
    c.c_skip = sd2 / tot;
    c.c_out = sigma * s.sigma_data / std::sqrt(tot);
    c.c_in = 1.0 / std::sqrt(tot);
    c.c_noise = 0.25 * std::log(sigma);
    c.lambda = 1.0 / (c.c_out * c.c_out);
    return c;
}

Tensor perturb(const Tensor& a0, double sigma, const Tensor& eps) {
    if (!a0.same_shape(eps)) throw config_error("perturb: eps shape mismatch");
    Tensor out = a0;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += sigma * eps.v[i];
    return out;
}

double snr(double t) {
    if (!(t > 0.0)) throw config_error("snr: t must be positive");
    return 1.0 / (t * t);
}

double elbo_weight(double t) {
    if (!(t > 0.0)) throw config_error("elbo_weight: t must be positive");
    return 2.0 / (t * t * t);
}

DiffusionDraws sample_draws(const EdmSchedule& s, int batch, int dim, Rng& rng) {
    DiffusionDraws d;
    d.sigma.resize(batch);
    d.eps.resize(batch, dim);
    for (int i = 0; i < batch; ++i) d.sigma[i] = sample_sigma(s, rng);
    fill_normal(d.eps, rng);
    return d;
}

}  // namespace dtql
