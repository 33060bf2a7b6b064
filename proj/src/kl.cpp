#include "dtql/kl.hpp"

#include <cmath>

#include "dtql/errors.hpp"

namespace dtql {

void init_from(const Denoiser& source, ImplicitPolicy& policy, FakeScoreNet& fake) {
    if (policy.spec.widths != source.spec.widths || fake.spec.widths != source.spec.widths)
        throw config_error("init_from: architectures do not match the source denoiser");
    policy.params.copy_values_from(source.params);
    fake.params.copy_values_from(source.params);
}

KlStepResult kl_policy_step(Tape& tape, const Denoiser& real, const FakeScoreNet& fake,
                            int a_theta, const Tensor& s, const DiffusionDraws& draws) {
    const Tensor& a = tape.value(a_theta);
    int B = a.rows;
    if (B == 0) throw usage_error("kl_policy_step: empty batch");
    int A = real.action_dim;

    // with_no_grad: both score-net predictions at the noised policy actions
    Tensor a_t(B, A);
    for (int r = 0; r < B; ++r)
        for (int j = 0; j < A; ++j)
            a_t.at(r, j) = a.at(r, j) + draws.sigma[r] * draws.eps.at(r, j);
    Tensor in_real = real.assemble_input(a_t, draws.sigma, s);
    Tensor f_real = mlp_infer(real.spec, real.params, in_real);
    Tensor f_fake = mlp_infer(fake.spec, fake.params, real.assemble_input(a_t, draws.sigma, s));

    KlStepResult res;
    res.grad.resize(B, A);
    for (int r = 0; r < B; ++r) {
        EdmCoeffs c = coefficients(real.sched, draws.sigma[r]);
        double dev = 0.0;
        std::vector<double> pr(A), pf(A);
        for (int j = 0; j < A; ++j) {
            pr[j] = c.c_skip * a_t.at(r, j) + c.c_out * f_real.at(r, j);
            pf[j] = c.c_skip * a_t.at(r, j) + c.c_out * f_fake.at(r, j);
            dev += std::fabs(a.at(r, j) - pr[j]);
        }
        double wf = dev / A;  // per-row mean over action dims
        if (wf < 1e-8) {
            wf = 1e-8;
            res.weighting_floor_hits += 1;
        }
        for (int j = 0; j < A; ++j) res.grad.at(r, j) = (pf[j] - pr[j]) / wf;
    }

    // 0.5 * mean_rows |a - stopgrad(a - grad)|^2
    Tensor shifted = a;
    for (size_t i = 0; i < shifted.v.size(); ++i) shifted.v[i] -= res.grad.v[i];
    int diff = tape.sub(a_theta, tape.constant(std::move(shifted)));
    res.pseudo_loss = tape.scale(tape.mean_sumsq(diff), 0.5);
    return res;
}

int fake_score_loss(Tape& tape, FakeScoreNet& fake, const Tensor& s,
                    const Tensor& a_theta_detached, const DiffusionDraws& draws,
                    BoundMlp* bound_out) {
    return bc_loss(tape, fake, s, a_theta_detached, draws, bound_out);
}

}  // namespace dtql
