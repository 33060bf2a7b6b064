#pragma once

#include "dtql/denoiser.hpp"
#include "dtql/policy.hpp"

namespace dtql {

// Score network trained on generated actions; architecture mirrors the real
// denoiser so parameter copies are well-defined.
using FakeScoreNet = Denoiser;

// theta <- phi, xi <- phi. The implicit policy shares the denoiser trunk
// family, so both copies are byte-for-byte.
void init_from(const Denoiser& source, ImplicitPolicy& policy, FakeScoreNet& fake);

// One policy step of the score-difference scheme: with gradients disabled,
// predict clean actions from both score nets at the noised policy actions,
// divide their gap by the per-row mean absolute deviation |a_theta - pred_real|
// (floored at 1e-8), and inject the result through a stop-gradient quadratic.
// loss = 0.5 * mean_rows |a_theta - stopgrad(a_theta - grad)|^2, so the
// backward signal at a_theta equals grad / batch exactly.
struct KlStepResult {
    int pseudo_loss = -1;   // tape node
    Tensor grad;            // per-row update direction (pre 1/batch)
    double weighting_floor_hits = 0;
};

KlStepResult kl_policy_step(Tape& tape, const Denoiser& real, const FakeScoreNet& fake,
                            int a_theta, const Tensor& s, const DiffusionDraws& draws);

// Denoising regression of the fake score net onto detached policy actions;
// same preconditioned objective as the behavior-cloning loss.
int fake_score_loss(Tape& tape, FakeScoreNet& fake, const Tensor& s, const Tensor& a_theta_detached,
                    const DiffusionDraws& draws, BoundMlp* bound_out);

}  // namespace dtql
