#pragma once

#include <map>
#include <string>

#include "dtql/edm.hpp"
#include "dtql/nn.hpp"

namespace dtql {

// Noise-conditioned action denoiser: the behavior-cloning diffusion policy.
// The raw network takes [c_in*a_t | s | embed(c_noise)] and predicts a
// unit-scale residual; the preconditioner turns that into a clean action.
struct Denoiser {
    MlpSpec spec;
    ParamStore params;
    EdmSchedule sched;
    int state_dim = 0;
    int action_dim = 0;
    int embed_dim = 0;

    static Denoiser make(int state_dim, int action_dim, const EdmSchedule& sched, Rng& rng,
                         int embed_dim = 16, int hidden = 256, int layers = 4);

    // Raw-network input for a batch of noisy actions at per-row sigma.
    Tensor assemble_input(const Tensor& a_t, const std::vector<double>& sigma,
                          const Tensor& s) const;

    // c_skip*a_t + c_out*F(c_in*a_t, c_noise | s), one sigma for all rows.
    Tensor denoise(const Tensor& a_t, double sigma, const Tensor& s) const;

    void save(const std::string& path, std::map<std::string, std::string> extra_meta = {}) const;
    static Denoiser load(const std::string& path, std::map<std::string, std::string>* meta_out = nullptr);
};

// Behavior-cloning denoising loss on the preconditioned residual, weighted by
// lambda*c_out^2 (identically one under this schedule). Gradients flow to the
// network only; returns the loss node.
int bc_loss(Tape& tape, Denoiser& d, const Tensor& s, const Tensor& a0,
            const DiffusionDraws& draws, BoundMlp* bound_out);

// Same residual form evaluated at generated actions, with the denoiser frozen
// and gradients flowing into a_theta through both the noisy input (the
// network-input Jacobian path) and the regression target.
int trust_region_loss(Tape& tape, const Denoiser& frozen, int a_theta, const Tensor& s,
                      const DiffusionDraws& draws);

// Noise-residual gradient with the denoiser Jacobian detached: per-row
// 2 * w(sigma) * (eps_hat - eps), w = sigma^2/c_out^2, where eps_hat is the
// noise implied by the frozen denoiser at a_theta + sigma*eps. Matches the
// trust-region convention so the two differ exactly by the denoiser Jacobian.
Tensor sds_grad(const Denoiser& frozen, const Tensor& a_theta, const Tensor& s,
                const DiffusionDraws& draws);

// Monte-Carlo field of E_eps |denoise(a + sigma*eps) - a|^2 on an n x n
// lattice over [-1,1]^2. Per-cell rng derived from (seed, cell), so the field
// is independent of traversal order and safe to fill in parallel.
struct LossField {
    int n = 0;
    double sigma = 0.0;
    int n_noise = 0;
    uint64_t seed = 0;
    std::vector<double> xs;      // lattice coordinates (shared by x and y)
    Tensor loss;                 // n x n, loss[iy][ix]
};

LossField eval_loss_field(const Denoiser& frozen, const Tensor& s_row, int grid_n, double sigma,
                          int n_noise, uint64_t seed);

void write_loss_field_csv(const LossField& f, const std::string& csv_path);

}  // namespace dtql
