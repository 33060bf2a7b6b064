#pragma once

#include <map>
#include <string>

#include "dtql/nn.hpp"

namespace dtql {

// Double Q with Polyak targets plus a state-value net for expectile
// regression. Targets only ever change through polyak_update.
struct CriticSet {
    MlpSpec q_spec;  // (s,a) -> scalar
    MlpSpec v_spec;  // s -> scalar
    ParamStore q1, q2, q1_target, q2_target, v;
    int state_dim = 0;
    int action_dim = 0;
    double tau = 0.7;
    double gamma = 0.99;
    double rho = 0.995;

    static CriticSet make(int state_dim, int action_dim, double tau, double gamma, double rho,
                          Rng& rng, int hidden = 256, int layers = 4);

    Tensor q_input(const Tensor& s, const Tensor& a) const;
    Tensor min_q(const Tensor& s, const Tensor& a, bool use_target) const;  // B x 1
    Tensor v_of(const Tensor& s) const;                                     // B x 1

    void save(const std::string& path, std::map<std::string, std::string> extra_meta = {}) const;
    static CriticSet load(const std::string& path);
};

double expectile_loss(double u, double tau);

// Expectile regression of V toward min of the frozen target critics.
int v_loss(Tape& tape, CriticSet& c, const Tensor& s, const Tensor& a, BoundMlp* bound_out);

// Bellman regression of both critics onto r + gamma*(1-done)*V(s'), V frozen;
// the loss averages the two critics' mean squared errors.
struct QLossGraph {
    int loss = -1;
    BoundMlp q1, q2;
};
QLossGraph q_loss(Tape& tape, CriticSet& c, const Tensor& s, const Tensor& a, const Tensor& r,
                  const Tensor& s_next, const Tensor& done);

// Graph min-Q at differentiable actions against frozen online critics.
int min_q_graph(Tape& tape, const CriticSet& c, const Tensor& s, int a_node);

void polyak_update(CriticSet& c);

void adam_step_qs(CriticSet& c, Tape& tape, const QLossGraph& g, const AdamConfig& cfg);

}  // namespace dtql
