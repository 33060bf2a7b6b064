#pragma once

#include <array>
#include <string>
#include <vector>

#include "dtql/rng.hpp"
#include "dtql/tensor.hpp"

namespace dtql {

// Column-batched transition storage: row i of each tensor is one transition.
struct Dataset {
    int state_dim = 0;
    int action_dim = 0;
    Tensor s, a, r, s_next, done;
    std::string scenario;
    uint64_t seed = 0;
    std::string meta_json;  // generator parameters, for the sidecar

    int size() const { return s.rows; }
    void reserve_rows(int n);
    void gather(const std::vector<int>& idx, Tensor& s_out, Tensor& a_out, Tensor& r_out,
                Tensor& sn_out, Tensor& d_out) const;
};

// 2-d bandit scenario: mixture dataset plus a named bounded reward field over
// the action square. States are a single constant dummy coordinate.
struct BanditScenario {
    std::string name;                          // registry key
    std::string dataset_kind;                  // "gauss25" | "swiss"
    std::string reward_name;                   // "corner" | "center" | "single" | "ring"
    std::vector<std::array<double, 2>> mode_centers;
    double mode_std = 0.05;
    int state_dim = 1;
};

const BanditScenario& scenario_by_name(const std::string& name);
std::vector<std::string> scenario_names();

Dataset gen_25gaussian(int n, Rng& rng);
Dataset gen_swiss_roll(int n, Rng& rng);
Dataset make_bandit_dataset(const BanditScenario& sc, int n, uint64_t seed);

// Bounded continuous reward in [0,1]; actions outside the square are clamped
// (and counted, see clamp_warnings).
double reward(const BanditScenario& sc, double ax, double ay);
double reward_row(const BanditScenario& sc, const Tensor& action_row);
int64_t reward_clamp_warnings();

// Deterministic n-state chain with continuous actions in [-1,1]. The action's
// move region (left / stay / right, thresholds +-1/3) drives the position;
// reaching the right end pays 1 and ends the episode.
struct ChainMdp {
    int n_states = 8;
    double gamma = 0.99;
    double move_threshold = 1.0 / 3.0;

    int goal() const { return n_states - 1; }
    int move_of(double action) const;           // -1, 0, +1
    int next_state(int s, double action) const;
    double reward_of(int s, double action) const;  // 1 on transitions into goal
    bool terminal(int s, double action) const;
    double state_coord(int s) const;             // normalized scalar state
};

// Noisy mostly-right behavior rollouts from uniform starts; done marks the
// final transition of each episode.
Dataset gen_chain_dataset(const ChainMdp& mdp, double behavior_noise, int n, Rng& rng);

struct QStarTable {
    std::vector<double> action_grid;
    Tensor q;  // n_states x grid
    int sweeps = 0;
};

// Exact fixed point of the Bellman optimality operator on the action grid.
QStarTable value_iteration(const ChainMdp& mdp, int action_grid_resolution,
                           double tol = 1e-10);
double q_star(const ChainMdp& mdp, const QStarTable& table, int s, double action);

// Binary transitions + JSON sidecar at <path>.json.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace dtql
