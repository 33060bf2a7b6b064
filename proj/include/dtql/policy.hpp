#pragma once

#include <map>
#include <optional>
#include <string>

#include "dtql/denoiser.hpp"
#include "dtql/nn.hpp"

namespace dtql {

// Tanh-squashed diagonal Gaussian: shared ReLU trunk, separate mean and
// log-std heads, log-std clamped to [-10, 2].
struct GaussianPolicy {
    MlpSpec trunk;          // state -> features
    MlpSpec mean_head;      // features -> action
    MlpSpec logstd_head;    // features -> action
    ParamStore params;      // trunk + both heads, distinct prefixes
    int state_dim = 0;
    int action_dim = 0;
    double log_std_min = -10.0;
    double log_std_max = 2.0;

    static GaussianPolicy make(int state_dim, int action_dim, Rng& rng, int hidden = 256);

    // mean / clamped log-std rows for a state batch (no tape).
    void heads(const Tensor& s, Tensor& mean, Tensor& log_std) const;
};

// Deterministic map (s, eps) -> a with the same trunk family as the denoiser,
// so fake-score initialization can copy parameters one-for-one.
struct ImplicitPolicy {
    MlpSpec spec;
    ParamStore params;
    EdmSchedule sched;      // only c_noise(sigma_gen) feeds the embedding
    int state_dim = 0;
    int action_dim = 0;
    int embed_dim = 0;
    double sigma_gen = 80.0;

    static ImplicitPolicy make(int state_dim, int action_dim, const EdmSchedule& sched, Rng& rng,
                               int embed_dim = 16, int hidden = 256, int layers = 4);

    Tensor act(const Tensor& s, const Tensor& eps) const;
};

struct SampleResult {
    Tensor action;
    std::optional<double> log_prob;  // absent for the implicit policy
};

SampleResult sample(const GaussianPolicy& p, const Tensor& s_row, Rng& rng);
SampleResult sample(const ImplicitPolicy& p, const Tensor& s_row, Rng& rng);

// Batched stochastic actions (one rng draw per row).
Tensor sample_batch(const GaussianPolicy& p, const Tensor& s, Rng& rng);
Tensor sample_batch(const ImplicitPolicy& p, const Tensor& s, Rng& rng);

// Log-density of a under the squashed Gaussian, including the
// -sum log(1 - a_i^2) change-of-variables term. Components are clipped just
// inside (-1, 1).
double log_prob(const GaussianPolicy& p, const Tensor& s_row, const Tensor& a_row);

// --- graph builders -------------------------------------------------------

struct PolicyGraph {
    int action = -1;    // B x A node, reparameterized
    int mean = -1;      // B x A pre-squash mean node (Gaussian only)
    int log_std = -1;   // B x A clamped log-std node (Gaussian only)
    BoundMlp trunk, mean_head, logstd_head;  // Gaussian
    BoundMlp net;                            // implicit
};

// a = tanh(mean + exp(log_std) ⊙ eps); eps is a frozen constant.
PolicyGraph gaussian_sample_graph(Tape& tape, GaussianPolicy& p, const Tensor& s,
                                  const Tensor& eps);
PolicyGraph implicit_sample_graph(Tape& tape, ImplicitPolicy& p, const Tensor& s,
                                  const Tensor& eps);

// -E log pi(a|s) over dataset pairs; cross-entropy on data actions. The
// alternative (true differential entropy of the current policy, estimated
// pathwise from fresh samples) is selected by the caller via fresh eps.
int entropy_term_graph(Tape& tape, GaussianPolicy& p, PolicyGraph& g, const Tensor& a_data);

// Monte-Carlo differential entropy estimate of the squashed Gaussian at s.
double entropy_estimate(const GaussianPolicy& p, const Tensor& s_row, int n, Rng& rng);
// Kozachenko-Leonenko 1-NN estimate from samples (implicit policies).
double entropy_estimate_knn(const Tensor& samples);

void adam_step_policy(GaussianPolicy& p, Tape& tape, const PolicyGraph& g, const AdamConfig& cfg);

void save_policy(const GaussianPolicy& p, const std::string& path,
                 std::map<std::string, std::string> extra_meta = {});
void save_policy(const ImplicitPolicy& p, const std::string& path,
                 std::map<std::string, std::string> extra_meta = {});
std::string policy_kind_at(const std::string& path);
GaussianPolicy load_gaussian_policy(const std::string& path,
                                    std::map<std::string, std::string>* meta_out = nullptr);
ImplicitPolicy load_implicit_policy(const std::string& path,
                                    std::map<std::string, std::string>* meta_out = nullptr);

}  // namespace dtql
