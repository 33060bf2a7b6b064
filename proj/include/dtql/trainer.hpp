#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtql/critics.hpp"
#include "dtql/denoiser.hpp"
#include "dtql/envs.hpp"
#include "dtql/kl.hpp"
#include "dtql/policy.hpp"

namespace dtql {

enum class Regularizer { kTrustRegion, kKl, kSds };
enum class PolicyKind { kGaussian, kImplicit };
enum class EntropyMode { kDataCrossEntropy, kPolicyEntropy };

struct TrainConfig {
    std::string scenario = "gauss25-corner";
    Regularizer regularizer = Regularizer::kTrustRegion;
    PolicyKind policy_kind = PolicyKind::kGaussian;
    double alpha = 1.0;
    double tau = 0.7;
    double gamma = 0.99;
    double rho = 0.995;
    bool entropy_enabled = false;
    double entropy_coef = 0.05;
    EntropyMode entropy_mode = EntropyMode::kDataCrossEntropy;
    bool q_term = true;            // off = pure behavior distillation
    double lr = 3e-4;
    bool lr_decay = false;         // cosine to 10% of lr over the main loop
    int batch_size = 256;
    int pretrain_epochs = 50;
    int epochs = 1;
    static constexpr int steps_per_epoch = 1000;
    uint64_t seed = 0;
    std::string output_dir;
    int eval_samples = 1000;
    int data_n = 10000;
    std::string dataset_path;      // empty: generate from scenario + seed

    void validate() const;
};

TrainConfig parse_config_file(const std::string& path);
TrainConfig parse_config_text(const std::string& text);
std::string config_to_text(const TrainConfig& cfg);

struct MetricsRow {
    int epoch = 0;
    double bc_loss = 0;
    double tr_or_kl_loss = 0;
    double q_loss = 0;
    double v_loss = 0;
    double mean_q = 0;
    double policy_entropy_estimate = 0;
    double eval_mean_reward = 0;
    int mode_coverage = 0;  // modes holding at least 5% of eval samples
    double wall_seconds = 0;
};

// metrics.csv carries every deterministic column; wall_seconds goes to a
// timings.csv sidecar so repeated runs produce byte-identical metrics.
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);
void write_timings_csv(const std::vector<MetricsRow>& rows, const std::string& path);

struct EvalResult {
    double mean_reward = 0;
    std::vector<double> coverage;  // share of samples within 0.15 of each center
    int covered_modes = 0;         // centers with >= 5% occupancy
    Tensor samples;
};

using ActionSampler = std::function<Tensor(const Tensor& states, Rng& rng)>;

EvalResult evaluate(const ActionSampler& sampler, const BanditScenario& sc, int n_samples,
                    Rng& rng);
void write_samples_csv(const EvalResult& eval, const BanditScenario& sc, const std::string& path);

struct TrainHooks {
    // phase in {"value", "bc", "policy", "target", "fake"}, fired in order
    std::function<void(const char*)> on_phase;
};

struct Pretrained {
    Denoiser denoiser;
    CriticSet critics;
    double final_bc_loss = 0;
    double final_q_loss = 0;
    double final_v_loss = 0;
};

Dataset obtain_dataset(const TrainConfig& cfg);

// Behavior cloning plus critic regression only (no policy updates).
Pretrained pretrain(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks = {});

struct TrainResult {
    std::vector<MetricsRow> metrics;
    std::vector<double> lr_by_epoch;
    Denoiser denoiser;
    CriticSet critics;
    std::optional<GaussianPolicy> gaussian;
    std::optional<ImplicitPolicy> implicit;
    std::optional<FakeScoreNet> fake;
    EvalResult final_eval;

    ActionSampler sampler() const;
};

// Full pipeline for the selected arm; writes metrics, samples and
// checkpoints when cfg.output_dir is set. Deterministic given (config, seed).
TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {});

// Runs every .cfg in the directory (sorted) and writes a comparison report.
struct SuiteRow {
    std::string name;
    std::string scenario;
    std::string regularizer;
    bool failed = false;
    std::string error;
    double final_reward = 0;
    int modes_covered = 0;
    double final_entropy = 0;
};

std::vector<SuiteRow> run_suite(const std::string& config_dir, const std::string& out_dir);
void write_suite_report(const std::vector<SuiteRow>& rows, const std::string& path);

std::string regularizer_name(Regularizer r);
std::string policy_kind_name(PolicyKind k);

}  // namespace dtql
