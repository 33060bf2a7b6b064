#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "dtql/errors.hpp"
#include "dtql/trainer.hpp"
#include "json.hpp"

using namespace dtql;

namespace {

int cmd_gen_data(const std::string& scenario, int n, uint64_t seed, const std::string& out) {
    Dataset d;
    if (scenario == "chain8") {
        ChainMdp mdp;
        Rng rng = Rng::fork(seed, 10);
        d = gen_chain_dataset(mdp, 0.15, n, rng);
        d.seed = seed;
        nlohmann::json j = nlohmann::json::parse(d.meta_json);
        j["seed"] = seed;
        d.meta_json = j.dump(2);
    } else {
        d = make_bandit_dataset(scenario_by_name(scenario), n, seed);
    }
    save_dataset(d, out);
    std::cout << "wrote " << d.size() << " transitions (" << scenario << ") to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& regularizer_override) {
    TrainConfig cfg = parse_config_file(config_path);
    if (!regularizer_override.empty()) {
        if (regularizer_override == "tr") cfg.regularizer = Regularizer::kTrustRegion;
        else if (regularizer_override == "kl") cfg.regularizer = Regularizer::kKl;
        else if (regularizer_override == "sds") cfg.regularizer = Regularizer::kSds;
        else throw config_error("--regularizer must be tr|kl|sds");
        if (cfg.regularizer == Regularizer::kKl) cfg.policy_kind = PolicyKind::kImplicit;
        cfg.validate();
    }
    if (cfg.output_dir.empty())
        throw config_error("config: output_dir is required for the train command");
    TrainResult res = train(cfg);
    const MetricsRow& last = res.metrics.back();
    std::cout << "done: epochs=" << cfg.epochs << " reward=" << last.eval_mean_reward
              << " modes=" << last.mode_coverage << " metrics=" << cfg.output_dir
              << "/metrics.csv\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, int n, uint64_t seed, const std::string& out) {
    auto meta = peek_meta(checkpoint);
    std::string kind = meta.count("kind") ? meta["kind"] : "";
    std::string scenario = meta.count("scenario") ? meta["scenario"] : "";
    if (scenario.empty()) throw usage_error("eval: checkpoint carries no scenario tag");
    const BanditScenario& sc = scenario_by_name(scenario);
    ActionSampler sampler;
    GaussianPolicy gp;
    ImplicitPolicy ip;
    if (kind == "gaussian_policy") {
        gp = load_gaussian_policy(checkpoint);
        sampler = [&gp](const Tensor& s, Rng& rng) { return sample_batch(gp, s, rng); };
    } else if (kind == "implicit_policy") {
        ip = load_implicit_policy(checkpoint);
        sampler = [&ip](const Tensor& s, Rng& rng) { return sample_batch(ip, s, rng); };
    } else {
        throw usage_error("eval: checkpoint is not a policy (kind=" + kind + ")");
    }
    Rng rng = Rng::fork(seed, 40);
    EvalResult ev = evaluate(sampler, sc, n, rng);
    std::cout << "mean_reward=" << ev.mean_reward << " modes_covered=" << ev.covered_modes
              << "\n";
    if (!out.empty()) {
        write_samples_csv(ev, sc, out);
        std::cout << "samples -> " << out << "\n";
    }
    return 0;
}

int cmd_lossfield(const std::string& checkpoint, double sigma, int grid, int n_noise,
                  uint64_t seed, const std::string& out) {
    Denoiser den = Denoiser::load(checkpoint);
    Tensor s_row(1, den.state_dim);
    LossField f = eval_loss_field(den, s_row, grid, sigma, n_noise, seed);
    write_loss_field_csv(f, out);
    nlohmann::json j;
    j["sigma"] = sigma;
    j["n_noise"] = n_noise;
    j["seed"] = seed;
    j["grid"] = grid;
    std::ofstream js(out + ".json");
    js << j.dump(2) << "\n";
    std::cout << "field " << grid << "x" << grid << " at sigma=" << sigma << " -> " << out
              << "\n";
    return 0;
}

int cmd_suite(const std::string& configs, const std::string& out) {
    auto rows = run_suite(configs, out);
    int failures = 0;
    for (const auto& r : rows) {
        std::cout << r.name << ": "
                  << (r.failed ? "FAILED (" + r.error + ")"
                               : "reward=" + std::to_string(r.final_reward) +
                                     " modes=" + std::to_string(r.modes_covered))
                  << "\n";
        failures += r.failed ? 1 : 0;
    }
    std::cout << "report -> " << out << "/report.csv\n";
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"offline RL laboratory: diffusion-regularized one-step policies"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a scenario dataset");
    std::string scenario = "gauss25-corner", out = "dataset.bin";
    int n = 10000;
    uint64_t seed = 0;
    gen->add_option("--scenario", scenario,
                    "scenario name (gauss25-corner, gauss25-single, swiss-center, swiss-ring, "
                    "chain8)");
    gen->add_option("--n", n, "number of transitions");
    gen->add_option("--seed", seed, "rng seed");
    gen->add_option("--out", out, "output path")->required();

    auto* tr = app.add_subcommand("train", "run one training configuration");
    std::string config_path, reg_override;
    tr->add_option("--config", config_path, "key=value config file")->required();
    tr->add_option("--regularizer", reg_override, "override: tr|kl|sds");

    auto* ev = app.add_subcommand("eval", "evaluate a policy checkpoint");
    std::string ckpt, samples_out;
    int eval_n = 1000;
    uint64_t eval_seed = 0;
    ev->add_option("--checkpoint", ckpt, "policy checkpoint")->required();
    ev->add_option("--n", eval_n, "number of samples");
    ev->add_option("--seed", eval_seed, "rng seed");
    ev->add_option("--out", samples_out, "write x,y,reward samples here");

    auto* lf = app.add_subcommand("lossfield", "export a denoising-loss field");
    std::string lf_ckpt, lf_out = "field.csv";
    double lf_sigma = 0.05;
    int lf_grid = 41, lf_noise = 64;
    uint64_t lf_seed = 0;
    lf->add_option("--checkpoint", lf_ckpt, "denoiser checkpoint")->required();
    lf->add_option("--sigma", lf_sigma, "noise level");
    lf->add_option("--grid", lf_grid, "lattice size per axis");
    lf->add_option("--n-noise", lf_noise, "noise draws per cell");
    lf->add_option("--seed", lf_seed, "rng seed");
    lf->add_option("--out", lf_out, "output csv (sidecar json alongside)");

    auto* su = app.add_subcommand("suite", "run every .cfg in a directory");
    std::string suite_cfgs, suite_out = "suite_out";
    su->add_option("--configs", suite_cfgs, "directory of .cfg files")->required();
    su->add_option("--out", suite_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(scenario, n, seed, out);
        if (tr->parsed()) return cmd_train(config_path, reg_override);
        if (ev->parsed()) return cmd_eval(ckpt, eval_n, eval_seed, samples_out);
        if (lf->parsed()) return cmd_lossfield(lf_ckpt, lf_sigma, lf_grid, lf_noise, lf_seed, lf_out);
        if (su->parsed()) return cmd_suite(suite_cfgs, suite_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
