#include "dtql/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dtql/errors.hpp"
#include "dtql/kernels.hpp"

namespace dtql {

namespace fs = std::filesystem;

namespace {

// fixed stream ids so every consumer gets an independent deterministic rng
enum Stream : uint64_t {
    kInitDenoiser = 1,
    kInitCritics = 2,
    kInitPolicy = 3,
    kInitFake = 4,
    kDataGen = 10,
    kBatchPretrain = 20,
    kBatchMain = 21,
    kBcNoise = 30,
    kRegNoise = 31,
    kPolicyNoise = 32,
    kFakeNoise = 33,
    kEval = 40,
    kEntropyProbe = 41,
};

std::vector<int> sample_indices(int n, int batch, Rng& rng) {
    std::vector<int> idx(batch);
    for (int i = 0; i < batch; ++i) idx[i] = rng.uniform_int(n);
    return idx;
}

void guard_finite(double loss, const char* what) {
    if (!std::isfinite(loss))
        throw numeric_error(std::string("divergence guard: non-finite ") + what + " loss");
}

struct Nets {
    Denoiser denoiser;
    CriticSet critics;
    std::optional<GaussianPolicy> gaussian;
    std::optional<ImplicitPolicy> implicit;
    std::optional<FakeScoreNet> fake;
};

Nets build_nets(const TrainConfig& cfg, const Dataset& data) {
    Nets n;
    EdmSchedule sched;
    Rng r_den = Rng::fork(cfg.seed, kInitDenoiser);
    n.denoiser = Denoiser::make(data.state_dim, data.action_dim, sched, r_den);
    Rng r_cri = Rng::fork(cfg.seed, kInitCritics);
    n.critics = CriticSet::make(data.state_dim, data.action_dim, cfg.tau, cfg.gamma, cfg.rho,
                                r_cri);
    Rng r_pol = Rng::fork(cfg.seed, kInitPolicy);
    if (cfg.policy_kind == PolicyKind::kGaussian) {
        n.gaussian = GaussianPolicy::make(data.state_dim, data.action_dim, r_pol);
    } else {
        n.implicit = ImplicitPolicy::make(data.state_dim, data.action_dim, sched, r_pol);
    }
    if (cfg.regularizer == Regularizer::kKl) {
        Rng r_fake = Rng::fork(cfg.seed, kInitFake);
        n.fake = Denoiser::make(data.state_dim, data.action_dim, sched, r_fake);
    }
    return n;
}

double cosine_lr(const TrainConfig& cfg, int64_t step, int64_t total) {
    if (!cfg.lr_decay) return cfg.lr;
    double frac = total <= 1 ? 1.0 : static_cast<double>(step) / (total - 1);
    return cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * frac)));
}

}  // namespace

Dataset obtain_dataset(const TrainConfig& cfg) {
    if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path);
    if (cfg.scenario == "chain8") {
        ChainMdp mdp;
        mdp.gamma = cfg.gamma;
        Rng rng = Rng::fork(cfg.seed, kDataGen);
        return gen_chain_dataset(mdp, 0.15, cfg.data_n, rng);
    }
    return make_bandit_dataset(scenario_by_name(cfg.scenario), cfg.data_n, cfg.seed);
}

EvalResult evaluate(const ActionSampler& sampler, const BanditScenario& sc, int n_samples,
                    Rng& rng) {
    EvalResult res;
    Tensor states(n_samples, sc.state_dim);  // constant dummy state
    res.samples = sampler(states, rng);
    double acc = 0.0;
    for (int i = 0; i < n_samples; ++i)
        acc += reward(sc, res.samples.at(i, 0), res.samples.at(i, 1));
    res.mean_reward = acc / n_samples;
    res.coverage.assign(sc.mode_centers.size(), 0.0);
    for (int i = 0; i < n_samples; ++i) {
        for (size_t m = 0; m < sc.mode_centers.size(); ++m) {
            double dx = res.samples.at(i, 0) - sc.mode_centers[m][0];
            double dy = res.samples.at(i, 1) - sc.mode_centers[m][1];
            if (dx * dx + dy * dy <= 0.15 * 0.15) {
                res.coverage[m] += 1.0;
                break;  // disks are disjoint at this radius
            }
        }
    }
    for (auto& c : res.coverage) c /= n_samples;
    for (double c : res.coverage)
        if (c >= 0.05) ++res.covered_modes;
    return res;
}

void write_samples_csv(const EvalResult& eval, const BanditScenario& sc, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw io_error("samples: cannot open " + path);
    os.precision(17);
    os << "x,y,reward\n";
    for (int i = 0; i < eval.samples.rows; ++i) {
        double x = eval.samples.at(i, 0), y = eval.samples.at(i, 1);
        os << x << ',' << y << ',' << reward(sc, x, y) << '\n';
    }
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw io_error("metrics: cannot open " + path);
    os.precision(17);
    os << "epoch,bc_loss,tr_or_kl_loss,q_loss,v_loss,mean_q,policy_entropy_estimate,"
          "eval_mean_reward,mode_coverage\n";
    for (const auto& r : rows)
        os << r.epoch << ',' << r.bc_loss << ',' << r.tr_or_kl_loss << ',' << r.q_loss << ','
           << r.v_loss << ',' << r.mean_q << ',' << r.policy_entropy_estimate << ','
           << r.eval_mean_reward << ',' << r.mode_coverage << '\n';
}

void write_timings_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw io_error("timings: cannot open " + path);
    os << "epoch,wall_seconds\n";
    for (const auto& r : rows) os << r.epoch << ',' << r.wall_seconds << '\n';
}

Pretrained pretrain(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks) {
    cfg.validate();
    Nets nets = build_nets(cfg, data);
    Pretrained out{std::move(nets.denoiser), std::move(nets.critics)};
    if (cfg.pretrain_epochs == 0) return out;  // fresh networks, untouched

    Rng r_batch = Rng::fork(cfg.seed, kBatchPretrain);
    Rng r_bc = Rng::fork(cfg.seed, kBcNoise);
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
    Tensor s, a, r, sn, dn;
    int64_t total = static_cast<int64_t>(cfg.pretrain_epochs) * TrainConfig::steps_per_epoch;
    for (int64_t step = 0; step < total; ++step) {
        auto idx = sample_indices(data.size(), cfg.batch_size, r_batch);
        data.gather(idx, s, a, r, sn, dn);

        if (hooks.on_phase) hooks.on_phase("value");
        {
            Tape tape;
            BoundMlp vb;
            int loss = v_loss(tape, out.critics, s, a, &vb);
            out.final_v_loss = tape.scalar_value(loss);
            guard_finite(out.final_v_loss, "value");
            tape.backward(loss);
            adam_step_mlp(out.critics.v, tape, vb, adam);
        }
        {
            Tape tape;
            QLossGraph g = q_loss(tape, out.critics, s, a, r, sn, dn);
            out.final_q_loss = tape.scalar_value(g.loss);
            guard_finite(out.final_q_loss, "q");
            tape.backward(g.loss);
            adam_step_qs(out.critics, tape, g, adam);
        }
        if (hooks.on_phase) hooks.on_phase("bc");
        {
            Tape tape;
            DiffusionDraws draws = sample_draws(out.denoiser.sched, cfg.batch_size,
                                                data.action_dim, r_bc);
            BoundMlp db;
            int loss = bc_loss(tape, out.denoiser, s, a, draws, &db);
            out.final_bc_loss = tape.scalar_value(loss);
            guard_finite(out.final_bc_loss, "behavior-cloning");
            tape.backward(loss);
            adam_step_mlp(out.denoiser.params, tape, db, adam);
        }
        if (hooks.on_phase) hooks.on_phase("target");
        polyak_update(out.critics);
    }
    return out;
}

ActionSampler TrainResult::sampler() const {
    if (gaussian) {
        const GaussianPolicy* p = &*gaussian;
        return [p](const Tensor& states, Rng& rng) { return sample_batch(*p, states, rng); };
    }
    const ImplicitPolicy* p = &*implicit;
    return [p](const Tensor& states, Rng& rng) { return sample_batch(*p, states, rng); };
}

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    Dataset data = obtain_dataset(cfg);
    const bool is_bandit = cfg.scenario != "chain8" && data.action_dim == 2;
    const BanditScenario* sc = is_bandit ? &scenario_by_name(
                                               data.scenario.empty() ? cfg.scenario : data.scenario)
                                         : nullptr;

    Pretrained pre = pretrain(cfg, data, hooks);
    TrainResult res;
    res.denoiser = std::move(pre.denoiser);
    res.critics = std::move(pre.critics);
    {
        Nets nets = build_nets(cfg, data);
        res.gaussian = std::move(nets.gaussian);
        res.implicit = std::move(nets.implicit);
        res.fake = std::move(nets.fake);
    }
    const bool kl_arm = cfg.regularizer == Regularizer::kKl;
    if (kl_arm) init_from(res.denoiser, *res.implicit, *res.fake);

    Rng r_batch = Rng::fork(cfg.seed, kBatchMain);
    Rng r_bc = Rng::fork(cfg.seed, kBcNoise + 100);
    Rng r_reg = Rng::fork(cfg.seed, kRegNoise);
    Rng r_pol = Rng::fork(cfg.seed, kPolicyNoise);
    Rng r_fake = Rng::fork(cfg.seed, kFakeNoise);
    Rng r_eval = Rng::fork(cfg.seed, kEval);
    Rng r_ent = Rng::fork(cfg.seed, kEntropyProbe);

    Tensor s, a, r, sn, dn;
    int64_t total_steps = static_cast<int64_t>(cfg.epochs) * TrainConfig::steps_per_epoch;
    auto t_start = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr_now = 0;
        double acc_bc = 0, acc_reg = 0, acc_q = 0, acc_v = 0, acc_mq = 0;
        for (int it = 0; it < TrainConfig::steps_per_epoch; ++it) {
            int64_t step = static_cast<int64_t>(epoch) * TrainConfig::steps_per_epoch + it;
            lr_now = cosine_lr(cfg, step, total_steps);
            AdamConfig adam{lr_now, 0.9, 0.999, 1e-8};
            auto idx = sample_indices(data.size(), cfg.batch_size, r_batch);
            data.gather(idx, s, a, r, sn, dn);

            // 1. value function learning (frozen targets / frozen V inside)
            if (!kl_arm) {
                if (hooks.on_phase) hooks.on_phase("value");
                {
                    Tape tape;
                    BoundMlp vb;
                    int loss = v_loss(tape, res.critics, s, a, &vb);
                    acc_v += tape.scalar_value(loss);
                    guard_finite(tape.scalar_value(loss), "value");
                    tape.backward(loss);
                    adam_step_mlp(res.critics.v, tape, vb, adam);
                }
                {
                    Tape tape;
                    QLossGraph g = q_loss(tape, res.critics, s, a, r, sn, dn);
                    acc_q += tape.scalar_value(g.loss);
                    guard_finite(tape.scalar_value(g.loss), "q");
                    tape.backward(g.loss);
                    adam_step_qs(res.critics, tape, g, adam);
                }
                // 2. diffusion policy learning
                if (hooks.on_phase) hooks.on_phase("bc");
                {
                    Tape tape;
                    DiffusionDraws draws =
                        sample_draws(res.denoiser.sched, cfg.batch_size, data.action_dim, r_bc);
                    BoundMlp db;
                    int loss = bc_loss(tape, res.denoiser, s, a, draws, &db);
                    acc_bc += tape.scalar_value(loss);
                    guard_finite(tape.scalar_value(loss), "behavior-cloning");
                    tape.backward(loss);
                    adam_step_mlp(res.denoiser.params, tape, db, adam);
                }
            }

            // 3. one-step policy learning
            if (hooks.on_phase) hooks.on_phase("policy");
            Tensor a_theta_value;
            {
                Tape tape;
                Tensor eps(cfg.batch_size, data.action_dim);
                fill_normal(eps, r_pol);
                PolicyGraph g;
                if (res.gaussian)
                    g = gaussian_sample_graph(tape, *res.gaussian, s, eps);
                else
                    g = implicit_sample_graph(tape, *res.implicit, s, eps);

                DiffusionDraws draws =
                    sample_draws(res.denoiser.sched, cfg.batch_size, data.action_dim, r_reg);
                int reg = -1;
                double reg_value = 0;
                if (cfg.regularizer == Regularizer::kTrustRegion) {
                    reg = trust_region_loss(tape, res.denoiser, g.action, s, draws);
                    reg_value = tape.scalar_value(reg);
                } else if (cfg.regularizer == Regularizer::kSds) {
                    Tensor sg = sds_grad(res.denoiser, tape.value(g.action), s, draws);
                    // surrogate whose gradient at a_theta is sg / batch; its
                    // monitor value reports the implied noise-residual loss
                    double mon = 0;
                    for (int row = 0; row < sg.rows; ++row) {
                        EdmCoeffs c = coefficients(res.denoiser.sched, draws.sigma[row]);
                        double w = draws.sigma[row] * draws.sigma[row] / (c.c_out * c.c_out);
                        mon += kernels::active().sumsq(sg.row_ptr(row), sg.cols) / (4.0 * w);
                    }
                    reg_value = mon / sg.rows;
                    reg = tape.mean_sum(tape.mul_elem(g.action, tape.constant(std::move(sg))));
                } else {
                    KlStepResult kl = kl_policy_step(tape, res.denoiser, *res.fake, g.action, s,
                                                     draws);
                    reg = kl.pseudo_loss;
                    reg_value = tape.scalar_value(reg);
                }
                acc_reg += reg_value;
                guard_finite(reg_value, "regularizer");

                int objective = tape.scale(reg, cfg.alpha);
                if (cfg.q_term) {
                    int qmin = min_q_graph(tape, res.critics, s, g.action);
                    int mq = tape.mean_sum(qmin);
                    acc_mq += tape.scalar_value(mq);
                    objective = tape.sub(objective, mq);
                }
                if (cfg.entropy_enabled && res.gaussian) {
                    if (cfg.entropy_mode == EntropyMode::kDataCrossEntropy) {
                        int ent = entropy_term_graph(tape, *res.gaussian, g, a);
                        objective = tape.add(objective, tape.scale(ent, cfg.entropy_coef));
                    } else {
                        // pathwise differential entropy of the squashed
                        // Gaussian at the sampled actions:
                        // H = E[0.5|eps|^2] + E sum(log_std) + A/2 ln(2pi)
                        //     + E sum log(1 - a^2)
                        int h = tape.add(tape.mean_sum(g.log_std),
                                         tape.mean_sum(tape.log1msq(g.action)));
                        objective = tape.sub(objective, tape.scale(h, cfg.entropy_coef));
                    }
                }
                double obj_value = tape.scalar_value(objective);
                guard_finite(obj_value, "policy objective");
                tape.backward(objective);
                if (res.gaussian) {
                    adam_step_policy(*res.gaussian, tape, g, adam);
                } else {
                    adam_step_mlp(res.implicit->params, tape, g.net, adam);
                }
                a_theta_value = tape.value(g.action);
            }

            // kl arm: fake score regression onto the detached policy actions
            if (kl_arm) {
                if (hooks.on_phase) hooks.on_phase("fake");
                Tape tape;
                DiffusionDraws draws =
                    sample_draws(res.denoiser.sched, cfg.batch_size, data.action_dim, r_fake);
                BoundMlp fb;
                int loss = fake_score_loss(tape, *res.fake, s, a_theta_value, draws, &fb);
                guard_finite(tape.scalar_value(loss), "fake score");
                tape.backward(loss);
                adam_step_mlp(res.fake->params, tape, fb, adam);
            }

            // 4. target network update
            if (!kl_arm) {
                if (hooks.on_phase) hooks.on_phase("target");
                polyak_update(res.critics);
            }
        }

        MetricsRow row;
        row.epoch = epoch;
        row.bc_loss = acc_bc / TrainConfig::steps_per_epoch;
        row.tr_or_kl_loss = acc_reg / TrainConfig::steps_per_epoch;
        row.q_loss = acc_q / TrainConfig::steps_per_epoch;
        row.v_loss = acc_v / TrainConfig::steps_per_epoch;
        row.mean_q = acc_mq / TrainConfig::steps_per_epoch;
        if (is_bandit) {
            ActionSampler sampler = res.sampler();
            EvalResult ev = evaluate(sampler, *sc, cfg.eval_samples, r_eval);
            row.eval_mean_reward = ev.mean_reward;
            row.mode_coverage = ev.covered_modes;
            if (res.gaussian) {
                Tensor s_row(1, data.state_dim);
                row.policy_entropy_estimate = entropy_estimate(*res.gaussian, s_row, 256, r_ent);
            } else {
                row.policy_entropy_estimate = entropy_estimate_knn(ev.samples);
            }
            if (epoch == cfg.epochs - 1) res.final_eval = std::move(ev);
        }
        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        res.metrics.push_back(row);
        res.lr_by_epoch.push_back(lr_now);
    }

    if (!cfg.output_dir.empty()) {
        fs::create_directories(cfg.output_dir);
        fs::path dir(cfg.output_dir);
        write_metrics_csv(res.metrics, (dir / "metrics.csv").string());
        write_timings_csv(res.metrics, (dir / "timings.csv").string());
        std::ofstream cfg_echo(dir / "config.txt");
        cfg_echo << config_to_text(cfg);
        std::map<std::string, std::string> meta{{"scenario", cfg.scenario},
                                                {"seed", std::to_string(cfg.seed)}};
        res.denoiser.save((dir / "denoiser.bin").string(), meta);
        res.critics.save((dir / "critics.bin").string(), meta);
        if (res.gaussian) save_policy(*res.gaussian, (dir / "policy.bin").string(), meta);
        if (res.implicit) save_policy(*res.implicit, (dir / "policy.bin").string(), meta);
        if (res.fake) {
            auto fmeta = meta;
            fmeta["kind"] = "fake_score";
            res.fake->save((dir / "fake.bin").string(), fmeta);
        }
        if (is_bandit) write_samples_csv(res.final_eval, *sc, (dir / "samples.csv").string());
        save_dataset(data, (dir / "dataset.bin").string());
    }
    return res;
}

std::vector<SuiteRow> run_suite(const std::string& config_dir, const std::string& out_dir) {
    std::vector<fs::path> cfgs;
    for (const auto& e : fs::directory_iterator(config_dir))
        if (e.path().extension() == ".cfg") cfgs.push_back(e.path());
    std::sort(cfgs.begin(), cfgs.end());
    if (cfgs.empty()) throw usage_error("suite: no .cfg files in " + config_dir);

    std::vector<SuiteRow> rows;
    for (const auto& path : cfgs) {
        SuiteRow row;
        row.name = path.stem().string();
        try {
            TrainConfig cfg = parse_config_file(path.string());
            cfg.output_dir = (fs::path(out_dir) / row.name).string();
            row.scenario = cfg.scenario;
            row.regularizer = regularizer_name(cfg.regularizer);
            TrainResult res = train(cfg);
            const MetricsRow& last = res.metrics.back();
            row.final_reward = last.eval_mean_reward;
            row.modes_covered = last.mode_coverage;
            row.final_entropy = last.policy_entropy_estimate;
        } catch (const std::exception& e) {
            row.failed = true;  // per-arm isolation: keep going
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    fs::create_directories(out_dir);
    write_suite_report(rows, (fs::path(out_dir) / "report.csv").string());
    return rows;
}

void write_suite_report(const std::vector<SuiteRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw io_error("suite: cannot open " + path);
    os.precision(17);
    os << "name,scenario,regularizer,status,final_reward,modes_covered,final_entropy\n";
    for (const auto& r : rows)
        os << r.name << ',' << r.scenario << ',' << r.regularizer << ','
           << (r.failed ? "failed" : "ok") << ',' << r.final_reward << ',' << r.modes_covered
           << ',' << r.final_entropy << '\n';
}

}  // namespace dtql
