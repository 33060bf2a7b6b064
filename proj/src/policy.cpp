#include "dtql/policy.hpp"

#include <cmath>

#include "dtql/errors.hpp"
#include "dtql/kernels.hpp"

namespace dtql {

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*ln(2*pi)
constexpr double kActionClip = 1.0 - 1e-6;

double atanh_clipped(double a) {
    if (a > kActionClip) a = kActionClip;
    if (a < -kActionClip) a = -kActionClip;
    return std::atanh(a);
}
}  // namespace

GaussianPolicy GaussianPolicy::make(int state_dim, int action_dim, Rng& rng, int hidden) {
    GaussianPolicy p;
    p.state_dim = state_dim;
    p.action_dim = action_dim;
    p.trunk = MlpSpec::make(state_dim, hidden, hidden, 2, Act::kRelu);
    p.mean_head = MlpSpec::make(hidden, action_dim, hidden, 1, Act::kRelu);
    p.logstd_head = MlpSpec::make(hidden, action_dim, hidden, 1, Act::kRelu);
    init_mlp(p.params, p.trunk, rng, "trunk.");
    init_mlp(p.params, p.mean_head, rng, "mean.");
    init_mlp(p.params, p.logstd_head, rng, "std.");
    return p;
}

void GaussianPolicy::heads(const Tensor& s, Tensor& mean, Tensor& log_std) const {
    Tensor h = mlp_infer(trunk, params, s, "trunk.");
    kernels::active().relu(h.data(), h.data(), h.numel());  // trunk output is also rectified
    mean = mlp_infer(mean_head, params, h, "mean.");
    log_std = mlp_infer(logstd_head, params, h, "std.");
    for (auto& v : log_std.v) v = std::min(std::max(v, log_std_min), log_std_max);
}

ImplicitPolicy ImplicitPolicy::make(int state_dim, int action_dim, const EdmSchedule& sched,
                                    Rng& rng, int embed_dim, int hidden, int layers) {
    ImplicitPolicy p;
    p.state_dim = state_dim;
    p.action_dim = action_dim;
    p.embed_dim = embed_dim;
    p.sched = sched;
    p.sigma_gen = sched.sigma_max;
    p.spec = MlpSpec::make(action_dim + state_dim + embed_dim, action_dim, hidden, layers,
                           Act::kMish);
    init_mlp(p.params, p.spec, rng);
    return p;
}

namespace {
Tensor implicit_input(const ImplicitPolicy& p, const Tensor& s, const Tensor& eps) {
    if (s.rows != eps.rows || eps.cols != p.action_dim || s.cols != p.state_dim)
        throw config_error("implicit policy: batch shape mismatch");
    EdmCoeffs c = coefficients(p.sched, p.sigma_gen);
    Tensor emb = sinusoidal_embed(c.c_noise, p.embed_dim);
    Tensor in(s.rows, p.action_dim + p.state_dim + p.embed_dim);
    for (int r = 0; r < s.rows; ++r) {
        double* out = in.row_ptr(r);
        const double* e = eps.row_ptr(r);
        for (int j = 0; j < p.action_dim; ++j) out[j] = e[j];
        std::copy(s.row_ptr(r), s.row_ptr(r) + p.state_dim, out + p.action_dim);
        std::copy(emb.v.begin(), emb.v.end(), out + p.action_dim + p.state_dim);
    }
    return in;
}
}  // namespace

Tensor ImplicitPolicy::act(const Tensor& s, const Tensor& eps) const {
    return mlp_infer(spec, params, implicit_input(*this, s, eps));
}

SampleResult sample(const GaussianPolicy& p, const Tensor& s_row, Rng& rng) {
    Tensor mean, log_std;
    p.heads(s_row, mean, log_std);
    Tensor a(s_row.rows, p.action_dim);
    SampleResult res;
    double lp = 0.0;
    for (int r = 0; r < s_row.rows; ++r) {
        for (int j = 0; j < p.action_dim; ++j) {
            double ls = log_std.at(r, j);
            double sd = std::exp(ls);
            double u = mean.at(r, j) + sd * rng.normal();
            double t = std::tanh(u);
            a.at(r, j) = t;
            double z = (u - mean.at(r, j)) / sd;
            lp += -0.5 * z * z - ls - kHalfLog2Pi - std::log(std::max(1.0 - t * t, 1e-300));
        }
    }
    res.action = std::move(a);
    res.log_prob = lp / s_row.rows;
    return res;
}

SampleResult sample(const ImplicitPolicy& p, const Tensor& s_row, Rng& rng) {
    Tensor eps(s_row.rows, p.action_dim);
    fill_normal(eps, rng);
    SampleResult res;
    res.action = p.act(s_row, eps);
    return res;
}

Tensor sample_batch(const GaussianPolicy& p, const Tensor& s, Rng& rng) {
    Tensor mean, log_std;
    p.heads(s, mean, log_std);
    Tensor a(s.rows, p.action_dim);
    for (int r = 0; r < s.rows; ++r)
        for (int j = 0; j < p.action_dim; ++j)
            a.at(r, j) = std::tanh(mean.at(r, j) + std::exp(log_std.at(r, j)) * rng.normal());
    return a;
}

Tensor sample_batch(const ImplicitPolicy& p, const Tensor& s, Rng& rng) {
    Tensor eps(s.rows, p.action_dim);
    fill_normal(eps, rng);
    return p.act(s, eps);
}

double log_prob(const GaussianPolicy& p, const Tensor& s_row, const Tensor& a_row) {
    Tensor mean, log_std;
    p.heads(s_row, mean, log_std);
    double lp = 0.0;
    for (int j = 0; j < p.action_dim; ++j) {
        double a = a_row.v[j];
        double u = atanh_clipped(a);
        double ls = log_std.v[j];
        double z = (u - mean.v[j]) / std::exp(ls);
        double ac = std::min(std::fabs(a), kActionClip);
        lp += -0.5 * z * z - ls - kHalfLog2Pi - std::log(1.0 - ac * ac);
    }
    return lp;
}

PolicyGraph gaussian_sample_graph(Tape& tape, GaussianPolicy& p, const Tensor& s,
                                  const Tensor& eps) {
    if (eps.rows != s.rows || eps.cols != p.action_dim)
        throw config_error("gaussian_sample_graph: eps shape mismatch");
    PolicyGraph g;
    int s_id = tape.constant(s);
    g.trunk = bind_mlp(tape, p.params, p.trunk, true, "trunk.");
    int h = tape.relu(mlp_forward(tape, p.trunk, g.trunk, s_id));
    g.mean_head = bind_mlp(tape, p.params, p.mean_head, true, "mean.");
    g.logstd_head = bind_mlp(tape, p.params, p.logstd_head, true, "std.");
    int mean = mlp_forward(tape, p.mean_head, g.mean_head, h);
    int ls = tape.clamp(mlp_forward(tape, p.logstd_head, g.logstd_head, h), p.log_std_min,
                        p.log_std_max);
    int sd = tape.exp_(ls);
    int u = tape.add(mean, tape.mul_elem(sd, tape.constant(eps)));
    g.action = tape.tanh_(u);
    g.mean = mean;
    g.log_std = ls;
    return g;
}

PolicyGraph implicit_sample_graph(Tape& tape, ImplicitPolicy& p, const Tensor& s,
                                  const Tensor& eps) {
    PolicyGraph g;
    int in = tape.constant(implicit_input(p, s, eps));
    g.net = bind_mlp(tape, p.params, p.spec, true);
    g.action = mlp_forward(tape, p.spec, g.net, in);
    return g;
}

int entropy_term_graph(Tape& tape, GaussianPolicy& p, PolicyGraph& g, const Tensor& a_data) {
    // Reuses the mean/log-std nodes of the sampling graph, so the data batch
    // must be the batch the graph was built on.
    if (g.log_std < 0 || g.mean < 0)
        throw usage_error("entropy term: gaussian policy graph required");
    int B = a_data.rows;
    if (tape.value(g.mean).rows != B)
        throw usage_error("entropy term: action batch does not match the policy graph batch");
    Tensor u_data(B, p.action_dim);
    double squash = 0.0;
    for (int r = 0; r < B; ++r)
        for (int j = 0; j < p.action_dim; ++j) {
            double a = a_data.at(r, j);
            u_data.at(r, j) = atanh_clipped(a);
            double ac = std::min(std::fabs(a), kActionClip);
            squash += std::log(1.0 - ac * ac);
        }
    squash /= B;

    // -E log pi = 0.5*E|z|^2 + E sum(log_std) + A/2 ln(2pi) + E sum log(1-a^2)
    int diff = tape.sub(tape.constant(std::move(u_data)), g.mean);
    int z = tape.mul_elem(diff, tape.exp_(tape.scale(g.log_std, -1.0)));
    int s1 = tape.scale(tape.mean_sumsq(z), 0.5);
    int s2 = tape.mean_sum(g.log_std);
    double cst = p.action_dim * kHalfLog2Pi + squash;
    return tape.add(tape.add(s1, s2), tape.constant(Tensor::scalar(cst)));
}

void adam_step_policy(GaussianPolicy& p, Tape& tape, const PolicyGraph& g, const AdamConfig& cfg) {
    std::vector<std::pair<Param*, const Tensor*>> grads;
    auto collect = [&](const BoundMlp& b) {
        for (size_t l = 0; l < b.weights.size(); ++l) {
            if (tape.has_grad(b.weights[l]))
                grads.emplace_back(&p.params.find(b.prefix + "l" + std::to_string(l) + ".W"),
                                   &tape.grad(b.weights[l]));
            if (tape.has_grad(b.biases[l]))
                grads.emplace_back(&p.params.find(b.prefix + "l" + std::to_string(l) + ".b"),
                                   &tape.grad(b.biases[l]));
        }
    };
    collect(g.trunk);
    collect(g.mean_head);
    collect(g.logstd_head);
    adam_step(p.params, grads, cfg);
}

double entropy_estimate(const GaussianPolicy& p, const Tensor& s_row, int n, Rng& rng) {
    Tensor mean, log_std;
    p.heads(s_row, mean, log_std);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double lp = 0.0;
        for (int j = 0; j < p.action_dim; ++j) {
            double ls = log_std.v[j];
            double sd = std::exp(ls);
            double z = rng.normal();
            double t = std::tanh(mean.v[j] + sd * z);
            lp += -0.5 * z * z - ls - kHalfLog2Pi - std::log(std::max(1.0 - t * t, 1e-300));
        }
        acc -= lp;
    }
    return acc / n;
}

double entropy_estimate_knn(const Tensor& samples) {
    // Kozachenko-Leonenko 1-NN estimator:
    //   H ~= (d/n) sum_i ln eps_i + ln V_d + gamma + ln(n-1)
    int n = samples.rows, d = samples.cols;
    if (n < 2) throw usage_error("entropy_estimate_knn: need at least two samples");
    double sum_log_eps = 0.0;
    for (int i = 0; i < n; ++i) {
        double best = 1e300;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double dist2 = 0.0;
            for (int c = 0; c < d; ++c) {
                double dd = samples.at(i, c) - samples.at(j, c);
                dist2 += dd * dd;
            }
            best = std::min(best, dist2);
        }
        sum_log_eps += 0.5 * std::log(std::max(best, 1e-300));
    }
    double log_ball = (d / 2.0) * std::log(M_PI) - std::lgamma(d / 2.0 + 1.0);
    constexpr double kEulerGamma = 0.5772156649015329;
    return (static_cast<double>(d) / n) * sum_log_eps + log_ball + kEulerGamma +
           std::log(static_cast<double>(n - 1));
}

// ------------------------------------------------------------- checkpoint --

void save_policy(const GaussianPolicy& p, const std::string& path,
                 std::map<std::string, std::string> meta) {
    meta["kind"] = "gaussian_policy";
    meta["state_dim"] = std::to_string(p.state_dim);
    meta["action_dim"] = std::to_string(p.action_dim);
    meta["hidden"] = std::to_string(p.trunk.widths[1]);
    save_stores(path, {{"policy", &p.params}}, meta);
}

void save_policy(const ImplicitPolicy& p, const std::string& path,
                 std::map<std::string, std::string> meta) {
    meta["kind"] = "implicit_policy";
    meta["state_dim"] = std::to_string(p.state_dim);
    meta["action_dim"] = std::to_string(p.action_dim);
    meta["embed_dim"] = std::to_string(p.embed_dim);
    meta["sigma_gen"] = std::to_string(p.sigma_gen);
    meta["sigma_data"] = std::to_string(p.sched.sigma_data);
    meta["sigma_min"] = std::to_string(p.sched.sigma_min);
    meta["sigma_max"] = std::to_string(p.sched.sigma_max);
    meta["logistic_scale"] = std::to_string(p.sched.logistic_scale);
    save_stores(path, {{"policy", &p.params}}, meta);
}

std::string policy_kind_at(const std::string& path) {
    auto meta = peek_meta(path);
    auto it = meta.find("kind");
    return it == meta.end() ? "" : it->second;
}

GaussianPolicy load_gaussian_policy(const std::string& path,
                                    std::map<std::string, std::string>* meta_out) {
    auto meta = peek_meta(path);
    if (meta["kind"] != "gaussian_policy")
        throw io_error("checkpoint at " + path + " is not a gaussian policy");
    GaussianPolicy p;
    p.state_dim = std::stoi(meta.at("state_dim"));
    p.action_dim = std::stoi(meta.at("action_dim"));
    int hidden = std::stoi(meta.at("hidden"));
    p.trunk = MlpSpec::make(p.state_dim, hidden, hidden, 2, Act::kRelu);
    p.mean_head = MlpSpec::make(hidden, p.action_dim, hidden, 1, Act::kRelu);
    p.logstd_head = MlpSpec::make(hidden, p.action_dim, hidden, 1, Act::kRelu);
    load_stores(path, {{"policy", &p.params}});
    if (meta_out) *meta_out = meta;
    return p;
}

ImplicitPolicy load_implicit_policy(const std::string& path,
                                    std::map<std::string, std::string>* meta_out) {
    auto meta = peek_meta(path);
    if (meta["kind"] != "implicit_policy")
        throw io_error("checkpoint at " + path + " is not an implicit policy");
    ImplicitPolicy p;
    p.state_dim = std::stoi(meta.at("state_dim"));
    p.action_dim = std::stoi(meta.at("action_dim"));
    p.embed_dim = std::stoi(meta.at("embed_dim"));
    p.sigma_gen = std::stod(meta.at("sigma_gen"));
    p.sched.sigma_data = std::stod(meta.at("sigma_data"));
    p.sched.sigma_min = std::stod(meta.at("sigma_min"));
    p.sched.sigma_max = std::stod(meta.at("sigma_max"));
    p.sched.logistic_scale = std::stod(meta.at("logistic_scale"));
    p.sched.logistic_location = std::log(p.sched.sigma_data);
    p.spec = MlpSpec::make(p.action_dim + p.state_dim + p.embed_dim, p.action_dim, 256, 4,
                           Act::kMish);
    load_stores(path, {{"policy", &p.params}});
    if (meta_out) *meta_out = meta;
    return p;
}

}  // namespace dtql
