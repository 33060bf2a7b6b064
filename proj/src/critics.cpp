#include "dtql/critics.hpp"

#include <cmath>

#include "dtql/errors.hpp"

namespace dtql {

CriticSet CriticSet::make(int state_dim, int action_dim, double tau, double gamma, double rho,
                          Rng& rng, int hidden, int layers) {
    if (!(tau > 0.0 && tau < 1.0)) throw config_error("CriticSet: tau must be in (0,1)");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw config_error("CriticSet: gamma must be in (0,1]");
    if (!(rho >= 0.0 && rho < 1.0)) throw config_error("CriticSet: rho must be in [0,1)");
    CriticSet c;
    c.state_dim = state_dim;
    c.action_dim = action_dim;
    c.tau = tau;
    c.gamma = gamma;
    c.rho = rho;
    c.q_spec = MlpSpec::make(state_dim + action_dim, 1, hidden, layers, Act::kMish);
    c.v_spec = MlpSpec::make(state_dim, 1, hidden, layers, Act::kMish);
    init_mlp(c.q1, c.q_spec, rng);
    init_mlp(c.q2, c.q_spec, rng);
    init_mlp(c.v, c.v_spec, rng);
    // targets start as exact copies
    init_mlp(c.q1_target, c.q_spec, rng);
    init_mlp(c.q2_target, c.q_spec, rng);
    c.q1_target.copy_values_from(c.q1);
    c.q2_target.copy_values_from(c.q2);
    return c;
}

Tensor CriticSet::q_input(const Tensor& s, const Tensor& a) const {
    if (s.rows != a.rows || s.cols != state_dim || a.cols != action_dim)
        throw config_error("CriticSet: (s,a) batch shape mismatch");
    Tensor in(s.rows, state_dim + action_dim);
    for (int r = 0; r < s.rows; ++r) {
        double* out = in.row_ptr(r);
        std::copy(s.row_ptr(r), s.row_ptr(r) + state_dim, out);
        std::copy(a.row_ptr(r), a.row_ptr(r) + action_dim, out + state_dim);
    }
    return in;
}

Tensor CriticSet::min_q(const Tensor& s, const Tensor& a, bool use_target) const {
    Tensor in = q_input(s, a);
    Tensor v1 = mlp_infer(q_spec, use_target ? q1_target : q1, in);
    Tensor v2 = mlp_infer(q_spec, use_target ? q2_target : q2, in);
    for (size_t i = 0; i < v1.v.size(); ++i) v1.v[i] = std::min(v1.v[i], v2.v[i]);
    return v1;
}

Tensor CriticSet::v_of(const Tensor& s) const { return mlp_infer(v_spec, v, s); }

double expectile_loss(double u, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw config_error("expectile_loss: tau must be in (0,1)");
    return std::fabs(tau - (u < 0.0 ? 1.0 : 0.0)) * u * u;
}

int v_loss(Tape& tape, CriticSet& c, const Tensor& s, const Tensor& a, BoundMlp* bound_out) {
    if (s.rows == 0) throw usage_error("v_loss: empty batch");
    Tensor targets = c.min_q(s, a, /*use_target=*/true);  // frozen during this op
    BoundMlp bound = bind_mlp(tape, c.v, c.v_spec, true);
    int v_out = mlp_forward(tape, c.v_spec, bound, tape.constant(s));
    int u = tape.sub(tape.constant(std::move(targets)), v_out);
    if (bound_out) *bound_out = bound;
    return tape.expectile_mean(u, c.tau);
}

QLossGraph q_loss(Tape& tape, CriticSet& c, const Tensor& s, const Tensor& a, const Tensor& r,
                  const Tensor& s_next, const Tensor& done) {
    if (s.rows == 0) throw usage_error("q_loss: empty batch");
    Tensor v_next = c.v_of(s_next);  // V frozen during this op
    Tensor y(s.rows, 1);
    for (int i = 0; i < s.rows; ++i)
        y.v[i] = r.v[i] + c.gamma * (1.0 - done.v[i]) * v_next.v[i];

    int in = tape.constant(c.q_input(s, a));
    QLossGraph g;
    g.q1 = bind_mlp(tape, c.q1, c.q_spec, true);
    g.q2 = bind_mlp(tape, c.q2, c.q_spec, true);
    int y_id = tape.constant(std::move(y));
    int l1 = tape.mean_sumsq(tape.sub(mlp_forward(tape, c.q_spec, g.q1, in), y_id));
    int l2 = tape.mean_sumsq(tape.sub(mlp_forward(tape, c.q_spec, g.q2, in), y_id));
    g.loss = tape.scale(tape.add(l1, l2), 0.5);
    return g;
}

int min_q_graph(Tape& tape, const CriticSet& c, const Tensor& s, int a_node) {
    int s_id = tape.constant(s);
    int in = tape.concat_cols(s_id, a_node);
    BoundMlp b1 = bind_mlp_frozen(tape, c.q1, c.q_spec);
    BoundMlp b2 = bind_mlp_frozen(tape, c.q2, c.q_spec);
    int q1 = mlp_forward(tape, c.q_spec, b1, in);
    int q2 = mlp_forward(tape, c.q_spec, b2, in);
    return tape.min2(q1, q2);
}

void polyak_update(CriticSet& c) {
    auto blend = [&](ParamStore& target, const ParamStore& online) {
        auto& te = target.entries();
        auto& oe = online.entries();
        for (size_t i = 0; i < te.size(); ++i)
            for (size_t j = 0; j < te[i].value.v.size(); ++j)
                te[i].value.v[j] = c.rho * te[i].value.v[j] + (1.0 - c.rho) * oe[i].value.v[j];
    };
    blend(c.q1_target, c.q1);
    blend(c.q2_target, c.q2);
}

void adam_step_qs(CriticSet& c, Tape& tape, const QLossGraph& g, const AdamConfig& cfg) {
    adam_step_mlp(c.q1, tape, g.q1, cfg);
    adam_step_mlp(c.q2, tape, g.q2, cfg);
}

void CriticSet::save(const std::string& path, std::map<std::string, std::string> meta) const {
    meta["kind"] = "critics";
    meta["state_dim"] = std::to_string(state_dim);
    meta["action_dim"] = std::to_string(action_dim);
    meta["tau"] = std::to_string(tau);
    meta["gamma"] = std::to_string(gamma);
    meta["rho"] = std::to_string(rho);
    save_stores(path,
                {{"q1", &q1}, {"q2", &q2}, {"q1_target", &q1_target}, {"q2_target", &q2_target},
                 {"v", &v}},
                meta);
}

CriticSet CriticSet::load(const std::string& path) {
    auto meta = peek_meta(path);
    if (meta["kind"] != "critics") throw io_error("checkpoint at " + path + " is not a critic set");
    CriticSet c;
    c.state_dim = std::stoi(meta.at("state_dim"));
    c.action_dim = std::stoi(meta.at("action_dim"));
    c.tau = std::stod(meta.at("tau"));
    c.gamma = std::stod(meta.at("gamma"));
    c.rho = std::stod(meta.at("rho"));
    c.q_spec = MlpSpec::make(c.state_dim + c.action_dim, 1, 256, 4, Act::kMish);
    c.v_spec = MlpSpec::make(c.state_dim, 1, 256, 4, Act::kMish);
    load_stores(path, {{"q1", &c.q1},
                       {"q2", &c.q2},
                       {"q1_target", &c.q1_target},
                       {"q2_target", &c.q2_target},
                       {"v", &c.v}});
    return c;
}

}  // namespace dtql
