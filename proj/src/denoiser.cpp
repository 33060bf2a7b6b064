#include "dtql/denoiser.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dtql/errors.hpp"
#include "dtql/parallel.hpp"

namespace dtql {

Denoiser Denoiser::make(int state_dim, int action_dim, const EdmSchedule& sched, Rng& rng,
                        int embed_dim, int hidden, int layers) {
    sched.validate();
    if (embed_dim < 2 || embed_dim % 2 != 0)
        throw config_error("Denoiser: embed_dim must be even and >= 2");
    Denoiser d;
    d.state_dim = state_dim;
    d.action_dim = action_dim;
    d.embed_dim = embed_dim;
    d.sched = sched;
    d.spec = MlpSpec::make(action_dim + state_dim + embed_dim, action_dim, hidden, layers,
                           Act::kMish);
    init_mlp(d.params, d.spec, rng);
    return d;
}

Tensor Denoiser::assemble_input(const Tensor& a_t, const std::vector<double>& sigma,
                                const Tensor& s) const {
    if (a_t.cols != action_dim || s.cols != state_dim || a_t.rows != s.rows ||
        a_t.rows != static_cast<int>(sigma.size()))
        throw config_error("Denoiser: batch shape mismatch");
    Tensor in(a_t.rows, action_dim + state_dim + embed_dim);
    for (int r = 0; r < a_t.rows; ++r) {
        EdmCoeffs c = coefficients(sched, sigma[r]);
        double* out = in.row_ptr(r);
        const double* a = a_t.row_ptr(r);
        for (int j = 0; j < action_dim; ++j) out[j] = c.c_in * a[j];
        const double* sv = s.row_ptr(r);
        for (int j = 0; j < state_dim; ++j) out[action_dim + j] = sv[j];
        Tensor emb = sinusoidal_embed(c.c_noise, embed_dim);
        std::copy(emb.v.begin(), emb.v.end(), out + action_dim + state_dim);
    }
    return in;
}

Tensor Denoiser::denoise(const Tensor& a_t, double sigma, const Tensor& s) const {
    std::vector<double> sig(a_t.rows, sigma);
    Tensor f = mlp_infer(spec, params, assemble_input(a_t, sig, s));
    EdmCoeffs c = coefficients(sched, sigma);
    Tensor out = a_t;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = c.c_skip * out.v[i] + c.c_out * f.v[i];
    return out;
}

namespace {

struct PreconParts {
    Tensor a_t;            // perturbed actions
    Tensor x_scaled;       // c_in * a_t (network input block)
    Tensor embed;          // per-row noise embedding
    Tensor weights;        // 1 x B, lambda * c_out^2 per row
    std::vector<double> c_skip, c_out, c_in;
};

PreconParts precondition(const Denoiser& d, const Tensor& a_center,
                         const DiffusionDraws& draws) {
    int B = a_center.rows;
    if (draws.eps.rows != B || draws.eps.cols != d.action_dim ||
        static_cast<int>(draws.sigma.size()) != B)
        throw config_error("diffusion draws do not match the batch");
    PreconParts p;
    p.a_t.resize(B, d.action_dim);
    p.x_scaled.resize(B, d.action_dim);
    p.weights.resize(1, B);
    p.c_skip.resize(B);
    p.c_out.resize(B);
    p.c_in.resize(B);
    std::vector<double> noise_vals(B);
    for (int r = 0; r < B; ++r) {
        double sig = draws.sigma[r];
        EdmCoeffs c = coefficients(d.sched, sig);
        p.c_skip[r] = c.c_skip;
        p.c_out[r] = c.c_out;
        p.c_in[r] = c.c_in;
        p.weights.v[r] = c.lambda * c.c_out * c.c_out;
        noise_vals[r] = c.c_noise;
        const double* a = a_center.row_ptr(r);
        const double* e = draws.eps.row_ptr(r);
        double* at = p.a_t.row_ptr(r);
        double* xs = p.x_scaled.row_ptr(r);
        for (int j = 0; j < d.action_dim; ++j) {
            at[j] = a[j] + sig * e[j];
            xs[j] = c.c_in * at[j];
        }
    }
    p.embed = sinusoidal_embed_rows(noise_vals, d.embed_dim);
    return p;
}

}  // namespace

int bc_loss(Tape& tape, Denoiser& d, const Tensor& s, const Tensor& a0,
            const DiffusionDraws& draws, BoundMlp* bound_out) {
    if (a0.rows == 0) throw usage_error("bc_loss: empty batch");
    PreconParts p = precondition(d, a0, draws);

    // residual target (a0 - c_skip*a_t) / c_out, a constant for this loss
    Tensor target(a0.rows, d.action_dim);
    for (int r = 0; r < a0.rows; ++r) {
        const double* a = a0.row_ptr(r);
        const double* at = p.a_t.row_ptr(r);
        double* t = target.row_ptr(r);
        for (int j = 0; j < d.action_dim; ++j)
            t[j] = (a[j] - p.c_skip[r] * at[j]) / p.c_out[r];
    }

    Tensor in(a0.rows, d.action_dim + d.state_dim + d.embed_dim);
    for (int r = 0; r < a0.rows; ++r) {
        double* out = in.row_ptr(r);
        std::copy(p.x_scaled.row_ptr(r), p.x_scaled.row_ptr(r) + d.action_dim, out);
        std::copy(s.row_ptr(r), s.row_ptr(r) + d.state_dim, out + d.action_dim);
        std::copy(p.embed.row_ptr(r), p.embed.row_ptr(r) + d.embed_dim,
                  out + d.action_dim + d.state_dim);
    }
    int input = tape.constant(std::move(in));

    BoundMlp bound = bind_mlp(tape, d.params, d.spec, /*trainable=*/true);
    int f = mlp_forward(tape, d.spec, bound, input);
    int resid = tape.sub(f, tape.constant(std::move(target)));
    int loss = tape.mean_sumsq(resid, p.weights);
    if (bound_out) *bound_out = bound;
    return loss;
}

int trust_region_loss(Tape& tape, const Denoiser& frozen, int a_theta, const Tensor& s,
                      const DiffusionDraws& draws) {
    const Tensor& a = tape.value(a_theta);
    if (a.rows == 0) throw usage_error("trust_region_loss: empty batch");
    if (a.cols != frozen.action_dim) throw config_error("trust_region_loss: action width mismatch");
    PreconParts p = precondition(frozen, a, draws);
    int B = a.rows;

    // a_t = a_theta + sigma*eps as a graph op so the input Jacobian is live
    Tensor noise(B, frozen.action_dim);
    for (int r = 0; r < B; ++r) {
        const double* e = draws.eps.row_ptr(r);
        double* nv = noise.row_ptr(r);
        for (int j = 0; j < frozen.action_dim; ++j) nv[j] = draws.sigma[r] * e[j];
    }
    int a_t = tape.add(a_theta, tape.constant(std::move(noise)));

    Tensor cin_w(1, B), tgt_w(1, B);
    for (int r = 0; r < B; ++r) {
        cin_w.v[r] = p.c_in[r];
        tgt_w.v[r] = (1.0 - p.c_skip[r]) / p.c_out[r];
    }
    int x_scaled = tape.scale_rows(a_t, std::move(cin_w));
    int input = tape.concat_cols(x_scaled, tape.constant(s), tape.constant(p.embed));

    BoundMlp bound = bind_mlp_frozen(tape, frozen.params, frozen.spec);
    int f = mlp_forward(tape, frozen.spec, bound, input);

    // target = (1-c_skip)/c_out * a_theta - c_skip/c_out * sigma*eps
    Tensor tshift(B, frozen.action_dim);
    for (int r = 0; r < B; ++r) {
        const double* e = draws.eps.row_ptr(r);
        double* t = tshift.row_ptr(r);
        double k = p.c_skip[r] * draws.sigma[r] / p.c_out[r];
        for (int j = 0; j < frozen.action_dim; ++j) t[j] = k * e[j];
    }
    int target = tape.sub(tape.scale_rows(a_theta, std::move(tgt_w)),
                          tape.constant(std::move(tshift)));
    int resid = tape.sub(f, target);
    return tape.mean_sumsq(resid, p.weights);
}

Tensor sds_grad(const Denoiser& frozen, const Tensor& a_theta, const Tensor& s,
                const DiffusionDraws& draws) {
    int B = a_theta.rows;
    if (B == 0) throw usage_error("sds_grad: empty batch");
    Tensor grad(B, frozen.action_dim);
    Tensor a_t(B, frozen.action_dim);
    for (int r = 0; r < B; ++r) {
        const double* a = a_theta.row_ptr(r);
        const double* e = draws.eps.row_ptr(r);
        double* at = a_t.row_ptr(r);
        for (int j = 0; j < frozen.action_dim; ++j) at[j] = a[j] + draws.sigma[r] * e[j];
    }
    Tensor f = mlp_infer(frozen.spec, frozen.params, frozen.assemble_input(a_t, draws.sigma, s));
    for (int r = 0; r < B; ++r) {
        double sig = draws.sigma[r];
        EdmCoeffs c = coefficients(frozen.sched, sig);
        double w = sig * sig / (c.c_out * c.c_out);
        const double* at = a_t.row_ptr(r);
        const double* fr = f.row_ptr(r);
        const double* e = draws.eps.row_ptr(r);
        double* g = grad.row_ptr(r);
        for (int j = 0; j < frozen.action_dim; ++j) {
            double mu = c.c_skip * at[j] + c.c_out * fr[j];
            double eps_hat = (at[j] - mu) / sig;
            g[j] = 2.0 * w * (eps_hat - e[j]);
        }
    }
    return grad;
}

LossField eval_loss_field(const Denoiser& frozen, const Tensor& s_row, int grid_n, double sigma,
                          int n_noise, uint64_t seed) {
    if (frozen.action_dim != 2)
        throw usage_error("eval_loss_field: only 2-d action spaces are supported");
    if (n_noise < 1) throw config_error("eval_loss_field: n_noise must be >= 1");
    if (grid_n < 2) throw config_error("eval_loss_field: grid must be >= 2");
    LossField f;
    f.n = grid_n;
    f.sigma = sigma;
    f.n_noise = n_noise;
    f.seed = seed;
    f.xs.resize(grid_n);
    for (int i = 0; i < grid_n; ++i) f.xs[i] = -1.0 + 2.0 * i / (grid_n - 1);
    f.loss.resize(grid_n, grid_n);

    parallel_chunks(grid_n * grid_n, [&](int lo, int hi) {
        Tensor s_rep(n_noise, frozen.state_dim);
        for (int r = 0; r < n_noise; ++r)
            std::copy(s_row.v.begin(), s_row.v.end(), s_rep.row_ptr(r));
        for (int cell = lo; cell < hi; ++cell) {
            int iy = cell / grid_n, ix = cell % grid_n;
            double ax = f.xs[ix], ay = f.xs[iy];
            Rng rng = Rng::fork(seed, 0x10000 + static_cast<uint64_t>(cell));
            Tensor a_t(n_noise, 2);
            for (int r = 0; r < n_noise; ++r) {
                a_t.at(r, 0) = ax + sigma * rng.normal();
                a_t.at(r, 1) = ay + sigma * rng.normal();
            }
            Tensor mu = frozen.denoise(a_t, sigma, s_rep);
            double acc = 0.0;
            for (int r = 0; r < n_noise; ++r) {
                double dx = mu.at(r, 0) - ax;
                double dy = mu.at(r, 1) - ay;
                acc += dx * dx + dy * dy;
            }
            f.loss.at(iy, ix) = acc / n_noise;
        }
    });
    return f;
}

void write_loss_field_csv(const LossField& f, const std::string& csv_path) {
    std::ofstream os(csv_path);
    if (!os) throw io_error("loss field: cannot open " + csv_path);
    os << "x,y,loss\n";
    os.precision(17);
    for (int iy = 0; iy < f.n; ++iy)
        for (int ix = 0; ix < f.n; ++ix)
            os << f.xs[ix] << ',' << f.xs[iy] << ',' << f.loss.at(iy, ix) << '\n';
    if (!os) throw io_error("loss field: write failed");
}

void Denoiser::save(const std::string& path, std::map<std::string, std::string> meta) const {
    meta["kind"] = "denoiser";
    meta["state_dim"] = std::to_string(state_dim);
    meta["action_dim"] = std::to_string(action_dim);
    meta["embed_dim"] = std::to_string(embed_dim);
    std::ostringstream w;
    for (size_t i = 0; i < spec.widths.size(); ++i) w << (i ? "," : "") << spec.widths[i];
    meta["widths"] = w.str();
    meta["act"] = act_name(spec.act);
    meta["sigma_data"] = std::to_string(sched.sigma_data);
    meta["sigma_min"] = std::to_string(sched.sigma_min);
    meta["sigma_max"] = std::to_string(sched.sigma_max);
    meta["logistic_scale"] = std::to_string(sched.logistic_scale);
    save_stores(path, {{"denoiser", &params}}, meta);
}

Denoiser Denoiser::load(const std::string& path, std::map<std::string, std::string>* meta_out) {
    auto meta = peek_meta(path);
    if (meta["kind"] != "denoiser" && meta["kind"] != "fake_score")
        throw io_error("checkpoint at " + path + " is not a denoiser");
    Denoiser d;
    d.state_dim = std::stoi(meta.at("state_dim"));
    d.action_dim = std::stoi(meta.at("action_dim"));
    d.embed_dim = std::stoi(meta.at("embed_dim"));
    d.sched.sigma_data = std::stod(meta.at("sigma_data"));
    d.sched.sigma_min = std::stod(meta.at("sigma_min"));
    d.sched.sigma_max = std::stod(meta.at("sigma_max"));
    d.sched.logistic_scale = std::stod(meta.at("logistic_scale"));
    d.sched.logistic_location = std::log(d.sched.sigma_data);
    std::istringstream ws(meta.at("widths"));
    std::string tok;
    d.spec.widths.clear();
    while (std::getline(ws, tok, ',')) d.spec.widths.push_back(std::stoi(tok));
    d.spec.act = act_from_name(meta.at("act"));
    load_stores(path, {{"denoiser", &d.params}});
    if (meta_out) *meta_out = meta;
    return d;
}

}  // namespace dtql
