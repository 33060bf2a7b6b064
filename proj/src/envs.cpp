#include "dtql/envs.hpp"

#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dtql/errors.hpp"
#include "json.hpp"

namespace dtql {

void Dataset::reserve_rows(int n) {
    s.resize(n, state_dim);
    a.resize(n, action_dim);
    r.resize(n, 1);
    s_next.resize(n, state_dim);
    done.resize(n, 1);
}

void Dataset::gather(const std::vector<int>& idx, Tensor& s_out, Tensor& a_out, Tensor& r_out,
                     Tensor& sn_out, Tensor& d_out) const {
    int B = static_cast<int>(idx.size());
    s_out.resize(B, state_dim);
    a_out.resize(B, action_dim);
    r_out.resize(B, 1);
    sn_out.resize(B, state_dim);
    d_out.resize(B, 1);
    for (int i = 0; i < B; ++i) {
        int j = idx[i];
        std::copy(s.row_ptr(j), s.row_ptr(j) + state_dim, s_out.row_ptr(i));
        std::copy(a.row_ptr(j), a.row_ptr(j) + action_dim, a_out.row_ptr(i));
        r_out.v[i] = r.v[j];
        std::copy(s_next.row_ptr(j), s_next.row_ptr(j) + state_dim, sn_out.row_ptr(i));
        d_out.v[i] = done.v[j];
    }
}

// ------------------------------------------------------------- scenarios ---

namespace {

std::vector<std::array<double, 2>> grid25_centers() {
    std::vector<std::array<double, 2>> c;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            c.push_back({-0.8 + 0.4 * i, -0.8 + 0.4 * j});
    return c;
}

std::vector<std::array<double, 2>> corner_centers() {
    return {{-0.8, -0.8}, {-0.8, 0.8}, {0.8, -0.8}, {0.8, 0.8}};
}

// Swiss-roll support has no natural mode list; coverage checks use the
// innermost arc unavailable here, so centers stay empty.
const std::vector<BanditScenario>& registry() {
    static const std::vector<BanditScenario> scenarios = [] {
        std::vector<BanditScenario> v;
        v.push_back({"gauss25-corner", "gauss25", "corner", grid25_centers(), 0.05, 1});
        v.push_back({"gauss25-single", "gauss25", "single", grid25_centers(), 0.05, 1});
        v.push_back({"swiss-center", "swiss", "center", {}, 0.02, 1});
        v.push_back({"swiss-ring", "swiss", "ring", {}, 0.02, 1});
        return v;
    }();
    return scenarios;
}

std::atomic<int64_t> g_clamp_warnings{0};

}  // namespace

const BanditScenario& scenario_by_name(const std::string& name) {
    for (const auto& sc : registry())
        if (sc.name == name) return sc;
    throw config_error("unknown scenario: " + name);
}

std::vector<std::string> scenario_names() {
    std::vector<std::string> names;
    for (const auto& sc : registry()) names.push_back(sc.name);
    names.push_back("chain8");
    return names;
}

Dataset gen_25gaussian(int n, Rng& rng) {
    if (n < 25) throw config_error("gen_25gaussian: need n >= 25");
    auto centers = grid25_centers();
    Dataset d;
    d.state_dim = 1;
    d.action_dim = 2;
    d.reserve_rows(n);
    for (int i = 0; i < n; ++i) {
        int m = rng.uniform_int(25);
        for (int c = 0; c < 2; ++c) {
            double x = centers[m][c] + 0.05 * rng.normal();
            d.a.at(i, c) = std::min(1.0, std::max(-1.0, x));
        }
        d.s.at(i, 0) = 0.0;
        d.s_next.at(i, 0) = 0.0;
        d.done.v[i] = 1.0;
    }
    return d;
}

Dataset gen_swiss_roll(int n, Rng& rng) {
    if (n < 1) throw config_error("gen_swiss_roll: need n >= 1");
    Dataset d;
    d.state_dim = 1;
    d.action_dim = 2;
    d.reserve_rows(n);
    const double t0 = 1.5 * M_PI, t1 = 4.5 * M_PI;  // 1.5 turns
    const double scale = 0.95 / t1;                 // radius grows linearly with angle
    for (int i = 0; i < n; ++i) {
        double t = t0 + (t1 - t0) * rng.uniform();
        double x = scale * t * std::cos(t) + 0.02 * rng.normal();
        double y = scale * t * std::sin(t) + 0.02 * rng.normal();
        d.a.at(i, 0) = std::min(1.0, std::max(-1.0, x));
        d.a.at(i, 1) = std::min(1.0, std::max(-1.0, y));
        d.s.at(i, 0) = 0.0;
        d.s_next.at(i, 0) = 0.0;
        d.done.v[i] = 1.0;
    }
    return d;
}

double reward(const BanditScenario& sc, double ax, double ay) {
    if (ax < -1.0 || ax > 1.0 || ay < -1.0 || ay > 1.0) {
        g_clamp_warnings.fetch_add(1, std::memory_order_relaxed);
        ax = std::min(1.0, std::max(-1.0, ax));
        ay = std::min(1.0, std::max(-1.0, ay));
    }
    if (sc.reward_name == "corner") {
        double best = 0.0;
        for (const auto& c : corner_centers()) {
            double dx = ax - c[0], dy = ay - c[1];
            best = std::max(best, std::exp(-(dx * dx + dy * dy) / (2.0 * 0.15 * 0.15)));
        }
        return best;
    }
    if (sc.reward_name == "center")
        return std::exp(-(ax * ax + ay * ay) / (2.0 * 0.2 * 0.2));
    if (sc.reward_name == "single") {
        double dx = ax - 0.0, dy = ay - 0.0;  // the central mode carries the reward
        return std::exp(-(dx * dx + dy * dy) / (2.0 * 0.15 * 0.15));
    }
    if (sc.reward_name == "ring") {
        double rad = std::sqrt(ax * ax + ay * ay);
        double d = rad - 0.6;
        return std::exp(-d * d / (2.0 * 0.15 * 0.15));
    }
    throw config_error("unknown reward field: " + sc.reward_name);
}

double reward_row(const BanditScenario& sc, const Tensor& action_row) {
    return reward(sc, action_row.v[0], action_row.v[1]);
}

int64_t reward_clamp_warnings() { return g_clamp_warnings.load(); }

Dataset make_bandit_dataset(const BanditScenario& sc, int n, uint64_t seed) {
    Rng rng = Rng::fork(seed, 0x5CE11);
    Dataset d = sc.dataset_kind == "gauss25" ? gen_25gaussian(n, rng) : gen_swiss_roll(n, rng);
    for (int i = 0; i < n; ++i) d.r.v[i] = reward(sc, d.a.at(i, 0), d.a.at(i, 1));
    d.scenario = sc.name;
    d.seed = seed;
    nlohmann::json j;
    j["scenario"] = sc.name;
    j["dataset_kind"] = sc.dataset_kind;
    j["reward"] = sc.reward_name;
    j["mode_std"] = sc.mode_std;
    j["n"] = n;
    j["seed"] = seed;
    d.meta_json = j.dump(2);
    return d;
}

// ------------------------------------------------------------- chain mdp ---

int ChainMdp::move_of(double action) const {
    if (action > move_threshold) return 1;
    if (action < -move_threshold) return -1;
    return 0;
}

int ChainMdp::next_state(int s, double action) const {
    int n = s + move_of(action);
    return std::min(std::max(n, 0), n_states - 1);
}

bool ChainMdp::terminal(int s, double action) const { return next_state(s, action) == goal(); }

double ChainMdp::reward_of(int s, double action) const {
    return terminal(s, action) ? 1.0 : 0.0;
}

double ChainMdp::state_coord(int s) const {
    return static_cast<double>(s) / (n_states - 1);
}

Dataset gen_chain_dataset(const ChainMdp& mdp, double behavior_noise, int n, Rng& rng) {
    if (n < 100) throw config_error("gen_chain_dataset: need n >= 100");
    Dataset d;
    d.state_dim = 1;
    d.action_dim = 1;
    d.reserve_rows(n);
    d.scenario = "chain" + std::to_string(mdp.n_states);
    int i = 0;
    while (i < n) {
        int s = rng.uniform_int(mdp.n_states - 1);  // never start at the goal
        for (int step = 0; step < 500 && i < n; ++step) {
            // mostly right, sometimes stay or back off
            double u = rng.uniform();
            int mv = u < 0.90 ? 1 : (u < 0.94 ? 0 : -1);
            double a = 0.75 * mv + behavior_noise * (2.0 * rng.uniform() - 1.0);
            a = std::min(1.0, std::max(-1.0, a));
            int s2 = mdp.next_state(s, a);
            bool term = s2 == mdp.goal();
            d.s.at(i, 0) = mdp.state_coord(s);
            d.a.at(i, 0) = a;
            d.r.v[i] = term ? 1.0 : 0.0;
            d.s_next.at(i, 0) = mdp.state_coord(s2);
            d.done.v[i] = term ? 1.0 : 0.0;
            ++i;
            if (term) break;
            s = s2;
        }
    }
    nlohmann::json j;
    j["scenario"] = d.scenario;
    j["n_states"] = mdp.n_states;
    j["gamma"] = mdp.gamma;
    j["behavior_noise"] = behavior_noise;
    j["n"] = n;
    d.meta_json = j.dump(2);
    return d;
}

QStarTable value_iteration(const ChainMdp& mdp, int resolution, double tol) {
    if (resolution < 21) throw config_error("value_iteration: need at least 21 grid actions");
    QStarTable t;
    t.action_grid.resize(resolution);
    for (int i = 0; i < resolution; ++i)
        t.action_grid[i] = -1.0 + 2.0 * i / (resolution - 1);
    t.q.resize(mdp.n_states, resolution);
    Tensor next = t.q;
    for (int sweep = 0; sweep < 100000; ++sweep) {
        double delta = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            for (int ai = 0; ai < resolution; ++ai) {
                double a = t.action_grid[ai];
                double y = mdp.reward_of(s, a);
                if (!mdp.terminal(s, a)) {
                    int s2 = mdp.next_state(s, a);
                    double best = -1e300;
                    for (int aj = 0; aj < resolution; ++aj)
                        best = std::max(best, t.q.at(s2, aj));
                    y += mdp.gamma * best;
                }
                next.at(s, ai) = y;
                delta = std::max(delta, std::fabs(y - t.q.at(s, ai)));
            }
        }
        t.q = next;
        t.sweeps = sweep + 1;
        if (delta < tol) break;
    }
    return t;
}

double q_star(const ChainMdp& mdp, const QStarTable& table, int s, double action) {
    // Q* is constant within a move region, so the nearest in-region grid
    // action is exact.
    int best = 0;
    double best_d = 1e300;
    int want = mdp.move_of(action);
    for (size_t i = 0; i < table.action_grid.size(); ++i) {
        if (mdp.move_of(table.action_grid[i]) != want) continue;
        double d = std::fabs(table.action_grid[i] - action);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return table.q.at(s, best);
}

// ------------------------------------------------------------ dataset io ---

namespace {
constexpr char kMagic[8] = {'D', 'T', 'Q', 'L', 'D', 'S', '1', '\0'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t x) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (x >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (x >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw io_error("dataset: truncated file");
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(b[i]) << (8 * i);
    return x;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw io_error("dataset: truncated file");
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
    return x;
}

void put_block(std::ostream& os, const std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    } else {
        for (double d : v) put_u64(os, std::bit_cast<uint64_t>(d));
    }
}

void get_block(std::istream& is, std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!is) throw io_error("dataset: truncated payload");
    } else {
        for (double& d : v) d = std::bit_cast<double>(get_u64(is));
    }
}
}  // namespace

void save_dataset(const Dataset& d, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("dataset: cannot open " + path + " for writing");
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(d.state_dim));
    put_u32(os, static_cast<uint32_t>(d.action_dim));
    put_u64(os, static_cast<uint64_t>(d.size()));
    put_block(os, d.s.v);
    put_block(os, d.a.v);
    put_block(os, d.r.v);
    put_block(os, d.s_next.v);
    put_block(os, d.done.v);
    if (!os) throw io_error("dataset: write failed for " + path);
    std::ofstream js(path + ".json");
    js << (d.meta_json.empty() ? "{}" : d.meta_json) << "\n";
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("dataset: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 7) != 0)
        throw io_error("dataset: bad magic (not a transition file)");
    uint32_t version = get_u32(is);
    if (version != kVersion)
        throw io_error("dataset: unsupported version " + std::to_string(version));
    Dataset d;
    d.state_dim = static_cast<int>(get_u32(is));
    d.action_dim = static_cast<int>(get_u32(is));
    int n = static_cast<int>(get_u64(is));
    d.reserve_rows(n);
    get_block(is, d.s.v);
    get_block(is, d.a.v);
    get_block(is, d.r.v);
    get_block(is, d.s_next.v);
    get_block(is, d.done.v);
    std::ifstream js(path + ".json");
    if (js) {
        std::string text((std::istreambuf_iterator<char>(js)), std::istreambuf_iterator<char>());
        d.meta_json = text;
        auto j = nlohmann::json::parse(text, nullptr, false);
        if (!j.is_discarded()) {
            if (j.contains("scenario")) d.scenario = j["scenario"].get<std::string>();
            if (j.contains("seed")) d.seed = j["seed"].get<uint64_t>();
        }
    }
    return d;
}

}  // namespace dtql
