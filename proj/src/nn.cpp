#include "dtql/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dtql/errors.hpp"
#include "dtql/kernels.hpp"

namespace dtql {

MlpSpec MlpSpec::make(int in, int out, int hidden, int layers, Act act, OutAct out_act) {
    if (layers < 1) throw config_error("MlpSpec: need at least one layer");
    MlpSpec s;
    s.widths.push_back(in);
    for (int i = 0; i < layers - 1; ++i) s.widths.push_back(hidden);
    s.widths.push_back(out);
    s.act = act;
    s.out_act = out_act;
    s.validate();
    return s;
}

void MlpSpec::validate() const {
    if (widths.size() < 2) throw config_error("MlpSpec: need at least two widths");
    for (int w : widths)
        if (w <= 0) throw config_error("MlpSpec: widths must be positive");
}

std::string act_name(Act a) { return a == Act::kMish ? "mish" : "relu"; }
std::string out_act_name(OutAct a) { return a == OutAct::kNone ? "none" : "tanh"; }

Act act_from_name(const std::string& s) {
    if (s == "mish") return Act::kMish;
    if (s == "relu") return Act::kRelu;
    throw config_error("unknown activation: " + s);
}

OutAct out_act_from_name(const std::string& s) {
    if (s == "none") return OutAct::kNone;
    if (s == "tanh") return OutAct::kTanh;
    throw config_error("unknown output activation: " + s);
}

Param& ParamStore::add(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw usage_error("ParamStore: duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.push_back(Param{name, Tensor(rows, cols), Tensor(rows, cols), Tensor(rows, cols)});
    return entries_.back();
}

Param& ParamStore::find(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw usage_error("ParamStore: no parameter " + name);
    return entries_[it->second];
}

const Param& ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw usage_error("ParamStore: no parameter " + name);
    return entries_[it->second];
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

void ParamStore::copy_values_from(const ParamStore& other) {
    if (entries_.size() != other.entries_.size())
        throw config_error("ParamStore: entry count mismatch in copy");
    for (size_t i = 0; i < entries_.size(); ++i) {
        if (!entries_[i].value.same_shape(other.entries_[i].value))
            throw config_error("ParamStore: shape mismatch in copy at " + entries_[i].name);
        entries_[i].value = other.entries_[i].value;
    }
}

bool ParamStore::values_equal(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].value.v != other.entries_[i].value.v) return false;
    return true;
}

void init_mlp(ParamStore& store, const MlpSpec& spec, Rng& rng, const std::string& prefix) {
    spec.validate();
    for (size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        int fan_in = spec.widths[l];
        int fan_out = spec.widths[l + 1];
        Param& w = store.add(prefix + "l" + std::to_string(l) + ".W", fan_in, fan_out);
        double bound = std::sqrt(1.0 / fan_in);
        fill_uniform(w.value, rng, -bound, bound);
        store.add(prefix + "l" + std::to_string(l) + ".b", 1, fan_out);  // zero biases
    }
}

namespace {
BoundMlp bind_impl(Tape& tape, const ParamStore& store, const MlpSpec& spec, bool trainable,
                   const std::string& prefix) {
    BoundMlp b;
    b.trainable = trainable;
    b.prefix = prefix;
    for (size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        const Param& w = store.find(prefix + "l" + std::to_string(l) + ".W");
        const Param& bb = store.find(prefix + "l" + std::to_string(l) + ".b");
        b.weights.push_back(tape.leaf(&w.value, trainable));
        b.biases.push_back(tape.leaf(&bb.value, trainable));
    }
    return b;
}
}  // namespace

BoundMlp bind_mlp(Tape& tape, ParamStore& store, const MlpSpec& spec, bool trainable,
                  const std::string& prefix) {
    return bind_impl(tape, store, spec, trainable, prefix);
}

BoundMlp bind_mlp_frozen(Tape& tape, const ParamStore& store, const MlpSpec& spec,
                         const std::string& prefix) {
    return bind_impl(tape, store, spec, false, prefix);
}

int mlp_forward(Tape& tape, const MlpSpec& spec, const BoundMlp& bound, int input) {
    if (tape.value(input).cols != spec.in_width())
        throw config_error("mlp_forward: input width does not match spec");
    int x = input;
    size_t layers = bound.weights.size();
    for (size_t l = 0; l < layers; ++l) {
        x = tape.add_row(tape.matmul(x, bound.weights[l]), bound.biases[l]);
        if (l + 1 < layers)
            x = spec.act == Act::kMish ? tape.mish(x) : tape.relu(x);
        else if (spec.out_act == OutAct::kTanh)
            x = tape.tanh_(x);
    }
    return x;
}

Tensor mlp_infer(const MlpSpec& spec, const ParamStore& store, const Tensor& input,
                 const std::string& prefix) {
    if (input.cols != spec.in_width())
        throw config_error("mlp_infer: input width does not match spec");
    namespace k = kernels;
    Tensor x = input;
    size_t layers = spec.widths.size() - 1;
    for (size_t l = 0; l < layers; ++l) {
        const Tensor& w = store.find(prefix + "l" + std::to_string(l) + ".W").value;
        const Tensor& b = store.find(prefix + "l" + std::to_string(l) + ".b").value;
        Tensor y(x.rows, w.cols);
        k::gemm_nn(x.data(), w.data(), y.data(), x.rows, x.cols, w.cols, false);
        for (int r = 0; r < y.rows; ++r) {
            double* row = y.row_ptr(r);
            for (int c = 0; c < y.cols; ++c) row[c] += b.v[c];
        }
        if (l + 1 < layers) {
            if (spec.act == Act::kMish)
                k::active().mish(y.data(), y.data(), y.numel());
            else
                k::active().relu(y.data(), y.data(), y.numel());
        } else if (spec.out_act == OutAct::kTanh) {
            k::active().tanh_(y.data(), y.data(), y.numel());
        }
        x = std::move(y);
    }
    return x;
}

void adam_step(ParamStore& store, const std::vector<std::pair<Param*, const Tensor*>>& grads,
               const AdamConfig& cfg) {
    if (cfg.lr <= 0.0) throw config_error("adam_step: lr must be positive");
    for (auto& [p, g] : grads) {
        if (!p->value.same_shape(*g)) throw config_error("adam_step: grad shape mismatch");
        if (!g->all_finite())
            throw numeric_error("adam_step: non-finite gradient for " + p->name +
                                "; step aborted");
    }
    store.bump_step();
    double t = static_cast<double>(store.step_count());
    double bc1 = 1.0 - std::pow(cfg.beta1, t);
    double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [p, g] : grads)
        kernels::active().adam(p->value.data(), p->m.data(), p->v.data(), g->data(),
                               p->value.numel(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, bc1, bc2);
}

void adam_step_mlp(ParamStore& store, Tape& tape, const BoundMlp& bound, const AdamConfig& cfg) {
    if (!bound.trainable) throw usage_error("adam_step_mlp: network was bound frozen");
    std::vector<std::pair<Param*, const Tensor*>> grads;
    size_t layers = bound.weights.size();
    for (size_t l = 0; l < layers; ++l) {
        grads.emplace_back(&store.find(bound.prefix + "l" + std::to_string(l) + ".W"),
                           &tape.grad(bound.weights[l]));
        grads.emplace_back(&store.find(bound.prefix + "l" + std::to_string(l) + ".b"),
                           &tape.grad(bound.biases[l]));
    }
    adam_step(store, grads, cfg);
}

Tensor sinusoidal_embed(double value, int dim) {
    if (dim < 2 || dim % 2 != 0) throw config_error("sinusoidal_embed: dim must be even, >= 2");
    Tensor out(1, dim);
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq =
            half == 1 ? 1.0 : std::exp(-std::log(10000.0) * static_cast<double>(i) / (half - 1));
        out.v[2 * i] = std::sin(value * freq);
        out.v[2 * i + 1] = std::cos(value * freq);
    }
    return out;
}

Tensor sinusoidal_embed_rows(const std::vector<double>& values, int dim) {
    Tensor out(static_cast<int>(values.size()), dim);
    for (size_t r = 0; r < values.size(); ++r) {
        Tensor row = sinusoidal_embed(values[r], dim);
        std::copy(row.v.begin(), row.v.end(), out.row_ptr(static_cast<int>(r)));
    }
    return out;
}

// ------------------------------------------------------------- checkpoint --

namespace {
constexpr char kMagic[8] = {'D', 'T', 'Q', 'L', 'P', 'S', '1', '\0'};
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

void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<uint64_t>(d)); }

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw io_error("checkpoint: truncated file");
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(b[i]) << (8 * i);
    return x;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw io_error("checkpoint: truncated file");
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
    return x;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

std::string get_str(std::istream& is) {
    uint32_t n = get_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw io_error("checkpoint: truncated string");
    return s;
}

void put_tensor(std::ostream& os, const Tensor& t) {
    put_u32(os, static_cast<uint32_t>(t.rows));
    put_u32(os, static_cast<uint32_t>(t.cols));
    for (double d : t.v) put_f64(os, d);
}

Tensor get_tensor(std::istream& is) {
    int rows = static_cast<int>(get_u32(is));
    int cols = static_cast<int>(get_u32(is));
    Tensor t(rows, cols);
    for (auto& d : t.v) d = get_f64(is);
    return t;
}
}  // namespace

void save_stores(const std::string& path,
                 const std::vector<std::pair<std::string, const ParamStore*>>& stores,
                 const std::map<std::string, std::string>& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(meta.size()));
    for (auto& [k, v] : meta) {
        put_str(os, k);
        put_str(os, v);
    }
    put_u32(os, static_cast<uint32_t>(stores.size()));
    for (auto& [prefix, store] : stores) {
        put_str(os, prefix);
        put_u64(os, static_cast<uint64_t>(store->step_count()));
        put_u32(os, static_cast<uint32_t>(store->entries().size()));
        for (const Param& p : store->entries()) {
            put_str(os, p.name);
            put_tensor(os, p.value);
            put_tensor(os, p.m);
            put_tensor(os, p.v);
        }
    }
    if (!os) throw io_error("checkpoint: write failed for " + path);
}

namespace {
std::map<std::string, std::string> read_header(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 7) != 0)
        throw io_error("checkpoint: bad magic (not a parameter checkpoint)");
    uint32_t version = get_u32(is);
    if (version != kVersion)
        throw io_error("checkpoint: unsupported version " + std::to_string(version));
    std::map<std::string, std::string> meta;
    uint32_t nmeta = get_u32(is);
    for (uint32_t i = 0; i < nmeta; ++i) {
        std::string k = get_str(is);
        meta[k] = get_str(is);
    }
    return meta;
}
}  // namespace

std::map<std::string, std::string> load_stores(
    const std::string& path, const std::vector<std::pair<std::string, ParamStore*>>& stores) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("checkpoint: cannot open " + path);
    auto meta = read_header(is);
    uint32_t nstores = get_u32(is);
    std::map<std::string, ParamStore*> wanted;
    for (auto& [prefix, store] : stores) wanted[prefix] = store;
    for (uint32_t s = 0; s < nstores; ++s) {
        std::string prefix = get_str(is);
        uint64_t steps = get_u64(is);
        uint32_t nentries = get_u32(is);
        auto it = wanted.find(prefix);
        ParamStore* store = it == wanted.end() ? nullptr : it->second;
        if (store) {
            for (int64_t i = store->step_count(); i < static_cast<int64_t>(steps); ++i)
                store->bump_step();
        }
        for (uint32_t e = 0; e < nentries; ++e) {
            std::string name = get_str(is);
            Tensor value = get_tensor(is);
            Tensor m = get_tensor(is);
            Tensor v = get_tensor(is);
            if (!store) continue;
            Param& p = store->contains(name) ? store->find(name)
                                             : store->add(name, value.rows, value.cols);
            if (!p.value.same_shape(value))
                throw io_error("checkpoint: shape mismatch for " + prefix + "/" + name);
            p.value = std::move(value);
            p.m = std::move(m);
            p.v = std::move(v);
        }
        if (it != wanted.end()) wanted.erase(it);
    }
    if (!wanted.empty()) throw io_error("checkpoint: missing store '" + wanted.begin()->first + "'");
    return meta;
}

std::map<std::string, std::string> peek_meta(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("checkpoint: cannot open " + path);
    return read_header(is);
}

}  // namespace dtql
