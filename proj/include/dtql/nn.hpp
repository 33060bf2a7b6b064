#pragma once

#include <map>
#include <string>
#include <vector>

#include "dtql/rng.hpp"
#include "dtql/tape.hpp"
#include "dtql/tensor.hpp"

namespace dtql {

enum class Act { kMish, kRelu };
enum class OutAct { kNone, kTanh };

struct MlpSpec {
    std::vector<int> widths;  // at least input and output
    Act act = Act::kMish;
    OutAct out_act = OutAct::kNone;

    static MlpSpec make(int in, int out, int hidden, int layers, Act act,
                        OutAct out_act = OutAct::kNone);
    void validate() const;
    int in_width() const { return widths.front(); }
    int out_width() const { return widths.back(); }
};

std::string act_name(Act a);
std::string out_act_name(OutAct a);
Act act_from_name(const std::string& s);
OutAct out_act_from_name(const std::string& s);

// Named parameter tensors with their Adam moments and a shared step counter.
struct Param {
    std::string name;
    Tensor value;
    Tensor m;
    Tensor v;
};

class ParamStore {
public:
    Param& add(const std::string& name, int rows, int cols);
    Param& find(const std::string& name);
    const Param& find(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<Param>& entries() { return entries_; }
    const std::vector<Param>& entries() const { return entries_; }
    int64_t step_count() const { return step_; }
    void bump_step() { ++step_; }

    void copy_values_from(const ParamStore& other);  // shapes must match
    bool values_equal(const ParamStore& other) const;

private:
    std::vector<Param> entries_;  // insertion order is the serialization order
    std::map<std::string, size_t> index_;
    int64_t step_ = 0;
};

// Weights uniform in +-sqrt(1/fan_in), biases zero. Entries are named
// <prefix>l<i>.{W,b} so several networks can share one store.
void init_mlp(ParamStore& store, const MlpSpec& spec, Rng& rng, const std::string& prefix = "");

// Per-forward binding of store entries to tape leaves.
struct BoundMlp {
    std::vector<int> weights;
    std::vector<int> biases;
    std::string prefix;
    bool trainable = false;
};

BoundMlp bind_mlp(Tape& tape, ParamStore& store, const MlpSpec& spec, bool trainable,
                  const std::string& prefix = "");
// Read-only binding for frozen networks (gradients never requested).
BoundMlp bind_mlp_frozen(Tape& tape, const ParamStore& store, const MlpSpec& spec,
                         const std::string& prefix = "");

int mlp_forward(Tape& tape, const MlpSpec& spec, const BoundMlp& bound, int input);

// Tape-free forward pass for evaluation paths.
Tensor mlp_infer(const MlpSpec& spec, const ParamStore& store, const Tensor& input,
                 const std::string& prefix = "");

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected update over (param, grad) pairs; bumps the store's step
// counter. Throws numeric_error on any non-finite gradient before touching
// parameters or moments.
void adam_step(ParamStore& store, const std::vector<std::pair<Param*, const Tensor*>>& grads,
               const AdamConfig& cfg);

// Convenience: collect gradients of a bound MLP from a swept tape and update.
void adam_step_mlp(ParamStore& store, Tape& tape, const BoundMlp& bound, const AdamConfig& cfg);

// Interleaved sin/cos features at geometrically spaced frequencies; dim even.
Tensor sinusoidal_embed(double value, int dim);
Tensor sinusoidal_embed_rows(const std::vector<double>& values, int dim);

// Flat binary checkpoint: named float64 payloads (values + Adam moments +
// step counters) for several stores, plus a string metadata table.
void save_stores(const std::string& path,
                 const std::vector<std::pair<std::string, const ParamStore*>>& stores,
                 const std::map<std::string, std::string>& meta);
std::map<std::string, std::string> load_stores(
    const std::string& path, const std::vector<std::pair<std::string, ParamStore*>>& stores);
std::map<std::string, std::string> peek_meta(const std::string& path);

}  // namespace dtql
