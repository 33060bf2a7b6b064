#pragma once

#include <vector>

#include "dtql/tensor.hpp"

namespace dtql {

// Reverse-mode tape over whole tensors. Values are computed eagerly as nodes
// are recorded; backward() sweeps the nodes once in reverse creation order
// (creation order is a topological order by construction) and accumulates
// adjoints additively at fan-out.
class Tape {
public:
    enum class Op {
        kLeaf,      // external or owned constant/variable
        kMatmul,    // in0 (MxK) . in1 (KxN)
        kAddRow,    // in0 (MxN) + broadcast row in1 (1xN)
        kAdd,       // in0 + in1
        kSub,       // in0 - in1
        kMulElem,   // in0 ⊙ in1
        kScale,     // c0 * in0
        kScaleRows, // row i of in0 times aux[i]
        kConcat,    // columns of in0 | in1 | in2
        kMish,
        kRelu,
        kTanh,
        kExp,
        kClamp,       // clamp to [c0, c1], pass-through gradient strictly inside
        kLog1mSq,     // log(1 - x^2), inputs strictly inside (-1, 1)
        kMin2,        // elementwise min(in0, in1); gradient follows the winner (ties: in0)
        kMeanSumSq,   // (1/M) sum_i aux[i] * |row_i|^2   -> 1x1
        kExpectile,   // (1/numel) sum |c0 - 1(u<0)| u^2  -> 1x1
        kMeanSum,     // (1/M) sum_ij x_ij               -> 1x1
    };

    // --- graph construction -------------------------------------------------
    // Leaf over caller-owned storage; the pointer must stay valid for the
    // tape's lifetime. requires_grad marks it as a differentiation root.
    int leaf(const Tensor* external, bool requires_grad);
    int constant(Tensor value);              // owned, no gradient
    int variable(Tensor value);              // owned, with gradient

    int matmul(int x, int w);
    int add_row(int x, int bias_row);
    int add(int a, int b);
    int sub(int a, int b);
    int mul_elem(int a, int b);
    int scale(int x, double c);
    int scale_rows(int x, Tensor row_weights);  // weights: 1xM, not differentiated
    int concat_cols(int a, int b, int c = -1);
    int mish(int x);
    int relu(int x);
    int tanh_(int x);
    int exp_(int x);
    int clamp(int x, double lo, double hi);
    int log1msq(int x);
    int min2(int a, int b);
    int mean_sumsq(int x);                        // unit row weights
    int mean_sumsq(int x, Tensor row_weights);    // weights: 1xM
    int expectile_mean(int u, double tau);
    int mean_sum(int x);

    // --- execution ----------------------------------------------------------
    const Tensor& value(int id) const;
    double scalar_value(int id) const;

    // Seeds the adjoint of `root` (default: ones, root must be 1x1) and runs
    // one reverse sweep. May be called once per tape.
    void backward(int root, const Tensor* seed = nullptr);

    bool has_grad(int id) const;
    const Tensor& grad(int id) const;

    size_t size() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        Op op;
        int in0 = -1, in1 = -1, in2 = -1;
        Tensor val;                   // owned output (unused when ext is set)
        const Tensor* ext = nullptr;  // external leaf storage
        Tensor aux;                   // per-row weights etc.
        double c0 = 0.0, c1 = 0.0;
        Tensor grad;
        bool wants_grad = false;        // leaf gradient root
        bool needs = false;           // on a path from a gradient root
    };

    const Tensor& val_of(const Node& n) const { return n.ext ? *n.ext : n.val; }
    int push(Node n);
    Tensor& ensure_grad(int id);
    void backprop(int id);
    void check_id(int id) const;

    std::vector<Node> nodes_;
    bool swept_ = false;
};

}  // namespace dtql
