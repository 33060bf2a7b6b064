#include "dtql/tape.hpp"

#include <cmath>

#include "dtql/errors.hpp"
#include "dtql/kernels.hpp"

namespace dtql {

namespace k = kernels;

void Tape::check_id(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
        throw usage_error("tape: invalid node id");
}

int Tape::push(Node n) {
    if (n.in0 >= 0) n.needs = n.needs || nodes_[n.in0].needs;
    if (n.in1 >= 0) n.needs = n.needs || nodes_[n.in1].needs;
    if (n.in2 >= 0) n.needs = n.needs || nodes_[n.in2].needs;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(const Tensor* external, bool requires_grad) {
    if (!external) throw usage_error("tape: null external leaf");
    Node n;
    n.op = Op::kLeaf;
    n.ext = external;
    n.wants_grad = requires_grad;
    n.needs = requires_grad;
    return push(std::move(n));
}

int Tape::constant(Tensor value) {
    Node n;
    n.op = Op::kLeaf;
    n.val = std::move(value);
    return push(std::move(n));
}

int Tape::variable(Tensor value) {
    Node n;
    n.op = Op::kLeaf;
    n.val = std::move(value);
    n.wants_grad = true;
    n.needs = true;
    return push(std::move(n));
}

int Tape::matmul(int x, int w) {
    check_id(x);
    check_id(w);
    const Tensor& a = val_of(nodes_[x]);
    const Tensor& b = val_of(nodes_[w]);
    if (a.cols != b.rows) throw config_error("matmul: inner dimensions disagree");
    Node n;
    n.op = Op::kMatmul;
    n.in0 = x;
    n.in1 = w;
    n.val.resize(a.rows, b.cols);
    k::gemm_nn(a.data(), b.data(), n.val.data(), a.rows, a.cols, b.cols, false);
    return push(std::move(n));
}

int Tape::add_row(int x, int bias_row) {
    check_id(x);
    check_id(bias_row);
    const Tensor& a = val_of(nodes_[x]);
    const Tensor& b = val_of(nodes_[bias_row]);
    if (b.rows != 1 || b.cols != a.cols) throw config_error("add_row: bias shape mismatch");
    Node n;
    n.op = Op::kAddRow;
    n.in0 = x;
    n.in1 = bias_row;
    n.val = a;
    for (int r = 0; r < a.rows; ++r) {
        double* row = n.val.row_ptr(r);
        for (int c = 0; c < a.cols; ++c) row[c] += b.v[c];
    }
    return push(std::move(n));
}

namespace {
void binary_shape_check(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) throw config_error(std::string(what) + ": shape mismatch");
}
}  // namespace

int Tape::add(int a, int b) {
    check_id(a);
    check_id(b);
    const Tensor& x = val_of(nodes_[a]);
    const Tensor& y = val_of(nodes_[b]);
    binary_shape_check(x, y, "add");
    Node n;
    n.op = Op::kAdd;
    n.in0 = a;
    n.in1 = b;
    n.val = x;
    for (size_t i = 0; i < y.v.size(); ++i) n.val.v[i] += y.v[i];
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    check_id(a);
    check_id(b);
    const Tensor& x = val_of(nodes_[a]);
    const Tensor& y = val_of(nodes_[b]);
    binary_shape_check(x, y, "sub");
    Node n;
    n.op = Op::kSub;
    n.in0 = a;
    n.in1 = b;
    n.val = x;
    for (size_t i = 0; i < y.v.size(); ++i) n.val.v[i] -= y.v[i];
    return push(std::move(n));
}

int Tape::mul_elem(int a, int b) {
    check_id(a);
    check_id(b);
    const Tensor& x = val_of(nodes_[a]);
    const Tensor& y = val_of(nodes_[b]);
    binary_shape_check(x, y, "mul_elem");
    Node n;
    n.op = Op::kMulElem;
    n.in0 = a;
    n.in1 = b;
    n.val = x;
    for (size_t i = 0; i < y.v.size(); ++i) n.val.v[i] *= y.v[i];
    return push(std::move(n));
}

int Tape::scale(int x, double c) {
    check_id(x);
    Node n;
    n.op = Op::kScale;
    n.in0 = x;
    n.c0 = c;
    n.val = val_of(nodes_[x]);
    for (auto& v : n.val.v) v *= c;
    return push(std::move(n));
}

int Tape::scale_rows(int x, Tensor row_weights) {
    check_id(x);
    const Tensor& a = val_of(nodes_[x]);
    if (row_weights.rows != 1 || row_weights.cols != a.rows)
        throw config_error("scale_rows: weight vector must be 1 x rows");
    Node n;
    n.op = Op::kScaleRows;
    n.in0 = x;
    n.aux = std::move(row_weights);
    n.val = a;
    for (int r = 0; r < a.rows; ++r) {
        double w = n.aux.v[r];
        double* row = n.val.row_ptr(r);
        for (int c = 0; c < a.cols; ++c) row[c] *= w;
    }
    return push(std::move(n));
}

int Tape::concat_cols(int a, int b, int c) {
    check_id(a);
    check_id(b);
    const Tensor& x = val_of(nodes_[a]);
    const Tensor& y = val_of(nodes_[b]);
    const Tensor* z = nullptr;
    if (c >= 0) {
        check_id(c);
        z = &val_of(nodes_[c]);
    }
    if (x.rows != y.rows || (z && z->rows != x.rows))
        throw config_error("concat_cols: row counts disagree");
    Node n;
    n.op = Op::kConcat;
    n.in0 = a;
    n.in1 = b;
    n.in2 = c;
    int total = x.cols + y.cols + (z ? z->cols : 0);
    n.val.resize(x.rows, total);
    for (int r = 0; r < x.rows; ++r) {
        double* out = n.val.row_ptr(r);
        std::copy(x.row_ptr(r), x.row_ptr(r) + x.cols, out);
        std::copy(y.row_ptr(r), y.row_ptr(r) + y.cols, out + x.cols);
        if (z) std::copy(z->row_ptr(r), z->row_ptr(r) + z->cols, out + x.cols + y.cols);
    }
    return push(std::move(n));
}

int Tape::mish(int x) {
    check_id(x);
    const Tensor& a = val_of(nodes_[x]);
    Node n;
    n.op = Op::kMish;
    n.in0 = x;
    n.val.resize(a.rows, a.cols);
    k::active().mish(a.data(), n.val.data(), a.numel());
    return push(std::move(n));
}

int Tape::relu(int x) {
    check_id(x);
    const Tensor& a = val_of(nodes_[x]);
    Node n;
    n.op = Op::kRelu;
    n.in0 = x;
    n.val.resize(a.rows, a.cols);
    k::active().relu(a.data(), n.val.data(), a.numel());
    return push(std::move(n));
}

int Tape::tanh_(int x) {
    check_id(x);
    const Tensor& a = val_of(nodes_[x]);
    Node n;
    n.op = Op::kTanh;
    n.in0 = x;
    n.val.resize(a.rows, a.cols);
    k::active().tanh_(a.data(), n.val.data(), a.numel());
    return push(std::move(n));
}

int Tape::exp_(int x) {
    check_id(x);
    const Tensor& a = val_of(nodes_[x]);
    Node n;
    n.op = Op::kExp;
    n.in0 = x;
    n.val.resize(a.rows, a.cols);
    k::active().exp_(a.data(), n.val.data(), a.numel());
    return push(std::move(n));
}

int Tape::clamp(int x, double lo, double hi) {
    check_id(x);
    const Tensor& a = val_of(nodes_[x]);
    Node n;
    n.op = Op::kClamp;
    n.in0 = x;
    n.c0 = lo;
    n.c1 = hi;
    n.val = a;
    for (auto& v : n.val.v) v = v < lo ? lo : (v > hi ? hi : v);
    return push(std::move(n));
}

int Tape::log1msq(int x) {
    check_id(x);
    const Tensor& a = val_of(nodes_[x]);
    Node n;
    n.op = Op::kLog1mSq;
    n.in0 = x;
    n.val.resize(a.rows, a.cols);
    for (size_t i = 0; i < a.v.size(); ++i) {
        double t = std::min(std::fabs(a.v[i]), 1.0 - 1e-12);
        n.val.v[i] = std::log1p(-t * t);
    }
    return push(std::move(n));
}

int Tape::min2(int a, int b) {
    check_id(a);
    check_id(b);
    const Tensor& x = val_of(nodes_[a]);
    const Tensor& y = val_of(nodes_[b]);
    binary_shape_check(x, y, "min2");
    Node n;
    n.op = Op::kMin2;
    n.in0 = a;
    n.in1 = b;
    n.val = x;
    for (size_t i = 0; i < y.v.size(); ++i) n.val.v[i] = std::min(x.v[i], y.v[i]);
    return push(std::move(n));
}

int Tape::mean_sumsq(int x) { return mean_sumsq(x, Tensor()); }

int Tape::mean_sumsq(int x, Tensor row_weights) {
    check_id(x);
    const Tensor& a = val_of(nodes_[x]);
    if (!row_weights.empty() && (row_weights.rows != 1 || row_weights.cols != a.rows))
        throw config_error("mean_sumsq: weight vector must be 1 x rows");
    Node n;
    n.op = Op::kMeanSumSq;
    n.in0 = x;
    n.aux = std::move(row_weights);
    double s = 0.0;
    for (int r = 0; r < a.rows; ++r) {
        double w = n.aux.empty() ? 1.0 : n.aux.v[r];
        s += w * k::active().sumsq(a.row_ptr(r), a.cols);
    }
    n.val = Tensor::scalar(s / a.rows);
    return push(std::move(n));
}

int Tape::expectile_mean(int u, double tau) {
    check_id(u);
    if (!(tau > 0.0 && tau < 1.0)) throw config_error("expectile_mean: tau must be in (0,1)");
    const Tensor& a = val_of(nodes_[u]);
    Node n;
    n.op = Op::kExpectile;
    n.in0 = u;
    n.c0 = tau;
    double s = 0.0;
    for (double x : a.v) s += std::fabs(tau - (x < 0.0 ? 1.0 : 0.0)) * x * x;
    n.val = Tensor::scalar(s / static_cast<double>(a.numel()));
    return push(std::move(n));
}

int Tape::mean_sum(int x) {
    check_id(x);
    const Tensor& a = val_of(nodes_[x]);
    Node n;
    n.op = Op::kMeanSum;
    n.in0 = x;
    double s = 0.0;
    for (double v : a.v) s += v;
    n.val = Tensor::scalar(s / a.rows);
    return push(std::move(n));
}

const Tensor& Tape::value(int id) const {
    check_id(id);
    return val_of(nodes_[id]);
}

double Tape::scalar_value(int id) const {
    const Tensor& t = value(id);
    if (t.numel() != 1) throw usage_error("scalar_value: node is not 1x1");
    return t.v[0];
}

bool Tape::has_grad(int id) const {
    check_id(id);
    return !nodes_[id].grad.empty();
}

const Tensor& Tape::grad(int id) const {
    check_id(id);
    if (nodes_[id].grad.empty())
        throw usage_error("grad: node has no gradient (not on a differentiable path?)");
    return nodes_[id].grad;
}

Tensor& Tape::ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
        const Tensor& v = val_of(n);
        n.grad.resize(v.rows, v.cols);
    }
    return n.grad;
}

void Tape::backward(int root, const Tensor* seed) {
    if (nodes_.empty()) throw usage_error("backward: empty tape");
    check_id(root);
    if (swept_) throw usage_error("backward: tape already swept");
    swept_ = true;
    const Tensor& rv = val_of(nodes_[root]);
    Tensor& rg = ensure_grad(root);
    if (seed) {
        if (!seed->same_shape(rv)) throw config_error("backward: seed gradient shape mismatch");
        rg = *seed;
    } else {
        if (rv.numel() != 1)
            throw usage_error("backward: non-scalar root needs an explicit seed gradient");
        rg.fill(1.0);
    }
    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs || n.grad.empty() || n.op == Op::kLeaf) continue;
        backprop(id);
    }
}

void Tape::backprop(int id) {
    Node& n = nodes_[id];
    const Tensor& dy = n.grad;
    auto in_needs = [&](int i) { return i >= 0 && nodes_[i].needs; };

    switch (n.op) {
        case Op::kLeaf:
            break;
        case Op::kMatmul: {
            const Tensor& a = val_of(nodes_[n.in0]);
            const Tensor& b = val_of(nodes_[n.in1]);
            if (in_needs(n.in0)) {
                Tensor& da = ensure_grad(n.in0);
                k::gemm_nt(dy.data(), b.data(), da.data(), a.rows, b.cols, a.cols, true);
            }
            if (in_needs(n.in1)) {
                Tensor& db = ensure_grad(n.in1);
                k::gemm_tn(a.data(), dy.data(), db.data(), a.cols, a.rows, b.cols, true);
            }
            break;
        }
        case Op::kAddRow: {
            if (in_needs(n.in0)) {
                Tensor& dx = ensure_grad(n.in0);
                k::active().axpy(1.0, dy.data(), dx.data(), dy.numel());
            }
            if (in_needs(n.in1)) {
                Tensor& db = ensure_grad(n.in1);
                for (int r = 0; r < dy.rows; ++r) {
                    const double* row = dy.row_ptr(r);
                    for (int c = 0; c < dy.cols; ++c) db.v[c] += row[c];
                }
            }
            break;
        }
        case Op::kAdd: {
            for (int in : {n.in0, n.in1})
                if (in_needs(in))
                    k::active().axpy(1.0, dy.data(), ensure_grad(in).data(), dy.numel());
            break;
        }
        case Op::kSub: {
            if (in_needs(n.in0))
                k::active().axpy(1.0, dy.data(), ensure_grad(n.in0).data(), dy.numel());
            if (in_needs(n.in1))
                k::active().axpy(-1.0, dy.data(), ensure_grad(n.in1).data(), dy.numel());
            break;
        }
        case Op::kMulElem: {
            const Tensor& a = val_of(nodes_[n.in0]);
            const Tensor& b = val_of(nodes_[n.in1]);
            if (in_needs(n.in0)) {
                Tensor& da = ensure_grad(n.in0);
                for (size_t i = 0; i < dy.v.size(); ++i) da.v[i] += dy.v[i] * b.v[i];
            }
            if (in_needs(n.in1)) {
                Tensor& db = ensure_grad(n.in1);
                for (size_t i = 0; i < dy.v.size(); ++i) db.v[i] += dy.v[i] * a.v[i];
            }
            break;
        }
        case Op::kScale: {
            if (in_needs(n.in0))
                k::active().axpy(n.c0, dy.data(), ensure_grad(n.in0).data(), dy.numel());
            break;
        }
        case Op::kScaleRows: {
            if (in_needs(n.in0)) {
                Tensor& dx = ensure_grad(n.in0);
                for (int r = 0; r < dy.rows; ++r)
                    k::active().axpy(n.aux.v[r], dy.row_ptr(r), dx.row_ptr(r), dy.cols);
            }
            break;
        }
        case Op::kConcat: {
            const Tensor& x = val_of(nodes_[n.in0]);
            const Tensor& y = val_of(nodes_[n.in1]);
            int off2 = x.cols + y.cols;
            if (in_needs(n.in0)) {
                Tensor& dx = ensure_grad(n.in0);
                for (int r = 0; r < dy.rows; ++r)
                    k::active().axpy(1.0, dy.row_ptr(r), dx.row_ptr(r), x.cols);
            }
            if (in_needs(n.in1)) {
                Tensor& dz = ensure_grad(n.in1);
                for (int r = 0; r < dy.rows; ++r)
                    k::active().axpy(1.0, dy.row_ptr(r) + x.cols, dz.row_ptr(r), y.cols);
            }
            if (n.in2 >= 0 && in_needs(n.in2)) {
                const Tensor& z = val_of(nodes_[n.in2]);
                Tensor& dz = ensure_grad(n.in2);
                for (int r = 0; r < dy.rows; ++r)
                    k::active().axpy(1.0, dy.row_ptr(r) + off2, dz.row_ptr(r), z.cols);
            }
            break;
        }
        case Op::kMish: {
            if (in_needs(n.in0)) {
                const Tensor& x = val_of(nodes_[n.in0]);
                k::active().mish_grad(x.data(), dy.data(), ensure_grad(n.in0).data(), dy.numel());
            }
            break;
        }
        case Op::kRelu: {
            if (in_needs(n.in0)) {
                const Tensor& x = val_of(nodes_[n.in0]);
                k::active().relu_grad(x.data(), dy.data(), ensure_grad(n.in0).data(), dy.numel());
            }
            break;
        }
        case Op::kTanh: {
            if (in_needs(n.in0))
                k::active().tanh_grad(n.val.data(), dy.data(), ensure_grad(n.in0).data(),
                                      dy.numel());
            break;
        }
        case Op::kExp: {
            if (in_needs(n.in0)) {
                Tensor& dx = ensure_grad(n.in0);
                for (size_t i = 0; i < dy.v.size(); ++i) dx.v[i] += dy.v[i] * n.val.v[i];
            }
            break;
        }
        case Op::kClamp: {
            if (in_needs(n.in0)) {
                const Tensor& x = val_of(nodes_[n.in0]);
                Tensor& dx = ensure_grad(n.in0);
                for (size_t i = 0; i < dy.v.size(); ++i)
                    if (x.v[i] > n.c0 && x.v[i] < n.c1) dx.v[i] += dy.v[i];
            }
            break;
        }
        case Op::kLog1mSq: {
            if (in_needs(n.in0)) {
                const Tensor& x = val_of(nodes_[n.in0]);
                Tensor& dx = ensure_grad(n.in0);
                for (size_t i = 0; i < dy.v.size(); ++i) {
                    double t = std::min(std::fabs(x.v[i]), 1.0 - 1e-12);
                    double sign = x.v[i] < 0.0 ? -1.0 : 1.0;
                    dx.v[i] += dy.v[i] * (-2.0 * sign * t / (1.0 - t * t));
                }
            }
            break;
        }
        case Op::kMin2: {
            const Tensor& a = val_of(nodes_[n.in0]);
            const Tensor& b = val_of(nodes_[n.in1]);
            for (size_t i = 0; i < dy.v.size(); ++i) {
                bool first = a.v[i] <= b.v[i];
                int in = first ? n.in0 : n.in1;
                if (in_needs(in)) ensure_grad(in).v[i] += dy.v[i];
            }
            break;
        }
        case Op::kMeanSumSq: {
            if (in_needs(n.in0)) {
                const Tensor& x = val_of(nodes_[n.in0]);
                Tensor& dx = ensure_grad(n.in0);
                double ds = dy.v[0] * 2.0 / x.rows;
                for (int r = 0; r < x.rows; ++r) {
                    double w = n.aux.empty() ? 1.0 : n.aux.v[r];
                    k::active().axpy(ds * w, x.row_ptr(r), dx.row_ptr(r), x.cols);
                }
            }
            break;
        }
        case Op::kExpectile: {
            if (in_needs(n.in0)) {
                const Tensor& u = val_of(nodes_[n.in0]);
                Tensor& du = ensure_grad(n.in0);
                double ds = dy.v[0] * 2.0 / static_cast<double>(u.numel());
                for (size_t i = 0; i < u.v.size(); ++i) {
                    double w = std::fabs(n.c0 - (u.v[i] < 0.0 ? 1.0 : 0.0));
                    du.v[i] += ds * w * u.v[i];
                }
            }
            break;
        }
        case Op::kMeanSum: {
            if (in_needs(n.in0)) {
                Tensor& dx = ensure_grad(n.in0);
                double ds = dy.v[0] / val_of(nodes_[n.in0]).rows;
                for (auto& g : dx.v) g += ds;
            }
            break;
        }
    }
}

void Tape::clear() {
    nodes_.clear();
    swept_ = false;
}

}  // namespace dtql
