#include <cmath>
#include <cstring>

#include "dtql/kernels.hpp"

// Reference kernels: plain loops, written for clarity. The AVX2 variants in
// kernels_avx2.cpp are equivalence-tested against these.

namespace dtql::kernels {
namespace {

void s_gemm_nn(const double* A, const double* B, double* C, int M, int K, int N,
               bool acc, int m0, int m1) {
    for (int m = m0; m < m1; ++m) {
        double* c = C + static_cast<size_t>(m) * N;
        if (!acc) std::memset(c, 0, sizeof(double) * N);
        const double* a = A + static_cast<size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            double av = a[k];
            const double* b = B + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

void s_gemm_nt(const double* A, const double* B, double* C, int M, int K, int N,
               bool acc, int m0, int m1) {
    for (int m = m0; m < m1; ++m) {
        const double* a = A + static_cast<size_t>(m) * K;
        double* c = C + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) {
            const double* b = B + static_cast<size_t>(n) * K;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            c[n] = acc ? c[n] + s : s;
        }
    }
}

void s_gemm_tn(const double* A, const double* B, double* C, int M, int K, int N,
               bool acc, int m0, int m1) {
    for (int m = m0; m < m1; ++m) {
        double* c = C + static_cast<size_t>(m) * N;
        if (!acc) std::memset(c, 0, sizeof(double) * N);
    }
    for (int k = 0; k < K; ++k) {
        const double* arow = A + static_cast<size_t>(k) * M;
        const double* b = B + static_cast<size_t>(k) * N;
        for (int m = m0; m < m1; ++m) {
            double av = arow[m];
            double* c = C + static_cast<size_t>(m) * N;
            for (int n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

void s_mish(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] * std::tanh(softplus(x[i]));
}

void s_mish_grad(const double* x, const double* dy, double* dx, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        double sp = softplus(x[i]);
        double t = std::tanh(sp);
        double sig = 1.0 / (1.0 + std::exp(-x[i]));
        dx[i] += dy[i] * (t + x[i] * (1.0 - t * t) * sig);
    }
}

void s_tanh(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void s_tanh_grad(const double* y, const double* dy, double* dx, size_t n) {
    for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
}

void s_relu(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_grad(const double* x, const double* dy, double* dx, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

void s_exp(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void s_adam(double* p, double* m, double* v, const double* g, size_t n, double lr,
            double beta1, double beta2, double eps, double bc1, double bc2) {
    for (size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

double s_sumsq(const double* x, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i] * x[i];
    return s;
}

double s_dot(const double* x, const double* y, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

void s_axpy(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

const Backend& scalar_backend() {
    static const Backend b = {
        "scalar",  s_gemm_nn, s_gemm_nt,   s_gemm_tn, s_mish, s_mish_grad,
        s_tanh,    s_tanh_grad, s_relu,    s_relu_grad, s_exp, s_adam,
        s_sumsq,   s_dot,     s_axpy,
    };
    return b;
}

}  // namespace dtql::kernels
