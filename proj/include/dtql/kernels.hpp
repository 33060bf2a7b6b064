#pragma once

#include <cstddef>

namespace dtql::kernels {

// Inner-loop kernels behind the tensor ops. All matrices are dense row-major
// float64. Each GEMM variant computes rows [m0, m1) of C so callers can
// partition work across threads; acc=false overwrites, acc=true adds.
//
//   gemm_nn: C(MxN)  <-  A(MxK) * B(KxN)
//   gemm_nt: C(MxN)  <-  A(MxK) * B(NxK)^T
//   gemm_tn: C(MxN)  <-  A(KxM)^T * B(KxN)
struct Backend {
    const char* name;
    void (*gemm_nn)(const double* A, const double* B, double* C, int M, int K, int N,
                    bool acc, int m0, int m1);
    void (*gemm_nt)(const double* A, const double* B, double* C, int M, int K, int N,
                    bool acc, int m0, int m1);
    void (*gemm_tn)(const double* A, const double* B, double* C, int M, int K, int N,
                    bool acc, int m0, int m1);
    void (*mish)(const double* x, double* y, std::size_t n);
    void (*mish_grad)(const double* x, const double* dy, double* dx, std::size_t n);  // dx += dy*mish'(x)
    void (*tanh_)(const double* x, double* y, std::size_t n);
    void (*tanh_grad)(const double* y, const double* dy, double* dx, std::size_t n);  // dx += dy*(1-y^2)
    void (*relu)(const double* x, double* y, std::size_t n);
    void (*relu_grad)(const double* x, const double* dy, double* dx, std::size_t n);
    void (*exp_)(const double* x, double* y, std::size_t n);
    // p -= lr * (m/bc1) / (sqrt(v/bc2) + eps) after the moment update.
    void (*adam)(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bc1, double bc2);
    double (*sumsq)(const double* x, std::size_t n);
    double (*dot)(const double* x, const double* y, std::size_t n);
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
};

const Backend& scalar_backend();
bool avx2_supported();                      // build + cpu support
const Backend* backend_by_name(const char* name);  // "scalar" / "avx2", null if unknown

// Active backend: picked at startup (AVX2 when available), overridable with
// the DTQL_KERNELS environment variable or set_backend().
const Backend& active();
void set_backend(const char* name);

// Threaded front ends used by the tape; these partition rows of C across the
// pool when the product is large enough to pay for it.
void gemm_nn(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
void gemm_nt(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
void gemm_tn(const double* A, const double* B, double* C, int M, int K, int N, bool acc);

}  // namespace dtql::kernels
