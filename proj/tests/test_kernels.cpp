#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>
#include <cmath>

#include "doctest.h"
#include "dtql/kernels.hpp"
#include "dtql/rng.hpp"
#include "dtql/tensor.hpp"

using namespace dtql;
namespace k = dtql::kernels;

namespace {

bool close(double a, double b, double rtol, double atol) {
    return std::fabs(a - b) <= atol + rtol * std::max(std::fabs(a), std::fabs(b));
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double rtol,
                 double atol) {
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        INFO("index ", i, ": ", a[i], " vs ", b[i]);
        REQUIRE(close(a[i], b[i], rtol, atol));
    }
}

std::vector<double> randvec(size_t n, Rng& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace

TEST_CASE("scalar and simd gemm variants agree") {
    if (!k::avx2_supported()) {
        MESSAGE("avx2 not available; dispatch falls back to scalar");
        return;
    }
    const k::Backend& s = k::scalar_backend();
    const k::Backend& v = *k::backend_by_name("avx2");
    Rng rng(7);
    // deliberately awkward sizes to hit every tail path
    int dims[][3] = {{1, 1, 1},   {3, 5, 7},    {4, 8, 8},   {17, 19, 23},
                     {64, 19, 256}, {256, 256, 256}, {5, 256, 2}, {2, 300, 1}};
    for (auto [M, K, N] : dims) {
        for (bool acc : {false, true}) {
            auto A = randvec(size_t(M) * K, rng);
            auto B = randvec(size_t(K) * N, rng);
            auto C0 = randvec(size_t(M) * N, rng);
            auto C1 = C0;
            s.gemm_nn(A.data(), B.data(), C0.data(), M, K, N, acc, 0, M);
            v.gemm_nn(A.data(), B.data(), C1.data(), M, K, N, acc, 0, M);
            check_close(C0, C1, 1e-12, 1e-13);

            auto Bt = randvec(size_t(N) * K, rng);
            C1 = C0;
            auto C2 = C0;
            s.gemm_nt(A.data(), Bt.data(), C1.data(), M, K, N, acc, 0, M);
            v.gemm_nt(A.data(), Bt.data(), C2.data(), M, K, N, acc, 0, M);
            check_close(C1, C2, 1e-12, 1e-13);

            auto At = randvec(size_t(K) * M, rng);
            auto Bn = randvec(size_t(K) * N, rng);
            C1 = C0;
            C2 = C0;
            s.gemm_tn(At.data(), Bn.data(), C1.data(), M, K, N, acc, 0, M);
            v.gemm_tn(At.data(), Bn.data(), C2.data(), M, K, N, acc, 0, M);
            check_close(C1, C2, 1e-12, 1e-13);
        }
    }
}

TEST_CASE("threaded gemm front end matches single-thread backend") {
    Rng rng(11);
    int M = 97, K = 131, N = 61;
    auto A = randvec(size_t(M) * K, rng);
    auto B = randvec(size_t(K) * N, rng);
    std::vector<double> C0(size_t(M) * N, 0.0), C1 = C0;
    k::active().gemm_nn(A.data(), B.data(), C0.data(), M, K, N, false, 0, M);
    k::gemm_nn(A.data(), B.data(), C1.data(), M, K, N, false);
    // identical partitioned arithmetic => bitwise equal
    REQUIRE(C0 == C1);
}

TEST_CASE("scalar and simd elementwise kernels agree") {
    if (!k::avx2_supported()) return;
    const k::Backend& s = k::scalar_backend();
    const k::Backend& v = *k::backend_by_name("avx2");
    Rng rng(23);
    size_t n = 1031;
    std::vector<double> x(n);
    for (size_t i = 0; i < n; ++i) x[i] = rng.uniform(-30.0, 30.0);
    x[0] = 0.0;
    x[1] = -1e-12;
    x[2] = 45.0;
    x[3] = -45.0;

    std::vector<double> y0(n), y1(n);
    s.mish(x.data(), y0.data(), n);
    v.mish(x.data(), y1.data(), n);
    check_close(y0, y1, 1e-12, 1e-14);

    s.tanh_(x.data(), y0.data(), n);
    v.tanh_(x.data(), y1.data(), n);
    check_close(y0, y1, 1e-13, 1e-15);

    s.relu(x.data(), y0.data(), n);
    v.relu(x.data(), y1.data(), n);
    check_close(y0, y1, 0.0, 0.0);

    std::vector<double> e(n);
    for (size_t i = 0; i < n; ++i) e[i] = rng.uniform(-20.0, 3.0);
    s.exp_(e.data(), y0.data(), n);
    v.exp_(e.data(), y1.data(), n);
    check_close(y0, y1, 1e-13, 0.0);

    auto dy = randvec(n, rng);
    auto dx0 = randvec(n, rng);
    auto dx1 = dx0;
    s.mish_grad(x.data(), dy.data(), dx0.data(), n);
    v.mish_grad(x.data(), dy.data(), dx1.data(), n);
    check_close(dx0, dx1, 1e-12, 1e-13);

    std::vector<double> ty(n);
    s.tanh_(x.data(), ty.data(), n);
    dx0 = dx1;
    s.tanh_grad(ty.data(), dy.data(), dx0.data(), n);
    v.tanh_grad(ty.data(), dy.data(), dx1.data(), n);
    check_close(dx0, dx1, 1e-13, 1e-14);

    dx0 = dx1;
    s.relu_grad(x.data(), dy.data(), dx0.data(), n);
    v.relu_grad(x.data(), dy.data(), dx1.data(), n);
    check_close(dx0, dx1, 0.0, 0.0);
}

TEST_CASE("simd exp is accurate against libm") {
    if (!k::avx2_supported()) return;
    const k::Backend& v = *k::backend_by_name("avx2");
    Rng rng(5);
    size_t n = 4096;
    std::vector<double> x(n), y(n);
    for (size_t i = 0; i < n; ++i) x[i] = rng.uniform(-700.0, 700.0);
    v.exp_(x.data(), y.data(), n);
    for (size_t i = 0; i < n; ++i) {
        double ref = std::exp(x[i]);
        REQUIRE(close(y[i], ref, 1e-14, 1e-300));
    }
}

TEST_CASE("scalar and simd adam/sumsq/dot/axpy agree") {
    if (!k::avx2_supported()) return;
    const k::Backend& s = k::scalar_backend();
    const k::Backend& v = *k::backend_by_name("avx2");
    Rng rng(31);
    size_t n = 517;
    auto p0 = randvec(n, rng);
    auto m0 = randvec(n, rng, 0.01);
    auto v0 = randvec(n, rng, 0.0);
    for (auto& x : v0) x = std::fabs(x) + 1e-4;
    auto g = randvec(n, rng);
    auto p1 = p0, m1 = m0, v1 = v0;
    s.adam(p0.data(), m0.data(), v0.data(), g.data(), n, 3e-4, 0.9, 0.999, 1e-8, 0.1, 0.01);
    v.adam(p1.data(), m1.data(), v1.data(), g.data(), n, 3e-4, 0.9, 0.999, 1e-8, 0.1, 0.01);
    check_close(p0, p1, 1e-13, 1e-15);
    check_close(m0, m1, 1e-13, 1e-15);
    check_close(v0, v1, 1e-13, 1e-15);

    auto x = randvec(n, rng);
    auto y = randvec(n, rng);
    REQUIRE(close(s.sumsq(x.data(), n), v.sumsq(x.data(), n), 1e-13, 0.0));
    REQUIRE(close(s.dot(x.data(), y.data(), n), v.dot(x.data(), y.data(), n), 1e-12, 1e-14));
    auto ya = y, yb = y;
    s.axpy(0.37, x.data(), ya.data(), n);
    v.axpy(0.37, x.data(), yb.data(), n);
    check_close(ya, yb, 1e-14, 0.0);
}

TEST_CASE("gemm throughput sanity" * doctest::skip(false)) {
    // Not a hard perf gate, just visibility into the step budget.
    int M = 256, K = 256, N = 256;
    Rng rng(1);
    auto A = randvec(size_t(M) * K, rng);
    auto B = randvec(size_t(K) * N, rng);
    std::vector<double> C(size_t(M) * N);
    auto t0 = std::chrono::steady_clock::now();
    int reps = 50;
    for (int r = 0; r < reps; ++r) k::gemm_nn(A.data(), B.data(), C.data(), M, K, N, false);
    auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double gflops = 2.0 * M * K * N * reps / dt / 1e9;
    MESSAGE("gemm_nn 256^3 [", std::string(k::active().name), "]: ", gflops, " GFLOP/s");
    CHECK(gflops > 0.5);
}
