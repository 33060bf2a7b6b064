// AVX2 + FMA variants of the inner-loop kernels. Compiled with -mavx2 -mfma;
// runtime dispatch (kernels_dispatch.cpp) keeps them off the hot path on
// machines without the ISA.

#ifdef DTQL_AVX2_BUILD

#include <immintrin.h>

#include <cmath>
#include <cstring>

#include "dtql/kernels.hpp"

namespace dtql::kernels {
namespace {

// ---------------------------------------------------------------- exp ------
// Cody-Waite reduction plus the classic rational approximation on
// [-ln2/2, ln2/2]; ~1 ulp over the clamped range.

inline __m256d exp_pd(__m256d x) {
    const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
    const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
    const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
    const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
    const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
    const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
    const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
    const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
    const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
    const __m256d q3 = _mm256_set1_pd(2.00000000000000000005e0);

    x = _mm256_min_pd(x, _mm256_set1_pd(708.0));
    x = _mm256_max_pd(x, _mm256_set1_pd(-708.0));

    __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    x = _mm256_fnmadd_pd(n, c1, x);
    x = _mm256_fnmadd_pd(n, c2, x);

    __m256d xx = _mm256_mul_pd(x, x);
    __m256d px = _mm256_fmadd_pd(p0, xx, p1);
    px = _mm256_fmadd_pd(px, xx, p2);
    px = _mm256_mul_pd(px, x);
    __m256d qx = _mm256_fmadd_pd(q0, xx, q1);
    qx = _mm256_fmadd_pd(qx, xx, q2);
    qx = _mm256_fmadd_pd(qx, xx, q3);
    __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
    e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));

    // 2^n via exponent-field arithmetic; |n| <= 1023 after the clamp.
    const __m256d magic = _mm256_set1_pd(6755399441055744.0);  // 1.5 * 2^52
    __m256i ni = _mm256_castpd_si256(_mm256_add_pd(n, magic));
    ni = _mm256_add_epi64(ni, _mm256_set1_epi64x(1023));
    ni = _mm256_slli_epi64(ni, 52);
    return _mm256_mul_pd(e, _mm256_castsi256_pd(ni));
}

// ---------------------------------------------------------------- tanh -----
// Cephes split: rational on |x| < 0.625, exp-based on [0.625, 19), sign(x)
// beyond. Avoids the 1 - 2/(e^{2x}+1) cancellation near zero.

inline __m256d tanh_pd(__m256d x) {
    const __m256d sign_mask = _mm256_set1_pd(-0.0);
    __m256d sign = _mm256_and_pd(x, sign_mask);
    __m256d a = _mm256_andnot_pd(sign_mask, x);

    // small branch
    __m256d z = _mm256_mul_pd(a, a);
    const __m256d tp0 = _mm256_set1_pd(-9.64399179425052238628e-1);
    const __m256d tp1 = _mm256_set1_pd(-9.92877231001918586564e1);
    const __m256d tp2 = _mm256_set1_pd(-1.61468768441708447952e3);
    const __m256d tq0 = _mm256_set1_pd(1.12811678491632931402e2);
    const __m256d tq1 = _mm256_set1_pd(2.23548839060100448583e3);
    const __m256d tq2 = _mm256_set1_pd(4.84406305325125486048e3);
    __m256d p = _mm256_fmadd_pd(tp0, z, tp1);
    p = _mm256_fmadd_pd(p, z, tp2);
    __m256d q = _mm256_add_pd(z, tq0);
    q = _mm256_fmadd_pd(q, z, tq1);
    q = _mm256_fmadd_pd(q, z, tq2);
    __m256d small = _mm256_fmadd_pd(_mm256_mul_pd(a, z), _mm256_div_pd(p, q), a);

    // large branch: 1 - 2/(e^{2a}+1)
    __m256d e = exp_pd(_mm256_add_pd(a, a));
    __m256d big = _mm256_sub_pd(
        _mm256_set1_pd(1.0),
        _mm256_div_pd(_mm256_set1_pd(2.0), _mm256_add_pd(e, _mm256_set1_pd(1.0))));

    __m256d use_small = _mm256_cmp_pd(a, _mm256_set1_pd(0.625), _CMP_LT_OQ);
    __m256d r = _mm256_blendv_pd(big, small, use_small);
    __m256d sat = _mm256_cmp_pd(a, _mm256_set1_pd(19.0), _CMP_GE_OQ);
    r = _mm256_blendv_pd(r, _mm256_set1_pd(1.0), sat);
    return _mm256_or_pd(r, sign);
}

// ---------------------------------------------------------------- mish -----
// mish(x) = x * tanh(softplus(x)) = x * (u^2 + 2u) / (u^2 + 2u + 2), u = e^x.
// The algebraic form needs one exp and no log.

inline void mish_parts(__m256d x, __m256d& g, __m256d& dg_num) {
    __m256d xc = _mm256_min_pd(x, _mm256_set1_pd(60.0));
    __m256d u = exp_pd(xc);
    __m256d u2_2u = _mm256_fmadd_pd(u, u, _mm256_add_pd(u, u));
    __m256d den = _mm256_add_pd(u2_2u, _mm256_set1_pd(2.0));
    g = _mm256_div_pd(u2_2u, den);
    // d/dx tanh(softplus(x)) = (4u^2 + 4u) / den^2
    __m256d num = _mm256_mul_pd(_mm256_set1_pd(4.0),
                                _mm256_fmadd_pd(u, u, u));
    dg_num = _mm256_div_pd(num, _mm256_mul_pd(den, den));
    // saturate for large x where u^2 dominates
    __m256d sat = _mm256_cmp_pd(x, _mm256_set1_pd(40.0), _CMP_GE_OQ);
    g = _mm256_blendv_pd(g, _mm256_set1_pd(1.0), sat);
    dg_num = _mm256_blendv_pd(dg_num, _mm256_setzero_pd(), sat);
}

void v_mish(const double* x, double* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xv = _mm256_loadu_pd(x + i);
        __m256d g, dgn;
        mish_parts(xv, g, dgn);
        _mm256_storeu_pd(y + i, _mm256_mul_pd(xv, g));
    }
    for (; i < n; ++i) {
        double sp = x[i] > 30.0 ? x[i] : std::log1p(std::exp(x[i]));
        y[i] = x[i] * std::tanh(sp);
    }
}

void v_mish_grad(const double* x, const double* dy, double* dx, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xv = _mm256_loadu_pd(x + i);
        __m256d g, dgn;
        mish_parts(xv, g, dgn);
        __m256d d = _mm256_fmadd_pd(xv, dgn, g);
        __m256d acc = _mm256_fmadd_pd(_mm256_loadu_pd(dy + i), d, _mm256_loadu_pd(dx + i));
        _mm256_storeu_pd(dx + i, acc);
    }
    for (; i < n; ++i) {
        double sp = x[i] > 30.0 ? x[i] : std::log1p(std::exp(x[i]));
        double t = std::tanh(sp);
        double sig = 1.0 / (1.0 + std::exp(-x[i]));
        dx[i] += dy[i] * (t + x[i] * (1.0 - t * t) * sig);
    }
}

void v_tanh(const double* x, double* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, tanh_pd(_mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = std::tanh(x[i]);
}

void v_tanh_grad(const double* y, const double* dy, double* dx, size_t n) {
    size_t i = 0;
    const __m256d one = _mm256_set1_pd(1.0);
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        __m256d d = _mm256_fnmadd_pd(yv, yv, one);
        __m256d acc = _mm256_fmadd_pd(_mm256_loadu_pd(dy + i), d, _mm256_loadu_pd(dx + i));
        _mm256_storeu_pd(dx + i, acc);
    }
    for (; i < n; ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
}

void v_relu(const double* x, double* y, size_t n) {
    size_t i = 0;
    const __m256d zero = _mm256_setzero_pd();
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_grad(const double* x, const double* dy, double* dx, size_t n) {
    size_t i = 0;
    const __m256d zero = _mm256_setzero_pd();
    for (; i + 4 <= n; i += 4) {
        __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        __m256d add = _mm256_and_pd(_mm256_loadu_pd(dy + i), mask);
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), add));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

void v_exp(const double* x, double* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, exp_pd(_mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = std::exp(x[i]);
}

// ---------------------------------------------------------------- gemm -----

// Column tail for one row: 4-wide vector FMA then scalar fma, in the same
// k order as the main tile so results do not depend on row partitioning.
inline void nn_row_tail(const double* a, const double* B, double* c, int K, int N,
                        bool acc, int n_from) {
    int n = n_from;
    for (; n + 4 <= N; n += 4) {
        __m256d accv = acc ? _mm256_loadu_pd(c + n) : _mm256_setzero_pd();
        const double* b = B + n;
        for (int k = 0; k < K; ++k, b += N)
            accv = _mm256_fmadd_pd(_mm256_set1_pd(a[k]), _mm256_loadu_pd(b), accv);
        _mm256_storeu_pd(c + n, accv);
    }
    for (; n < N; ++n) {
        double s = acc ? c[n] : 0.0;
        const double* b = B + n;
        for (int k = 0; k < K; ++k, b += N) s = std::fma(a[k], *b, s);
        c[n] = s;
    }
}

// 4x8 register tile, K innermost.
void v_gemm_nn(const double* A, const double* B, double* C, int M, int K, int N,
               bool acc, int m0, int m1) {
    (void)M;
    int m = m0;
    for (; m + 4 <= m1; m += 4) {
        const double* a0 = A + static_cast<size_t>(m) * K;
        const double* a1 = a0 + K;
        const double* a2 = a1 + K;
        const double* a3 = a2 + K;
        double* c0 = C + static_cast<size_t>(m) * N;
        double* c1 = c0 + N;
        double* c2 = c1 + N;
        double* c3 = c2 + N;
        int n = 0;
        for (; n + 8 <= N; n += 8) {
            __m256d acc00, acc01, acc10, acc11, acc20, acc21, acc30, acc31;
            if (acc) {
                acc00 = _mm256_loadu_pd(c0 + n); acc01 = _mm256_loadu_pd(c0 + n + 4);
                acc10 = _mm256_loadu_pd(c1 + n); acc11 = _mm256_loadu_pd(c1 + n + 4);
                acc20 = _mm256_loadu_pd(c2 + n); acc21 = _mm256_loadu_pd(c2 + n + 4);
                acc30 = _mm256_loadu_pd(c3 + n); acc31 = _mm256_loadu_pd(c3 + n + 4);
            } else {
                acc00 = acc01 = acc10 = acc11 = _mm256_setzero_pd();
                acc20 = acc21 = acc30 = acc31 = _mm256_setzero_pd();
            }
            const double* b = B + n;
            for (int k = 0; k < K; ++k, b += N) {
                __m256d b0 = _mm256_loadu_pd(b);
                __m256d b1 = _mm256_loadu_pd(b + 4);
                __m256d va = _mm256_set1_pd(a0[k]);
                acc00 = _mm256_fmadd_pd(va, b0, acc00);
                acc01 = _mm256_fmadd_pd(va, b1, acc01);
                va = _mm256_set1_pd(a1[k]);
                acc10 = _mm256_fmadd_pd(va, b0, acc10);
                acc11 = _mm256_fmadd_pd(va, b1, acc11);
                va = _mm256_set1_pd(a2[k]);
                acc20 = _mm256_fmadd_pd(va, b0, acc20);
                acc21 = _mm256_fmadd_pd(va, b1, acc21);
                va = _mm256_set1_pd(a3[k]);
                acc30 = _mm256_fmadd_pd(va, b0, acc30);
                acc31 = _mm256_fmadd_pd(va, b1, acc31);
            }
            _mm256_storeu_pd(c0 + n, acc00); _mm256_storeu_pd(c0 + n + 4, acc01);
            _mm256_storeu_pd(c1 + n, acc10); _mm256_storeu_pd(c1 + n + 4, acc11);
            _mm256_storeu_pd(c2 + n, acc20); _mm256_storeu_pd(c2 + n + 4, acc21);
            _mm256_storeu_pd(c3 + n, acc30); _mm256_storeu_pd(c3 + n + 4, acc31);
        }
        if (n < N) {
            nn_row_tail(a0, B, c0, K, N, acc, n);
            nn_row_tail(a1, B, c1, K, N, acc, n);
            nn_row_tail(a2, B, c2, K, N, acc, n);
            nn_row_tail(a3, B, c3, K, N, acc, n);
        }
    }
    for (; m < m1; ++m) {
        const double* a = A + static_cast<size_t>(m) * K;
        double* c = C + static_cast<size_t>(m) * N;
        int n = 0;
        for (; n + 8 <= N; n += 8) {
            __m256d v0 = acc ? _mm256_loadu_pd(c + n) : _mm256_setzero_pd();
            __m256d v1 = acc ? _mm256_loadu_pd(c + n + 4) : _mm256_setzero_pd();
            const double* b = B + n;
            for (int k = 0; k < K; ++k, b += N) {
                __m256d va = _mm256_set1_pd(a[k]);
                v0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b), v0);
                v1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + 4), v1);
            }
            _mm256_storeu_pd(c + n, v0);
            _mm256_storeu_pd(c + n + 4, v1);
        }
        nn_row_tail(a, B, c, K, N, acc, n);
    }
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

// Row-dot form: C[m][n] = A_m . B_n, 4 dots at a time.
void v_gemm_nt(const double* A, const double* B, double* C, int M, int K, int N,
               bool acc, int m0, int m1) {
    (void)M;
    for (int m = m0; m < m1; ++m) {
        const double* a = A + static_cast<size_t>(m) * K;
        double* c = C + static_cast<size_t>(m) * N;
        int n = 0;
        for (; n + 4 <= N; n += 4) {
            const double* b0 = B + static_cast<size_t>(n) * K;
            const double* b1 = b0 + K;
            const double* b2 = b1 + K;
            const double* b3 = b2 + K;
            __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
            __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
            int k = 0;
            for (; k + 4 <= K; k += 4) {
                __m256d va = _mm256_loadu_pd(a + k);
                s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + k), s0);
                s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + k), s1);
                s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + k), s2);
                s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + k), s3);
            }
            double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
            for (; k < K; ++k) {
                double av = a[k];
                r0 += av * b0[k];
                r1 += av * b1[k];
                r2 += av * b2[k];
                r3 += av * b3[k];
            }
            c[n] = acc ? c[n] + r0 : r0;
            c[n + 1] = acc ? c[n + 1] + r1 : r1;
            c[n + 2] = acc ? c[n + 2] + r2 : r2;
            c[n + 3] = acc ? c[n + 3] + r3 : r3;
        }
        for (; n < N; ++n) {
            const double* b = B + static_cast<size_t>(n) * K;
            __m256d s = _mm256_setzero_pd();
            int k = 0;
            for (; k + 4 <= K; k += 4)
                s = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), s);
            double r = hsum(s);
            for (; k < K; ++k) r += a[k] * b[k];
            c[n] = acc ? c[n] + r : r;
        }
    }
}

// Outer-product form over k; writes only rows [m0, m1) of C.
void v_gemm_tn(const double* A, const double* B, double* C, int M, int K, int N,
               bool acc, int m0, int m1) {
    if (!acc)
        for (int m = m0; m < m1; ++m)
            std::memset(C + static_cast<size_t>(m) * N, 0, sizeof(double) * N);
    for (int k = 0; k < K; ++k) {
        const double* arow = A + static_cast<size_t>(k) * M;
        const double* b = B + static_cast<size_t>(k) * N;
        for (int m = m0; m < m1; ++m) {
            __m256d va = _mm256_set1_pd(arow[m]);
            double* c = C + static_cast<size_t>(m) * N;
            int n = 0;
            for (; n + 8 <= N; n += 8) {
                _mm256_storeu_pd(c + n, _mm256_fmadd_pd(va, _mm256_loadu_pd(b + n),
                                                        _mm256_loadu_pd(c + n)));
                _mm256_storeu_pd(c + n + 4, _mm256_fmadd_pd(va, _mm256_loadu_pd(b + n + 4),
                                                            _mm256_loadu_pd(c + n + 4)));
            }
            for (; n + 4 <= N; n += 4)
                _mm256_storeu_pd(c + n, _mm256_fmadd_pd(va, _mm256_loadu_pd(b + n),
                                                        _mm256_loadu_pd(c + n)));
            for (; n < N; ++n) c[n] += arow[m] * b[n];
        }
    }
}

void v_adam(double* p, double* m, double* v, const double* g, size_t n, double lr,
            double beta1, double beta2, double eps, double bc1, double bc2) {
    const __m256d vb1 = _mm256_set1_pd(beta1), vb1c = _mm256_set1_pd(1.0 - beta1);
    const __m256d vb2 = _mm256_set1_pd(beta2), vb2c = _mm256_set1_pd(1.0 - beta2);
    const __m256d vlr = _mm256_set1_pd(lr), veps = _mm256_set1_pd(eps);
    const __m256d ibc1 = _mm256_set1_pd(1.0 / bc1), ibc2 = _mm256_set1_pd(1.0 / bc2);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d gv = _mm256_loadu_pd(g + i);
        __m256d mv = _mm256_fmadd_pd(vb1c, gv, _mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)));
        __m256d vv = _mm256_fmadd_pd(vb2c, _mm256_mul_pd(gv, gv),
                                     _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        __m256d den = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vv, ibc2)), veps);
        __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, _mm256_mul_pd(mv, ibc1)), den);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

double v_sumsq(const double* x, size_t n) {
    __m256d s = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xv = _mm256_loadu_pd(x + i);
        s = _mm256_fmadd_pd(xv, xv, s);
    }
    double r = hsum(s);
    for (; i < n; ++i) r += x[i] * x[i];
    return r;
}

double v_dot(const double* x, const double* y, size_t n) {
    __m256d s = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        s = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s);
    double r = hsum(s);
    for (; i < n; ++i) r += x[i] * y[i];
    return r;
}

void v_axpy(double a, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                                _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

const Backend* avx2_backend_impl() {
    static const Backend b = {
        "avx2",   v_gemm_nn, v_gemm_nt,   v_gemm_tn, v_mish, v_mish_grad,
        v_tanh,   v_tanh_grad, v_relu,    v_relu_grad, v_exp, v_adam,
        v_sumsq,  v_dot,     v_axpy,
    };
    return &b;
}

}  // namespace dtql::kernels

#else

namespace dtql::kernels {
struct Backend;
const Backend* avx2_backend_impl() { return nullptr; }
}  // namespace dtql::kernels

#endif  // DTQL_AVX2_BUILD
