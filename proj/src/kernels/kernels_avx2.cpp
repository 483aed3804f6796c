// AVX2+FMA variants. Compiled with -mavx2 -mfma in its own TU; only reached
// when runtime dispatch confirms CPU support.
#if defined(__x86_64__) || defined(_M_X64)

#include "pd/kernels.hpp"

#include <cmath>
#include <immintrin.h>

namespace pd::kernels {
namespace {

inline double hsum_pd(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

inline float hsum_ps(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

double dot_f32(const float* a, const float* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 av = _mm256_loadu_ps(a + i);
        const __m256 bv = _mm256_loadu_ps(b + i);
        const __m256d alo = _mm256_cvtps_pd(_mm256_castps256_ps128(av));
        const __m256d ahi = _mm256_cvtps_pd(_mm256_extractf128_ps(av, 1));
        const __m256d blo = _mm256_cvtps_pd(_mm256_castps256_ps128(bv));
        const __m256d bhi = _mm256_cvtps_pd(_mm256_extractf128_ps(bv, 1));
        acc0 = _mm256_fmadd_pd(alo, blo, acc0);
        acc1 = _mm256_fmadd_pd(ahi, bhi, acc1);
    }
    double acc = hsum_pd(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

void matvec_f32(const float* w, const float* x, const float* bias, float* y,
                std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = w + r * cols;
        __m256 acc = _mm256_setzero_ps();
        std::size_t c = 0;
        for (; c + 8 <= cols; c += 8) {
            acc = _mm256_fmadd_ps(_mm256_loadu_ps(row + c), _mm256_loadu_ps(x + c), acc);
        }
        float sum = hsum_ps(acc);
        for (; c < cols; ++c) sum += row[c] * x[c];
        y[r] = bias ? sum + bias[r] : sum;
    }
}

void matvec_t_f32(const float* w, const float* dy, float* dx,
                  std::size_t rows, std::size_t cols) {
    std::size_t c = 0;
    for (; c + 8 <= cols; c += 8) {
        __m256 acc = _mm256_setzero_ps();
        for (std::size_t r = 0; r < rows; ++r) {
            acc = _mm256_fmadd_ps(_mm256_loadu_ps(w + r * cols + c),
                                  _mm256_set1_ps(dy[r]), acc);
        }
        _mm256_storeu_ps(dx + c, acc);
    }
    for (; c < cols; ++c) {
        float acc = 0.0f;
        for (std::size_t r = 0; r < rows; ++r) acc += w[r * cols + c] * dy[r];
        dx[c] = acc;
    }
}

void ger_acc_f32(float* dw, const float* dy, const float* x,
                 std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        float* row = dw + r * cols;
        const __m256 d = _mm256_set1_ps(dy[r]);
        std::size_t c = 0;
        for (; c + 8 <= cols; c += 8) {
            const __m256 acc = _mm256_fmadd_ps(d, _mm256_loadu_ps(x + c),
                                               _mm256_loadu_ps(row + c));
            _mm256_storeu_ps(row + c, acc);
        }
        for (; c < cols; ++c) row[c] += dy[r] * x[c];
    }
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
    const __m256 av = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i),
                                                _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double sqdiff_sum_f32(const float* a, const float* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 av = _mm256_loadu_ps(a + i);
        const __m256 bv = _mm256_loadu_ps(b + i);
        const __m256d dlo = _mm256_sub_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(av)),
                                          _mm256_cvtps_pd(_mm256_castps256_ps128(bv)));
        const __m256d dhi = _mm256_sub_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(av, 1)),
                                          _mm256_cvtps_pd(_mm256_extractf128_ps(bv, 1)));
        acc0 = _mm256_fmadd_pd(dlo, dlo, acc0);
        acc1 = _mm256_fmadd_pd(dhi, dhi, acc1);
    }
    double acc = hsum_pd(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc;
}

void adam_update_f32(float* p, const float* g, float* m, float* v, std::size_t n,
                     float lr, float beta1, float beta2, float eps,
                     float inv_bc1, float inv_bc2) {
    const __m256 b1 = _mm256_set1_ps(beta1);
    const __m256 b2 = _mm256_set1_ps(beta2);
    const __m256 ob1 = _mm256_set1_ps(1.0f - beta1);
    const __m256 ob2 = _mm256_set1_ps(1.0f - beta2);
    const __m256 lrv = _mm256_set1_ps(lr);
    const __m256 epsv = _mm256_set1_ps(eps);
    const __m256 ibc1 = _mm256_set1_ps(inv_bc1);
    const __m256 ibc2 = _mm256_set1_ps(inv_bc2);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gv = _mm256_loadu_ps(g + i);
        __m256 mv = _mm256_fmadd_ps(b1, _mm256_loadu_ps(m + i), _mm256_mul_ps(ob1, gv));
        __m256 vv = _mm256_fmadd_ps(b2, _mm256_loadu_ps(v + i),
                                    _mm256_mul_ps(ob2, _mm256_mul_ps(gv, gv)));
        _mm256_storeu_ps(m + i, mv);
        _mm256_storeu_ps(v + i, vv);
        const __m256 mhat = _mm256_mul_ps(mv, ibc1);
        const __m256 vhat = _mm256_mul_ps(vv, ibc2);
        const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), epsv);
        const __m256 step = _mm256_div_ps(_mm256_mul_ps(lrv, mhat), denom);
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), step));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
        const float mhat = m[i] * inv_bc1;
        const float vhat = v[i] * inv_bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void lincomb_f64(double a, const double* x, double b, const double* y, double* out,
                 std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    const __m256d bv = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d r = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i),
                                          _mm256_mul_pd(bv, _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(out + i, r);
    }
    for (; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

} // namespace

const Ops* avx2_ops() {
    static const Ops ops = {
        "avx2",
        dot_f32,
        matvec_f32,
        matvec_t_f32,
        ger_acc_f32,
        axpy_f32,
        sqdiff_sum_f32,
        adam_update_f32,
        lincomb_f64,
    };
    return &ops;
}

} // namespace pd::kernels

#endif // x86-64
