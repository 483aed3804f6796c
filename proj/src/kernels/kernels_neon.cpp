// NEON variants for aarch64, mirroring the AVX2 set.
#if defined(__aarch64__)

#include "pd/kernels.hpp"

#include <arm_neon.h>
#include <cmath>

namespace pd::kernels {
namespace {

double dot_f32(const float* a, const float* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t av = vld1q_f32(a + i);
        const float32x4_t bv = vld1q_f32(b + i);
        acc0 = vfmaq_f64(acc0, vcvt_f64_f32(vget_low_f32(av)), vcvt_f64_f32(vget_low_f32(bv)));
        acc1 = vfmaq_f64(acc1, vcvt_f64_f32(vget_high_f32(av)), vcvt_f64_f32(vget_high_f32(bv)));
    }
    double acc = vaddvq_f64(acc0) + vaddvq_f64(acc1);
    for (; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

void matvec_f32(const float* w, const float* x, const float* bias, float* y,
                std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = w + r * cols;
        float32x4_t acc = vdupq_n_f32(0.0f);
        std::size_t c = 0;
        for (; c + 4 <= cols; c += 4) {
            acc = vfmaq_f32(acc, vld1q_f32(row + c), vld1q_f32(x + c));
        }
        float sum = vaddvq_f32(acc);
        for (; c < cols; ++c) sum += row[c] * x[c];
        y[r] = bias ? sum + bias[r] : sum;
    }
}

void matvec_t_f32(const float* w, const float* dy, float* dx,
                  std::size_t rows, std::size_t cols) {
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
        float32x4_t acc = vdupq_n_f32(0.0f);
        for (std::size_t r = 0; r < rows; ++r) {
            acc = vfmaq_n_f32(acc, vld1q_f32(w + r * cols + c), dy[r]);
        }
        vst1q_f32(dx + c, acc);
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
        const float d = dy[r];
        std::size_t c = 0;
        for (; c + 4 <= cols; c += 4) {
            vst1q_f32(row + c, vfmaq_n_f32(vld1q_f32(row + c), vld1q_f32(x + c), d));
        }
        for (; c < cols; ++c) row[c] += d * x[c];
    }
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        vst1q_f32(y + i, vfmaq_n_f32(vld1q_f32(y + i), vld1q_f32(x + i), a));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double sqdiff_sum_f32(const float* a, const float* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t av = vld1q_f32(a + i);
        const float32x4_t bv = vld1q_f32(b + i);
        const float64x2_t dlo = vsubq_f64(vcvt_f64_f32(vget_low_f32(av)),
                                          vcvt_f64_f32(vget_low_f32(bv)));
        const float64x2_t dhi = vsubq_f64(vcvt_f64_f32(vget_high_f32(av)),
                                          vcvt_f64_f32(vget_high_f32(bv)));
        acc0 = vfmaq_f64(acc0, dlo, dlo);
        acc1 = vfmaq_f64(acc1, dhi, dhi);
    }
    double acc = vaddvq_f64(acc0) + vaddvq_f64(acc1);
    for (; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc;
}

void adam_update_f32(float* p, const float* g, float* m, float* v, std::size_t n,
                     float lr, float beta1, float beta2, float eps,
                     float inv_bc1, float inv_bc2) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t gv = vld1q_f32(g + i);
        float32x4_t mv = vfmaq_n_f32(vmulq_n_f32(gv, 1.0f - beta1), vld1q_f32(m + i), beta1);
        float32x4_t vv = vfmaq_n_f32(vmulq_n_f32(vmulq_f32(gv, gv), 1.0f - beta2),
                                     vld1q_f32(v + i), beta2);
        vst1q_f32(m + i, mv);
        vst1q_f32(v + i, vv);
        const float32x4_t mhat = vmulq_n_f32(mv, inv_bc1);
        const float32x4_t vhat = vmulq_n_f32(vv, inv_bc2);
        const float32x4_t denom = vaddq_f32(vsqrtq_f32(vhat), vdupq_n_f32(eps));
        const float32x4_t step = vdivq_f32(vmulq_n_f32(mhat, lr), denom);
        vst1q_f32(p + i, vsubq_f32(vld1q_f32(p + i), step));
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
    const float64x2_t av = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t r = vfmaq_f64(vmulq_n_f64(vld1q_f64(y + i), b),
                                        av, vld1q_f64(x + i));
        vst1q_f64(out + i, r);
    }
    for (; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

} // namespace

const Ops* neon_ops() {
    static const Ops ops = {
        "neon",
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

#endif // aarch64
