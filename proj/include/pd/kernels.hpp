#pragma once

#include <cstddef>
#include <string>

namespace pd::kernels {

/// The data-parallel inner loops of training and sampling. One scalar
/// reference implementation plus SIMD variants (AVX2 on x86-64, NEON on
/// aarch64) selected once at startup. Matrices are row-major.
///
/// dot/sqdiff reductions accumulate in float64 in every variant; matvec
/// accumulates in float32. SIMD variants use fused multiply-add and lane
/// reordering, so cross-variant equality is to tolerance, not bitwise.
/// Within one variant all kernels are deterministic.
struct Ops {
    const char* name;

    /// sum_i a[i]*b[i]
    double (*dot_f32)(const float* a, const float* b, std::size_t n);

    /// y = W x + bias; W is rows x cols, bias may be null.
    void (*matvec_f32)(const float* w, const float* x, const float* bias, float* y,
                       std::size_t rows, std::size_t cols);

    /// dx = W^T dy; W is rows x cols, dy has rows entries, dx has cols.
    void (*matvec_t_f32)(const float* w, const float* dy, float* dx,
                         std::size_t rows, std::size_t cols);

    /// dW += dy x^T (rank-1 accumulate), dW is rows x cols.
    void (*ger_acc_f32)(float* dw, const float* dy, const float* x,
                        std::size_t rows, std::size_t cols);

    /// y += a * x
    void (*axpy_f32)(float a, const float* x, float* y, std::size_t n);

    /// sum_i (a[i]-b[i])^2, accumulated in float64.
    double (*sqdiff_sum_f32)(const float* a, const float* b, std::size_t n);

    /// In-place Adam update over n coordinates. inv_bc1 = 1/(1-beta1^t),
    /// inv_bc2 = 1/(1-beta2^t) precomputed by the caller.
    void (*adam_update_f32)(float* p, const float* g, float* m, float* v, std::size_t n,
                            float lr, float beta1, float beta2, float eps,
                            float inv_bc1, float inv_bc2);

    /// out = a*x + b*y in float64 (diffusion/sampler mixing).
    void (*lincomb_f64)(double a, const double* x, double b, const double* y, double* out,
                        std::size_t n);
};

/// Scalar reference kernels, always available.
const Ops& scalar_ops();

/// Best SIMD variant this CPU supports, or nullptr.
const Ops* simd_ops();

/// Active table: SIMD when available unless PD_KERNELS=scalar is set
/// (PD_KERNELS=avx2/neon/scalar forces a variant; unknown values error).
const Ops& active();

/// Name of the active variant ("scalar", "avx2", "neon").
std::string active_name();

} // namespace pd::kernels
