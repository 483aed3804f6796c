#include "pd/kernels.hpp"

#include <cmath>

namespace pd::kernels {
namespace {

double dot_f32(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

void matvec_f32(const float* w, const float* x, const float* bias, float* y,
                std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = w + r * cols;
        float acc = 0.0f;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] = bias ? acc + bias[r] : acc;
    }
}

void matvec_t_f32(const float* w, const float* dy, float* dx,
                  std::size_t rows, std::size_t cols) {
    for (std::size_t c = 0; c < cols; ++c) dx[c] = 0.0f;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = w + r * cols;
        const float d = dy[r];
        for (std::size_t c = 0; c < cols; ++c) dx[c] += row[c] * d;
    }
}

void ger_acc_f32(float* dw, const float* dy, const float* x,
                 std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        float* row = dw + r * cols;
        const float d = dy[r];
        for (std::size_t c = 0; c < cols; ++c) row[c] += d * x[c];
    }
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double sqdiff_sum_f32(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc;
}

void adam_update_f32(float* p, const float* g, float* m, float* v, std::size_t n,
                     float lr, float beta1, float beta2, float eps,
                     float inv_bc1, float inv_bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
        const float mhat = m[i] * inv_bc1;
        const float vhat = v[i] * inv_bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void lincomb_f64(double a, const double* x, double b, const double* y, double* out,
                 std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

} // namespace

const Ops& scalar_ops() {
    static const Ops ops = {
        "scalar",
        dot_f32,
        matvec_f32,
        matvec_t_f32,
        ger_acc_f32,
        axpy_f32,
        sqdiff_sum_f32,
        adam_update_f32,
        lincomb_f64,
    };
    return ops;
}

} // namespace pd::kernels
