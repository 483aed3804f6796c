#include "pd/denoiser.hpp"

#include "pd/errors.hpp"
#include "pd/kernels.hpp"
#include "pd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pd {

namespace {

inline float silu(float x) {
    const float sig = 1.0f / (1.0f + std::exp(-x));
    return x * sig;
}

inline float silu_grad(float x) {
    const float sig = 1.0f / (1.0f + std::exp(-x));
    return sig * (1.0f + x * (1.0f - sig));
}

void check_batch(const Batch& batch) {
    if (batch.size() == 0) throw Error("empty batch");
    const auto n = static_cast<std::size_t>(batch.size()) * batch.dim;
    if (batch.x0.size() != n || batch.eps.size() != n) {
        throw Error("batch buffers inconsistent with size*dim");
    }
}

std::vector<float> model_input(const Model& m, std::span<const float> x_t, int t,
                               int timestep_count) {
    if (static_cast<int>(x_t.size()) != m.spec.input_dim) {
        throw Error("forward: expected " + std::to_string(m.spec.input_dim) +
                    " input dims, got " + std::to_string(x_t.size()));
    }
    std::vector<float> in(x_t.begin(), x_t.end());
    const auto emb = time_embedding(t, timestep_count, m.spec.time_embed_dim);
    in.insert(in.end(), emb.begin(), emb.end());
    return in;
}

} // namespace

void DenoiserSpec::validate() const {
    if (input_dim < 1) throw Error("denoiser input_dim must be positive");
    if (hidden_widths.empty()) throw Error("denoiser needs at least one hidden layer");
    for (int w : hidden_widths) {
        if (w < 1) throw Error("hidden widths must be positive");
    }
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
        throw Error("time_embed_dim must be even and >= 2");
    }
}

Parameters init_params(const DenoiserSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(derive_seed(seed, "init"));
    Parameters p;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const int out = spec.layer_out(l);
        const int in = spec.layer_in(l);
        Tensor w(out, in);
        const double bound = std::sqrt(6.0 / (in + out));
        for (auto& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(out, 1);
    }
    return p;
}

std::vector<float> time_embedding(int t, int timestep_count, int dim) {
    if (dim < 2 || dim % 2 != 0) throw Error("time embedding dim must be even and >= 2");
    if (t < 0 || t >= timestep_count) {
        throw Error("time embedding: timestep " + std::to_string(t) + " out of range");
    }
    std::vector<float> emb(dim);
    for (int j = 0; j < dim / 2; ++j) {
        const double omega = std::pow(10000.0, -2.0 * j / dim);
        emb[2 * j] = static_cast<float>(std::sin(t * omega));
        emb[2 * j + 1] = static_cast<float>(std::cos(t * omega));
    }
    return emb;
}

std::vector<float> forward(const Model& m, std::span<const float> x_t, int t,
                           int timestep_count, ForwardTrace* trace) {
    const auto& ops = kernels::active();
    const int hidden = m.spec.hidden_count();
    std::vector<float> cur = model_input(m, x_t, t, timestep_count);
    if (trace) {
        trace->input = cur;
        trace->pre.assign(hidden, {});
        trace->act.assign(hidden, {});
    }
    for (int l = 0; l < hidden; ++l) {
        const Tensor& w = m.params.weights[l];
        std::vector<float> pre(w.rows);
        ops.matvec_f32(w.data.data(), cur.data(), m.params.biases[l].data.data(), pre.data(),
                       w.rows, w.cols);
        std::vector<float> act(w.rows);
        for (int i = 0; i < w.rows; ++i) act[i] = silu(pre[i]);
        if (trace) {
            trace->pre[l] = std::move(pre);
            trace->act[l] = act;
        }
        cur = std::move(act);
    }
    const Tensor& w_out = m.params.weights[hidden];
    std::vector<float> out(w_out.rows);
    ops.matvec_f32(w_out.data.data(), cur.data(), m.params.biases[hidden].data.data(),
                   out.data(), w_out.rows, w_out.cols);
    return out;
}

double loss(const Model& m, const Batch& batch, const NoiseSchedule& s) {
    check_batch(batch);
    const auto& ops = kernels::active();
    const int dim = batch.dim;
    double total = 0.0;
    std::vector<float> x_t_f(dim), eps_f(dim);
    for (int i = 0; i < batch.size(); ++i) {
        const std::span<const double> x0(batch.x0.data() + static_cast<std::size_t>(i) * dim, dim);
        const std::span<const double> eps(batch.eps.data() + static_cast<std::size_t>(i) * dim, dim);
        const auto x_t = forward_diffuse(x0, batch.t[i], eps, s);
        for (int d = 0; d < dim; ++d) {
            x_t_f[d] = static_cast<float>(x_t[d]);
            eps_f[d] = static_cast<float>(eps[d]);
        }
        const auto eps_hat = forward(m, x_t_f, batch.t[i], s.timestep_count);
        total += ops.sqdiff_sum_f32(eps_hat.data(), eps_f.data(), dim);
    }
    return total / (static_cast<double>(batch.size()) * dim);
}

LossAndGrad grad(const Model& m, const Batch& batch, const NoiseSchedule& s) {
    check_batch(batch);
    const auto& ops = kernels::active();
    const int dim = batch.dim;
    const int hidden = m.spec.hidden_count();

    LossAndGrad out;
    for (const auto& w : m.params.weights) out.grads.weights.emplace_back(w.rows, w.cols);
    for (const auto& b : m.params.biases) out.grads.biases.emplace_back(b.rows, 1);

    const double scale = 1.0 / (static_cast<double>(batch.size()) * dim);
    std::vector<float> x_t_f(dim), eps_f(dim);
    ForwardTrace trace;
    for (int i = 0; i < batch.size(); ++i) {
        const std::span<const double> x0(batch.x0.data() + static_cast<std::size_t>(i) * dim, dim);
        const std::span<const double> eps(batch.eps.data() + static_cast<std::size_t>(i) * dim, dim);
        const auto x_t = forward_diffuse(x0, batch.t[i], eps, s);
        for (int d = 0; d < dim; ++d) {
            x_t_f[d] = static_cast<float>(x_t[d]);
            eps_f[d] = static_cast<float>(eps[d]);
        }
        const auto eps_hat = forward(m, x_t_f, batch.t[i], s.timestep_count, &trace);

        std::vector<float> delta(dim);
        for (int d = 0; d < dim; ++d) {
            const double diff = static_cast<double>(eps_hat[d]) - eps_f[d];
            out.loss += diff * diff;
            delta[d] = static_cast<float>(2.0 * scale * diff);
        }

        for (int l = hidden; l >= 0; --l) {
            const Tensor& w = m.params.weights[l];
            const float* below = l == 0 ? trace.input.data() : trace.act[l - 1].data();
            ops.ger_acc_f32(out.grads.weights[l].data.data(), delta.data(), below, w.rows, w.cols);
            ops.axpy_f32(1.0f, delta.data(), out.grads.biases[l].data.data(), w.rows);
            if (l == 0) break;
            std::vector<float> dact(w.cols);
            ops.matvec_t_f32(w.data.data(), delta.data(), dact.data(), w.rows, w.cols);
            const auto& pre = trace.pre[l - 1];
            delta.resize(w.cols);
            for (int c = 0; c < w.cols; ++c) delta[c] = dact[c] * silu_grad(pre[c]);
        }
    }
    out.loss *= scale;
    return out;
}

AdamState AdamState::like(const Parameters& p) {
    AdamState s;
    for (const auto& w : p.weights) s.m.weights.emplace_back(w.rows, w.cols);
    for (const auto& b : p.biases) s.m.biases.emplace_back(b.rows, 1);
    s.v = s.m;
    return s;
}

void adam_step(Parameters& p, const Gradients& g, AdamState& state, const AdamParams& hp) {
    if (p.weights.size() != g.weights.size() || p.biases.size() != g.biases.size()) {
        throw Error("adam_step: gradient layer count mismatch");
    }
    const auto& ops = kernels::active();
    state.step += 1;
    const float inv_bc1 = 1.0f / (1.0f - static_cast<float>(std::pow(hp.beta1, state.step)));
    const float inv_bc2 = 1.0f / (1.0f - static_cast<float>(std::pow(hp.beta2, state.step)));
    auto update = [&](Tensor& pt, const Tensor& gt, Tensor& mt, Tensor& vt) {
        if (!pt.same_shape(gt)) throw Error("adam_step: tensor shape mismatch");
        ops.adam_update_f32(pt.data.data(), gt.data.data(), mt.data.data(), vt.data.data(),
                            pt.size(), hp.lr, hp.beta1, hp.beta2, hp.eps, inv_bc1, inv_bc2);
    };
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        update(p.weights[l], g.weights[l], state.m.weights[l], state.v.weights[l]);
        update(p.biases[l], g.biases[l], state.m.biases[l], state.v.biases[l]);
    }
}

PruneMask full_mask(const DenoiserSpec& spec) {
    PruneMask mask;
    for (int w : spec.hidden_widths) {
        std::vector<int> kept(w);
        for (int i = 0; i < w; ++i) kept[i] = i;
        mask.kept.push_back(std::move(kept));
    }
    return mask;
}

void validate_mask(const DenoiserSpec& spec, const PruneMask& mask) {
    if (static_cast<int>(mask.kept.size()) != spec.hidden_count()) {
        throw Error("mask covers " + std::to_string(mask.kept.size()) + " layers, spec has " +
                    std::to_string(spec.hidden_count()));
    }
    for (int l = 0; l < spec.hidden_count(); ++l) {
        const auto& kept = mask.kept[l];
        if (kept.empty()) {
            throw Error("mask empties hidden layer " + std::to_string(l));
        }
        int prev = -1;
        for (int idx : kept) {
            if (idx <= prev) throw Error("mask for layer " + std::to_string(l) +
                                         " is not sorted/unique");
            if (idx < 0 || idx >= spec.hidden_widths[l]) {
                throw Error("mask index " + std::to_string(idx) + " out of range for layer " +
                            std::to_string(l));
            }
            prev = idx;
        }
    }
}

std::int64_t count_flops(const DenoiserSpec& spec, const PruneMask* mask) {
    spec.validate();
    if (mask) validate_mask(spec, *mask);
    const int hidden = spec.hidden_count();
    auto width = [&](int l) {
        return mask ? static_cast<int>(mask->kept[l].size()) : spec.hidden_widths[l];
    };
    std::int64_t total = 0;
    for (int l = 0; l <= hidden; ++l) {
        const std::int64_t in = l == 0 ? spec.input_dim + spec.time_embed_dim : width(l - 1);
        const std::int64_t out = l == hidden ? spec.input_dim : width(l);
        total += 2 * in * out + out;          // matmul + bias
        if (l < hidden) total += 4 * out;     // SiLU
    }
    return total;
}

Model apply_mask(const Model& m, const PruneMask& mask) {
    validate_mask(m.spec, mask);
    const int hidden = m.spec.hidden_count();

    Model out;
    out.spec = m.spec;
    for (int l = 0; l < hidden; ++l) {
        out.spec.hidden_widths[l] = static_cast<int>(mask.kept[l].size());
    }
    for (int l = 0; l <= hidden; ++l) {
        const Tensor& w = m.params.weights[l];
        const Tensor& b = m.params.biases[l];
        const std::vector<int>* rows_kept = l < hidden ? &mask.kept[l] : nullptr;
        const std::vector<int>* cols_kept = l > 0 ? &mask.kept[l - 1] : nullptr;
        const int n_rows = rows_kept ? static_cast<int>(rows_kept->size()) : w.rows;
        const int n_cols = cols_kept ? static_cast<int>(cols_kept->size()) : w.cols;
        Tensor nw(n_rows, n_cols);
        Tensor nb(n_rows, 1);
        for (int r = 0; r < n_rows; ++r) {
            const int src_r = rows_kept ? (*rows_kept)[r] : r;
            for (int c = 0; c < n_cols; ++c) {
                const int src_c = cols_kept ? (*cols_kept)[c] : c;
                nw.at(r, c) = w.at(src_r, src_c);
            }
            nb.data[r] = b.data[src_r];
        }
        out.params.weights.push_back(std::move(nw));
        out.params.biases.push_back(std::move(nb));
    }
    return out;
}

} // namespace pd
