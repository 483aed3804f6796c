#pragma once

#include "pd/schedule.hpp"
#include "pd/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pd {

/// Architecture of the prunable noise-prediction MLP: input (data dims plus
/// sinusoidal time embedding) -> hidden layers with SiLU -> affine output
/// back to data dims.
struct DenoiserSpec {
    int input_dim = 2;
    std::vector<int> hidden_widths;
    int time_embed_dim = 16;

    int hidden_count() const { return static_cast<int>(hidden_widths.size()); }
    int layer_count() const { return hidden_count() + 1; }
    int layer_in(int l) const {
        return l == 0 ? input_dim + time_embed_dim : hidden_widths[l - 1];
    }
    int layer_out(int l) const {
        return l == hidden_count() ? input_dim : hidden_widths[l];
    }
    void validate() const;

    bool operator==(const DenoiserSpec&) const = default;
};

/// Named weight tensors: weights[l] is (out_l x in_l), biases[l] is (out_l x 1).
struct Parameters {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    bool operator==(const Parameters&) const = default;
};

using Gradients = Parameters;

/// Spec plus matching parameters; the unit passed between pipeline stages.
struct Model {
    DenoiserSpec spec;
    Parameters params;
};

/// Per hidden layer, the sorted channel indices that survive pruning.
/// Every layer keeps at least one channel.
struct PruneMask {
    std::vector<std::vector<int>> kept;
};

/// Training batch. x0/eps live in float64 (schedule arithmetic); the model
/// consumes float32 casts.
struct Batch {
    int dim = 0;
    std::vector<double> x0;   // size() * dim
    std::vector<int> t;
    std::vector<double> eps;  // size() * dim

    int size() const { return static_cast<int>(t.size()); }
};

/// Fan-balanced uniform init: weights in +-sqrt(6/(in+out)), biases zero.
/// Bit-identical for equal (spec, seed).
Parameters init_params(const DenoiserSpec& spec, std::uint64_t seed);

/// Interleaved sinusoidal embedding: pairs (sin(t*w_j), cos(t*w_j)) with
/// w_j = 10000^(-2j/dim). dim must be even; t in [0, timestep_count).
std::vector<float> time_embedding(int t, int timestep_count, int dim);

/// Activations recorded by forward() for the backward pass.
struct ForwardTrace {
    std::vector<float> input;
    std::vector<std::vector<float>> pre;  // hidden pre-activations
    std::vector<std::vector<float>> act;  // hidden activations
};

/// Predict noise for one sample. timestep_count bounds the embedding grid.
std::vector<float> forward(const Model& m, std::span<const float> x_t, int t,
                           int timestep_count, ForwardTrace* trace = nullptr);

/// Mean over batch and dimensions of the squared eps-prediction error.
double loss(const Model& m, const Batch& batch, const NoiseSchedule& s);

struct LossAndGrad {
    double loss = 0.0;
    Gradients grads;
};

/// Exact reverse-mode gradient of loss() w.r.t. every parameter tensor.
LossAndGrad grad(const Model& m, const Batch& batch, const NoiseSchedule& s);

struct AdamParams {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    std::int64_t step = 0;
    Parameters m;
    Parameters v;

    static AdamState like(const Parameters& p);
};

/// One bias-corrected Adam update, in place.
void adam_step(Parameters& p, const Gradients& g, AdamState& state, const AdamParams& hp);

/// FLOPs of one forward evaluation: per layer 2*in*out (multiply-accumulate
/// counted as 2) + out for the bias add, + 4*out for SiLU on hidden layers.
/// A mask reduces hidden widths to the kept channel counts.
std::int64_t count_flops(const DenoiserSpec& spec, const PruneMask* mask = nullptr);

PruneMask full_mask(const DenoiserSpec& spec);
void validate_mask(const DenoiserSpec& spec, const PruneMask& mask);

/// Structurally remove pruned channels: dropped rows of weights[l] and
/// biases[l], plus the matching columns of weights[l+1]. Output-layer rows
/// are never pruned. Returns the smaller model with its reduced spec.
Model apply_mask(const Model& m, const PruneMask& mask);

/// Binary checkpoint: 8-byte magic, version, JSON manifest (spec + tensor
/// names/shapes/offsets), then little-endian float32 data. Round trip is
/// bitwise exact. Corrupt files raise Error naming the failing field.
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

} // namespace pd
