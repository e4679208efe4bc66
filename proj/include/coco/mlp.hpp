#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coco/kernels.hpp"
#include "coco/losses.hpp"
#include "coco/matrix.hpp"

namespace coco {

using kernels::Activation;

struct MlpLayer {
    DenseMatrix weights;       // out x in
    std::vector<double> bias;  // out
};

// Feed-forward embedding network: affine layers with the configured
// activation after every layer except the last, which stays linear.
struct MlpModel {
    std::vector<std::size_t> layer_dims;  // input, hidden..., embedding dim D
    std::vector<MlpLayer> layers;         // layer_dims.size() - 1 entries
    Activation activation = Activation::Relu;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
    std::size_t num_params() const;

    // Layer shapes consistent with layer_dims; every parameter finite.
    void validate() const;
};

// Scaled-normal weight init (variance 2/fan_in for relu, 1/fan_in for tanh),
// zero biases. Deterministic per seed.
MlpModel make_mlp(const std::vector<std::size_t>& layer_dims,
                  Activation activation, std::uint64_t seed);

// Per-layer buffers captured during the forward pass for reuse in backward.
struct MlpCache {
    std::vector<DenseMatrix> pre;   // pre-activation u_l
    std::vector<DenseMatrix> post;  // layer output; back() is the embedding
};

DenseMatrix mlp_forward(const MlpModel& model, const DenseMatrix& inputs);

const DenseMatrix& mlp_forward_cached(const MlpModel& model,
                                      const DenseMatrix& inputs,
                                      MlpCache& cache);

struct MlpGrads {
    std::vector<DenseMatrix> weights;
    std::vector<std::vector<double>> bias;
};

// Backpropagates grad_output (N x D) through a cached forward pass.
MlpGrads mlp_backward(const MlpModel& model, const DenseMatrix& inputs,
                      const MlpCache& cache, const DenseMatrix& grad_output);

struct Checkpoint {
    MlpModel model;
    CentroidSet centroids;
};

// Binary format: magic "COCO1", u32 version, u32 dim count, u32 layer dims,
// u32 K, u8 centroid mode, u8 activation, then little-endian f64 blocks in
// declaration order (per layer weights then bias, finally K x D centroids).
void save_checkpoint(const std::string& path, const MlpModel& model,
                     const CentroidSet& centroids);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace coco
