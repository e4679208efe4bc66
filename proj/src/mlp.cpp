#include "coco/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "coco/errors.hpp"

namespace coco {

namespace {

constexpr char kMagic[5] = {'C', 'O', 'C', 'O', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxDim = 1u << 20;  // allocation sanity bound

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IoError("truncated checkpoint: " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& in, const std::string& path) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw IoError("truncated checkpoint: " + path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

}  // namespace

std::size_t MlpModel::num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

void MlpModel::validate() const {
    if (layer_dims.size() < 2) throw DimMismatchError("model needs input and output dims");
    if (layers.size() != layer_dims.size() - 1)
        throw DimMismatchError("layer count does not match layer_dims");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layer_dims[l] == 0 || layer_dims[l + 1] == 0)
            throw DimMismatchError("zero layer dim");
        if (layers[l].weights.rows() != layer_dims[l + 1] ||
            layers[l].weights.cols() != layer_dims[l] ||
            layers[l].bias.size() != layer_dims[l + 1])
            throw DimMismatchError("layer " + std::to_string(l) + " shape mismatch");
        if (!layers[l].weights.all_finite())
            throw DimMismatchError("layer " + std::to_string(l) + " has non-finite weights");
        for (double b : layers[l].bias) {
            if (!std::isfinite(b))
                throw DimMismatchError("layer " + std::to_string(l) + " has non-finite bias");
        }
    }
}

MlpModel make_mlp(const std::vector<std::size_t>& layer_dims,
                  Activation activation, std::uint64_t seed) {
    if (layer_dims.size() < 2) throw DimMismatchError("model needs input and output dims");
    MlpModel m;
    m.layer_dims = layer_dims;
    m.activation = activation;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const std::size_t in = layer_dims[l], out = layer_dims[l + 1];
        if (in == 0 || out == 0) throw DimMismatchError("zero layer dim");
        const double gain = activation == Activation::Relu ? 2.0 : 1.0;
        std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(in)));
        MlpLayer layer;
        layer.weights = DenseMatrix(out, in);
        for (std::size_t i = 0; i < layer.weights.size(); ++i)
            layer.weights.data()[i] = dist(rng);
        layer.bias.assign(out, 0.0);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

const DenseMatrix& mlp_forward_cached(const MlpModel& model,
                                      const DenseMatrix& inputs,
                                      MlpCache& cache) {
    model.validate();
    if (inputs.cols() != model.input_dim())
        throw DimMismatchError("input dim " + std::to_string(inputs.cols()) +
                               " does not match model input dim " +
                               std::to_string(model.input_dim()));
    const std::size_t n = inputs.rows();
    const std::size_t num_layers = model.layers.size();
    cache.pre.assign(num_layers, DenseMatrix());
    cache.post.assign(num_layers, DenseMatrix());
    const DenseMatrix* x = &inputs;
    for (std::size_t l = 0; l < num_layers; ++l) {
        const MlpLayer& layer = model.layers[l];
        const std::size_t in = layer.weights.cols(), out = layer.weights.rows();
        cache.pre[l] = DenseMatrix(n, out);
        kernels::affine_forward(x->data(), layer.weights.data(), layer.bias.data(),
                                cache.pre[l].data(), n, in, out);
        if (l + 1 < num_layers) {
            cache.post[l] = DenseMatrix(n, out);
            kernels::apply_activation(cache.pre[l].data(), cache.post[l].data(),
                                      n * out, model.activation);
        } else {
            cache.post[l] = cache.pre[l];  // linear output layer
        }
        x = &cache.post[l];
    }
    return cache.post.back();
}

DenseMatrix mlp_forward(const MlpModel& model, const DenseMatrix& inputs) {
    MlpCache cache;
    mlp_forward_cached(model, inputs, cache);
    return std::move(cache.post.back());
}

MlpGrads mlp_backward(const MlpModel& model, const DenseMatrix& inputs,
                      const MlpCache& cache, const DenseMatrix& grad_output) {
    const std::size_t n = inputs.rows();
    const std::size_t num_layers = model.layers.size();
    if (grad_output.rows() != n || grad_output.cols() != model.output_dim())
        throw DimMismatchError("grad_output shape mismatch");

    MlpGrads g;
    g.weights.assign(num_layers, DenseMatrix());
    g.bias.assign(num_layers, {});

    DenseMatrix delta = grad_output;  // grad w.r.t. pre-activation of layer l
    for (std::size_t l = num_layers; l-- > 0;) {
        const MlpLayer& layer = model.layers[l];
        const std::size_t in = layer.weights.cols(), out = layer.weights.rows();
        const DenseMatrix& x = l == 0 ? inputs : cache.post[l - 1];

        g.weights[l] = DenseMatrix(out, in);
        kernels::grad_weights(delta.data(), x.data(), g.weights[l].data(), n, in, out);
        g.bias[l].assign(out, 0.0);
        kernels::grad_bias(delta.data(), g.bias[l].data(), n, out);

        if (l > 0) {
            DenseMatrix dx(n, in);
            kernels::matmul_nn(delta.data(), layer.weights.data(), dx.data(), n, out, in);
            delta = DenseMatrix(n, in);
            kernels::activation_backward(cache.pre[l - 1].data(), dx.data(),
                                         delta.data(), n * in, model.activation);
        }
    }
    return g;
}

void save_checkpoint(const std::string& path, const MlpModel& model,
                     const CentroidSet& centroids) {
    model.validate();
    if (centroids.dim() != model.output_dim())
        throw DimMismatchError("centroid dim does not match model output dim");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(model.layer_dims.size()));
    for (std::size_t d : model.layer_dims) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, static_cast<std::uint32_t>(centroids.num_classes()));
    out.put(centroids.mode == CentroidMode::Parametric ? 1 : 0);
    out.put(model.activation == Activation::Tanh ? 1 : 0);
    for (const auto& layer : model.layers) {
        for (std::size_t i = 0; i < layer.weights.size(); ++i)
            put_f64(out, layer.weights.data()[i]);
        for (double b : layer.bias) put_f64(out, b);
    }
    for (std::size_t i = 0; i < centroids.centroids.size(); ++i)
        put_f64(out, centroids.centroids.data()[i]);
    if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0)
        throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = get_u32(in, path);
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t num_dims = get_u32(in, path);
    if (num_dims < 2 || num_dims > 64)
        throw IoError("corrupt checkpoint (layer count): " + path);

    Checkpoint ck;
    ck.model.layer_dims.resize(num_dims);
    for (auto& d : ck.model.layer_dims) {
        const std::uint32_t v = get_u32(in, path);
        if (v == 0 || v > kMaxDim) throw IoError("corrupt checkpoint (layer dim): " + path);
        d = v;
    }
    const std::uint32_t k = get_u32(in, path);
    if (k > kMaxDim) throw IoError("corrupt checkpoint (class count): " + path);
    int mode_byte = in.get();
    int act_byte = in.get();
    if (mode_byte == EOF || act_byte == EOF) throw IoError("truncated checkpoint: " + path);
    ck.centroids.mode = mode_byte ? CentroidMode::Parametric : CentroidMode::BatchComputed;
    ck.model.activation = act_byte ? Activation::Tanh : Activation::Relu;

    for (std::size_t l = 0; l + 1 < ck.model.layer_dims.size(); ++l) {
        const std::size_t in_dim = ck.model.layer_dims[l];
        const std::size_t out_dim = ck.model.layer_dims[l + 1];
        MlpLayer layer;
        layer.weights = DenseMatrix(out_dim, in_dim);
        for (std::size_t i = 0; i < layer.weights.size(); ++i)
            layer.weights.data()[i] = get_f64(in, path);
        layer.bias.resize(out_dim);
        for (auto& b : layer.bias) b = get_f64(in, path);
        ck.model.layers.push_back(std::move(layer));
    }
    ck.centroids.centroids = DenseMatrix(k, ck.model.output_dim());
    for (std::size_t i = 0; i < ck.centroids.centroids.size(); ++i)
        ck.centroids.centroids.data()[i] = get_f64(in, path);
    ck.model.validate();
    return ck;
}

}  // namespace coco
