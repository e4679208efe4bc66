#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "coco/kernels.hpp"
#include "coco/losses.hpp"
#include "coco/mlp.hpp"

namespace coco {

struct Dataset {
    DenseMatrix inputs;       // N x input_dim
    std::vector<int> labels;  // N, values in [0, num_classes)
    int num_classes = 0;
    DenseMatrix class_means;  // K x input_dim, generator ground truth (may be empty)

    std::size_t size() const { return inputs.rows(); }
    std::size_t dim() const { return inputs.cols(); }

    // Nonempty, finite, labels in range, every class represented.
    void validate() const;
};

// Gaussian blobs: class means drawn uniformly in [-1,1]^dim with pairwise
// distance >= 4 * spread (rejection sampling, at most 1e4 draws), samples
// N(mean, spread^2 I). Deterministic per seed.
Dataset make_blobs(int num_classes, int per_class, int input_dim, double spread,
                   std::uint64_t seed);

// CSV rows `label,x1,...,xd`, floats at 17 significant digits. '#' lines are
// metadata/comments; write_dataset_csv puts `# <metadata>` first when given.
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Dataset& data,
                       const std::string& metadata = "");

enum class Optimizer { SgdMomentum, Adam };

struct TrainConfig {
    double learning_rate = 0.005;
    double lr_decay_factor = 0.20;  // lr *= (1 - factor) ...
    int lr_decay_every = 10;        // ... every this many epochs, repeatedly
    double weight_decay = 0.005;    // L2 on weight matrices (not biases)
    double momentum = 0.9;          // also Adam's beta1
    Optimizer optimizer = Optimizer::Adam;
    int epochs = 30;
    int batch_size = 64;
    CentroidMode centroid_mode = CentroidMode::Parametric;
    double temperature = 1.0;
    double epsilon = 1e-8;  // batch-centroid denominator epsilon
    std::uint64_t seed = 0;

    // learning_rate >= 0 (zero permitted for no-op runs), decay factor in
    // [0, 1], batch_size >= 1, epochs >= 0.
    void validate() const;
};

struct EpochStats {
    double loss = 0.0;            // sample-weighted mean over the epoch
    double train_accuracy = 0.0;  // argmax_k z_ik == label fraction
};

// Trains model + centroids in place. Parametric mode: centroid rows take
// optimizer steps and are re-normalized to unit length after each one.
// BatchComputed mode: centroids are recomputed per batch from the batch's own
// embeddings, and batches are class-balanced (ceil(batch_size / K) samples
// per class, wrapping around) so no class average is ever empty. If
// cents.centroids is empty it is initialized from per-class averages of the
// initial embeddings over the whole dataset.
std::vector<EpochStats> train_coco(MlpModel& model, CentroidSet& cents,
                                   const Dataset& data, const TrainConfig& config);

// Cross-entropy baseline: a bias-free K x D linear classifier on the
// embedding. If head is empty it is initialized from the config seed. The
// trained head rows double as the checkpoint's centroid block.
std::vector<EpochStats> train_softmax_baseline(MlpModel& model, DenseMatrix& head,
                                               const Dataset& data,
                                               const TrainConfig& config);

// Per-class averages of the model's current embeddings over the whole
// dataset; rows are re-normalized to unit length in Parametric mode. This is
// also how train_coco seeds an empty centroid set.
CentroidSet initial_centroids(const MlpModel& model, const Dataset& data,
                              CentroidMode mode, double epsilon = 1e-8);

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string location;  // parameter with the worst error
    std::size_t param_count = 0;
    bool passed = false;
};

// Flat parameter vector: per layer weights then bias, then centroid rows when
// cents.mode is Parametric (BatchComputed centroids are not parameters).
std::vector<double> flatten_params(const MlpModel& model, const CentroidSet& cents);
void unflatten_params(const std::vector<double>& flat, MlpModel& model,
                      CentroidSet& cents);
std::string describe_param(const MlpModel& model, const CentroidSet& cents,
                           std::size_t flat_index);

// Gradient of the summed loss over the batch w.r.t. the flat parameter
// vector. BatchComputed centroids are evaluated once from the unperturbed
// model and then held fixed, matching the loss's own treatment of centroids
// as constants per step.
std::vector<double> analytic_param_grads(const MlpModel& model,
                                         const CentroidSet& cents,
                                         const Dataset& batch, double temperature);
std::vector<double> fd_param_grads(const MlpModel& model, const CentroidSet& cents,
                                   const Dataset& batch, double temperature,
                                   double step);

// Worst relative error |a - n| / max(|a|, |n|, 1e-4) between the two vectors,
// with the offending parameter named.
GradCheckReport compare_grads(const std::vector<double>& analytic,
                              const std::vector<double>& fd,
                              const MlpModel& model, const CentroidSet& cents,
                              double tol);

GradCheckReport grad_check(const MlpModel& model, const CentroidSet& cents,
                           const Dataset& batch, double step, double tol,
                           double temperature = 1.0);

struct SeparationStats {
    double mean_intra_cosine = 0.0;
    double mean_inter_cosine = 0.0;
    double margin = 0.0;  // mean_intra_cosine - mean_inter_cosine
    std::array<std::uint64_t, kernels::kHistogramBins> histogram_intra{};
    std::array<std::uint64_t, kernels::kHistogramBins> histogram_inter{};
    std::uint64_t intra_pairs = 0;
    std::uint64_t inter_pairs = 0;
};

// Cosine over all unordered sample pairs, split by label equality. Histograms
// use 64 equal bins over [-1, 1]. Throws NoPairsError if either split is
// empty.
SeparationStats separation_stats(const DenseMatrix& embeddings,
                                 const std::vector<int>& labels);

}  // namespace coco
