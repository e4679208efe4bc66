#pragma once

#include <span>
#include <vector>

#include "coco/matrix.hpp"
#include "coco/numerics.hpp"

namespace coco {

// A mini-batch of M feature vectors of dim D with class labels in [0, K).
struct EmbeddingBatch {
    DenseMatrix features;     // M x D
    std::vector<int> labels;  // M
    int num_classes = 0;      // K

    std::size_t size() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }

    // Enforces M >= 1, D >= 1, K >= 2, labels in range.
    void validate() const;
};

enum class CentroidMode { BatchComputed, Parametric };

// K class centroid rows of dim D. In Parametric mode rows are learnable
// weights kept unit-norm; in BatchComputed mode rows are per-batch averages.
struct CentroidSet {
    DenseMatrix centroids;  // K x D
    CentroidMode mode = CentroidMode::Parametric;

    std::size_t num_classes() const { return centroids.rows(); }
    std::size_t dim() const { return centroids.cols(); }
};

struct LossResult {
    double loss = 0.0;
    DenseMatrix logits;          // M x K
    DenseMatrix probs;           // M x K
    DenseMatrix grad_features;   // M x D (backward only)
    DenseMatrix grad_centroids;  // K x D (backward only)
};

// (f . g) / (||f|| ||g||), clamped to [-1, 1] to absorb rounding.
double cosine_similarity(std::span<const double> f, std::span<const double> g,
                         double eps = kNormEpsilon);

// Per-class feature averages: row k = sum_{l_i = k} f_i / (count_k + epsilon).
// Classes absent from the batch come out exactly zero.
CentroidSet batch_centroids(const EmbeddingBatch& batch, double epsilon = 1e-8);

// Literal pairwise loss over ordered pairs i != j:
//   sum  [l_i == l_j] C(f_i, f_j) / ((1 - [l_i == l_j]) C(f_i, f_j) + epsilon)
// Same-class pairs contribute C/epsilon, cross-class pairs 0. Kept only as a
// reference; the centroid-based loss below replaces it.
double naive_pairwise_loss(const EmbeddingBatch& batch, double epsilon);

// Per-sample output with the own-class term excluded from the denominator:
//   exp C(f_i, c_{l_i}) / sum_{k != l_i} exp C(f_i, c_k).
// Unbounded above; diagnostic only, training uses the softmax form.
std::vector<double> coco_output_exclusive(const EmbeddingBatch& batch,
                                          const CentroidSet& cents);

// Softmax form: z_ik = temperature * chat_k . fhat_i over internally
// normalized features and centroids, probs = row softmax, loss =
// -sum_i log p_{i,l_i} (divided by M when mean_reduction).
LossResult coco_forward(const EmbeddingBatch& batch, const CentroidSet& cents,
                        double temperature = 1.0, bool mean_reduction = false);

// Forward plus analytic gradients w.r.t. raw features and raw centroid rows.
// Each side treats the other as constant; the normalization Jacobian projects
// out the radial component, so grad_features[i] . f_i == 0.
LossResult coco_backward(const EmbeddingBatch& batch, const CentroidSet& cents,
                         double temperature = 1.0, bool mean_reduction = false);

struct SoftmaxCeResult {
    double loss = 0.0;
    DenseMatrix probs;        // M x K
    DenseMatrix grad_logits;  // M x K, (p - t) / M
};

// Plain mean-reduced cross-entropy over unnormalized logits.
SoftmaxCeResult softmax_ce_baseline(const DenseMatrix& logits,
                                    const std::vector<int>& labels);

}  // namespace coco
