#include "coco/losses.hpp"

#include <cmath>
#include <string>

#include "coco/errors.hpp"
#include "coco/kernels.hpp"

namespace coco {

void EmbeddingBatch::validate() const {
    if (features.rows() < 1 || features.cols() < 1)
        throw DimMismatchError("batch: need M >= 1 and D >= 1");
    if (labels.size() != features.rows())
        throw DimMismatchError("batch: label count != feature rows");
    if (num_classes < 2) throw DimMismatchError("batch: need K >= 2");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw DimMismatchError("batch: label out of range at row " +
                                   std::to_string(i));
    }
}

double cosine_similarity(std::span<const double> f, std::span<const double> g,
                         double eps) {
    if (f.size() != g.size())
        throw DimMismatchError("cosine_similarity: dim mismatch");
    const double nf = norm(f);
    const double ng = norm(g);
    if (!(nf > eps) || !(ng > eps))
        throw ZeroNormError("cosine_similarity: degenerate input");
    double c = dot(f, g) / (nf * ng);
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

CentroidSet batch_centroids(const EmbeddingBatch& batch, double epsilon) {
    batch.validate();
    if (!(epsilon > 0.0)) throw Error("batch_centroids: epsilon must be positive");
    const std::size_t m = batch.size(), d = batch.dim();
    const std::size_t k = static_cast<std::size_t>(batch.num_classes);
    CentroidSet out;
    out.mode = CentroidMode::BatchComputed;
    out.centroids = DenseMatrix(k, d, 0.0);
    std::vector<double> counts(k, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t c = static_cast<std::size_t>(batch.labels[i]);
        counts[c] += 1.0;
        const double* fi = batch.features.row(i);
        double* row = out.centroids.row(c);
        for (std::size_t j = 0; j < d; ++j) row[j] += fi[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
        const double inv = 1.0 / (counts[c] + epsilon);
        double* row = out.centroids.row(c);
        for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
    }
    return out;
}

double naive_pairwise_loss(const EmbeddingBatch& batch, double epsilon) {
    batch.validate();
    if (batch.size() < 2) throw DimMismatchError("naive_pairwise_loss: need M >= 2");
    if (!(epsilon > 0.0)) throw Error("naive_pairwise_loss: epsilon must be positive");
    const std::size_t m = batch.size(), d = batch.dim();
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            const double c = cosine_similarity(
                std::span<const double>(batch.features.row(i), d),
                std::span<const double>(batch.features.row(j), d));
            const double same = batch.labels[i] == batch.labels[j] ? 1.0 : 0.0;
            const double num = same * c;
            // num == 0 pairs contribute nothing; skipping them avoids 0/0
            // when a cross-class cosine lands exactly at -epsilon.
            if (num != 0.0) loss += num / ((1.0 - same) * c + epsilon);
        }
    }
    return loss;
}

namespace {

struct NormalizedPair {
    DenseMatrix fhat, chat;
    std::vector<double> fnorms, cnorms;
};

NormalizedPair normalize_inputs(const EmbeddingBatch& batch,
                                const CentroidSet& cents) {
    batch.validate();
    const std::size_t m = batch.size(), d = batch.dim();
    const std::size_t k = cents.num_classes();
    if (cents.dim() != d)
        throw DimMismatchError("centroid dim != feature dim");
    if (k != static_cast<std::size_t>(batch.num_classes))
        throw DimMismatchError("centroid count != batch num_classes");
    NormalizedPair np;
    np.fhat = DenseMatrix(m, d);
    np.chat = DenseMatrix(k, d);
    np.fnorms.resize(m);
    np.cnorms.resize(k);
    std::size_t bad = kernels::row_l2_normalize(
        batch.features.data(), np.fhat.data(), np.fnorms.data(), m, d, kNormEpsilon);
    if (bad != kernels::npos)
        throw ZeroNormError("degenerate feature at row " + std::to_string(bad));
    bad = kernels::row_l2_normalize(cents.centroids.data(), np.chat.data(),
                                    np.cnorms.data(), k, d, kNormEpsilon);
    if (bad != kernels::npos)
        throw ZeroNormError("degenerate centroid for class " + std::to_string(bad));
    return np;
}

LossResult forward_impl(const EmbeddingBatch& batch, const NormalizedPair& np,
                        double temperature, bool mean_reduction) {
    if (!(temperature > 0.0)) throw Error("temperature must be positive");
    const std::size_t m = batch.size(), d = batch.dim();
    const std::size_t k = np.chat.rows();
    LossResult res;
    res.logits = DenseMatrix(m, k);
    kernels::matmul_nt(np.fhat.data(), np.chat.data(), res.logits.data(), m, k, d);
    if (temperature != 1.0) {
        for (double& z : res.logits.storage()) z *= temperature;
    }
    res.probs = DenseMatrix(m, k);
    kernels::softmax_rows(res.logits.data(), res.probs.data(), m, k);
    std::vector<double> nll(m);
    kernels::nll_rows(res.logits.data(), batch.labels.data(), nll.data(), m, k);
    double loss = 0.0;
    for (double v : nll) loss += v;
    res.loss = mean_reduction ? loss / static_cast<double>(m) : loss;
    return res;
}

}  // namespace

std::vector<double> coco_output_exclusive(const EmbeddingBatch& batch,
                                          const CentroidSet& cents) {
    const NormalizedPair np = normalize_inputs(batch, cents);
    const std::size_t m = batch.size(), d = batch.dim();
    const std::size_t k = np.chat.rows();
    DenseMatrix cosines(m, k);
    kernels::matmul_nt(np.fhat.data(), np.chat.data(), cosines.data(), m, k, d);
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t l = static_cast<std::size_t>(batch.labels[i]);
        double denom = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (c != l) denom += std::exp(cosines(i, c));
        }
        out[i] = std::exp(cosines(i, l)) / denom;
    }
    return out;
}

LossResult coco_forward(const EmbeddingBatch& batch, const CentroidSet& cents,
                        double temperature, bool mean_reduction) {
    const NormalizedPair np = normalize_inputs(batch, cents);
    return forward_impl(batch, np, temperature, mean_reduction);
}

LossResult coco_backward(const EmbeddingBatch& batch, const CentroidSet& cents,
                         double temperature, bool mean_reduction) {
    const NormalizedPair np = normalize_inputs(batch, cents);
    LossResult res = forward_impl(batch, np, temperature, mean_reduction);
    const std::size_t m = batch.size(), d = batch.dim();
    const std::size_t k = np.chat.rows();
    const double scale =
        mean_reduction ? temperature / static_cast<double>(m) : temperature;
    res.grad_features = DenseMatrix(m, d);
    kernels::cosine_softmax_feature_grads(
        res.probs.data(), batch.labels.data(), np.chat.data(), np.fhat.data(),
        np.fnorms.data(), scale, res.grad_features.data(), m, k, d);
    res.grad_centroids = DenseMatrix(k, d);
    kernels::cosine_softmax_centroid_grads(
        res.probs.data(), batch.labels.data(), np.fhat.data(), np.chat.data(),
        np.cnorms.data(), scale, res.grad_centroids.data(), m, k, d);
    return res;
}

SoftmaxCeResult softmax_ce_baseline(const DenseMatrix& logits,
                                    const std::vector<int>& labels) {
    const std::size_t m = logits.rows(), k = logits.cols();
    if (labels.size() != m)
        throw DimMismatchError("softmax_ce_baseline: label count mismatch");
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw DimMismatchError("softmax_ce_baseline: label out of range");
    }
    SoftmaxCeResult res;
    res.probs = DenseMatrix(m, k);
    kernels::softmax_rows(logits.data(), res.probs.data(), m, k);
    std::vector<double> nll(m);
    kernels::nll_rows(logits.data(), labels.data(), nll.data(), m, k);
    double loss = 0.0;
    for (double v : nll) loss += v;
    res.loss = loss / static_cast<double>(m);
    res.grad_logits = res.probs;
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
        double* g = res.grad_logits.row(i);
        g[labels[i]] -= 1.0;
        for (std::size_t c = 0; c < k; ++c) g[c] *= inv_m;
    }
    if (!std::isfinite(res.loss))
        throw NonFiniteLossError("softmax_ce_baseline: non-finite loss");
    return res;
}

}  // namespace coco
