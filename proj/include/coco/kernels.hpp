#pragma once

#include <cstddef>
#include <cstdint>

namespace coco::kernels {

enum class Activation { Relu, Tanh };

enum class Backend { Serial, Parallel };

// Process-wide kernel backend, default Parallel. The parallel kernels only
// split loops whose iterations write disjoint outputs (or reduce in a fixed
// index order), so both backends produce bit-identical results.
Backend backend();
void set_backend(Backend b);

constexpr std::size_t npos = static_cast<std::size_t>(-1);

inline constexpr int kHistogramBins = 64;

// Accumulated cosine statistics over all unordered sample pairs, split by
// label equality.
struct PairStats {
    double intra_sum = 0.0;
    double inter_sum = 0.0;
    std::uint64_t intra_count = 0;
    std::uint64_t inter_count = 0;
    std::uint64_t hist_intra[kHistogramBins] = {};
    std::uint64_t hist_inter[kHistogramBins] = {};
};

// Each kernel exists twice: a plain serial reference and an OpenMP variant.
// Signatures are identical; tests assert bit-identical outputs and the
// bench tool compares timings.
namespace serial {

// dst[i,:] = src[i,:] / ||src[i,:]||, norms[i] = ||src[i,:]||.
// Returns the first row index with norm <= eps (dst row left zeroed), or npos.
std::size_t row_l2_normalize(const double* src, double* dst, double* norms,
                             std::size_t n, std::size_t d, double eps);

// out (n x m) = a (n x d) * b (m x d)^T
void matmul_nt(const double* a, const double* b, double* out,
               std::size_t n, std::size_t m, std::size_t d);

// out (n x m) = a (n x k) * b (k x m)
void matmul_nn(const double* a, const double* b, double* out,
               std::size_t n, std::size_t k, std::size_t m);

// p[i,:] = softmax(z[i,:]) with row-max subtraction.
void softmax_rows(const double* z, double* p, std::size_t n, std::size_t k);

// out[i] = -log softmax(z[i,:])[labels[i]], evaluated in log-sum-exp form.
void nll_rows(const double* z, const int* labels, double* out,
              std::size_t n, std::size_t k);

// Gradient of a softmax-over-cosine loss w.r.t. raw features. For sample i:
//   inner = scale * sum_k (p[i,k] - [k==l_i]) * chat[k,:]
//   grad[i,:] = (inner - (inner . fhat[i,:]) fhat[i,:]) / fnorms[i]
void cosine_softmax_feature_grads(const double* probs, const int* labels,
                                  const double* chat, const double* fhat,
                                  const double* fnorms, double scale,
                                  double* grad, std::size_t m, std::size_t k,
                                  std::size_t d);

// Same projection with feature/centroid roles exchanged, summed over samples:
//   inner_k = scale * sum_i (p[i,k] - [k==l_i]) * fhat[i,:]
//   grad[k,:] = (inner_k - (inner_k . chat[k,:]) chat[k,:]) / cnorms[k]
void cosine_softmax_centroid_grads(const double* probs, const int* labels,
                                   const double* fhat, const double* chat,
                                   const double* cnorms, double scale,
                                   double* grad, std::size_t m, std::size_t k,
                                   std::size_t d);

// y (n x out) = x (n x in) * w (out x in)^T + b
void affine_forward(const double* x, const double* w, const double* b,
                    double* y, std::size_t n, std::size_t in, std::size_t out);

void apply_activation(const double* u, double* y, std::size_t count, Activation a);

// du = dy * g'(u) elementwise, g the activation.
void activation_backward(const double* u, const double* dy, double* du,
                         std::size_t count, Activation a);

// dw (out x in) = dy (n x out)^T * x (n x in), accumulated over samples in
// index order.
void grad_weights(const double* dy, const double* x, double* dw,
                  std::size_t n, std::size_t in, std::size_t out);

// db[o] = sum_i dy[i,o], index order.
void grad_bias(const double* dy, double* db, std::size_t n, std::size_t out);

// Cosine statistics over all unordered pairs of unit-norm rows.
void pair_cosine_stats(const double* unit_rows, const int* labels,
                       std::size_t n, std::size_t d, PairStats& out);

}  // namespace serial

namespace parallel {

std::size_t row_l2_normalize(const double* src, double* dst, double* norms,
                             std::size_t n, std::size_t d, double eps);
void matmul_nt(const double* a, const double* b, double* out,
               std::size_t n, std::size_t m, std::size_t d);
void matmul_nn(const double* a, const double* b, double* out,
               std::size_t n, std::size_t k, std::size_t m);
void softmax_rows(const double* z, double* p, std::size_t n, std::size_t k);
void nll_rows(const double* z, const int* labels, double* out,
              std::size_t n, std::size_t k);
void cosine_softmax_feature_grads(const double* probs, const int* labels,
                                  const double* chat, const double* fhat,
                                  const double* fnorms, double scale,
                                  double* grad, std::size_t m, std::size_t k,
                                  std::size_t d);
void cosine_softmax_centroid_grads(const double* probs, const int* labels,
                                   const double* fhat, const double* chat,
                                   const double* cnorms, double scale,
                                   double* grad, std::size_t m, std::size_t k,
                                   std::size_t d);
void affine_forward(const double* x, const double* w, const double* b,
                    double* y, std::size_t n, std::size_t in, std::size_t out);
void apply_activation(const double* u, double* y, std::size_t count, Activation a);
void activation_backward(const double* u, const double* dy, double* du,
                         std::size_t count, Activation a);
void grad_weights(const double* dy, const double* x, double* dw,
                  std::size_t n, std::size_t in, std::size_t out);
void grad_bias(const double* dy, double* db, std::size_t n, std::size_t out);
void pair_cosine_stats(const double* unit_rows, const int* labels,
                       std::size_t n, std::size_t d, PairStats& out);

}  // namespace parallel

// Dispatchers honoring backend().
std::size_t row_l2_normalize(const double* src, double* dst, double* norms,
                             std::size_t n, std::size_t d, double eps);
void matmul_nt(const double* a, const double* b, double* out,
               std::size_t n, std::size_t m, std::size_t d);
void matmul_nn(const double* a, const double* b, double* out,
               std::size_t n, std::size_t k, std::size_t m);
void softmax_rows(const double* z, double* p, std::size_t n, std::size_t k);
void nll_rows(const double* z, const int* labels, double* out,
              std::size_t n, std::size_t k);
void cosine_softmax_feature_grads(const double* probs, const int* labels,
                                  const double* chat, const double* fhat,
                                  const double* fnorms, double scale,
                                  double* grad, std::size_t m, std::size_t k,
                                  std::size_t d);
void cosine_softmax_centroid_grads(const double* probs, const int* labels,
                                   const double* fhat, const double* chat,
                                   const double* cnorms, double scale,
                                   double* grad, std::size_t m, std::size_t k,
                                   std::size_t d);
void affine_forward(const double* x, const double* w, const double* b,
                    double* y, std::size_t n, std::size_t in, std::size_t out);
void apply_activation(const double* u, double* y, std::size_t count, Activation a);
void activation_backward(const double* u, const double* dy, double* du,
                         std::size_t count, Activation a);
void grad_weights(const double* dy, const double* x, double* dw,
                  std::size_t n, std::size_t in, std::size_t out);
void grad_bias(const double* dy, double* db, std::size_t n, std::size_t out);
void pair_cosine_stats(const double* unit_rows, const int* labels,
                       std::size_t n, std::size_t d, PairStats& out);

}  // namespace coco::kernels
