#include "coco/kernels.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <vector>

namespace coco::kernels {

namespace {
Backend g_backend = Backend::Parallel;

inline int histogram_bin(double c) {
    int bin = static_cast<int>((c + 1.0) * (kHistogramBins / 2.0));
    if (bin < 0) bin = 0;
    if (bin >= kHistogramBins) bin = kHistogramBins - 1;
    return bin;
}
}  // namespace

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

namespace serial {

std::size_t row_l2_normalize(const double* src, double* dst, double* norms,
                             std::size_t n, std::size_t d, double eps) {
    std::size_t bad = npos;
    for (std::size_t i = 0; i < n; ++i) {
        const double* in = src + i * d;
        double* out = dst + i * d;
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += in[j] * in[j];
        const double nrm = std::sqrt(sq);
        norms[i] = nrm;
        if (!(nrm > eps)) {
            for (std::size_t j = 0; j < d; ++j) out[j] = 0.0;
            if (bad == npos) bad = i;
            continue;
        }
        const double inv = 1.0 / nrm;
        for (std::size_t j = 0; j < d; ++j) out[j] = in[j] * inv;
    }
    return bad;
}

void matmul_nt(const double* a, const double* b, double* out,
               std::size_t n, std::size_t m, std::size_t d) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a + i * d;
        double* oi = out + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b + j * d;
            double acc = 0.0;
            for (std::size_t t = 0; t < d; ++t) acc += ai[t] * bj[t];
            oi[j] = acc;
        }
    }
}

void matmul_nn(const double* a, const double* b, double* out,
               std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a + i * k;
        double* oi = out + i * m;
        for (std::size_t j = 0; j < m; ++j) oi[j] = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = ai[t];
            const double* bt = b + t * m;
            for (std::size_t j = 0; j < m; ++j) oi[j] += av * bt[j];
        }
    }
}

void softmax_rows(const double* z, double* p, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* zi = z + i * k;
        double* pi = p + i * k;
        double mx = zi[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, zi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            pi[j] = std::exp(zi[j] - mx);
            sum += pi[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < k; ++j) pi[j] *= inv;
    }
}

void nll_rows(const double* z, const int* labels, double* out,
              std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* zi = z + i * k;
        double mx = zi[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, zi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(zi[j] - mx);
        out[i] = std::log(sum) - (zi[labels[i]] - mx);
    }
}

void cosine_softmax_feature_grads(const double* probs, const int* labels,
                                  const double* chat, const double* fhat,
                                  const double* fnorms, double scale,
                                  double* grad, std::size_t m, std::size_t k,
                                  std::size_t d) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* pi = probs + i * k;
        const double* fi = fhat + i * d;
        double* gi = grad + i * d;
        for (std::size_t j = 0; j < d; ++j) gi[j] = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double w =
                scale * (pi[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0));
            const double* cc = chat + c * d;
            for (std::size_t j = 0; j < d; ++j) gi[j] += w * cc[j];
        }
        double radial = 0.0;
        for (std::size_t j = 0; j < d; ++j) radial += gi[j] * fi[j];
        const double inv = 1.0 / fnorms[i];
        for (std::size_t j = 0; j < d; ++j) gi[j] = (gi[j] - radial * fi[j]) * inv;
    }
}

void cosine_softmax_centroid_grads(const double* probs, const int* labels,
                                   const double* fhat, const double* chat,
                                   const double* cnorms, double scale,
                                   double* grad, std::size_t m, std::size_t k,
                                   std::size_t d) {
    for (std::size_t c = 0; c < k; ++c) {
        const double* cc = chat + c * d;
        double* gc = grad + c * d;
        for (std::size_t j = 0; j < d; ++j) gc[j] = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double w =
                scale * (probs[i * k + c] -
                         (static_cast<int>(c) == labels[i] ? 1.0 : 0.0));
            const double* fi = fhat + i * d;
            for (std::size_t j = 0; j < d; ++j) gc[j] += w * fi[j];
        }
        double radial = 0.0;
        for (std::size_t j = 0; j < d; ++j) radial += gc[j] * cc[j];
        const double inv = 1.0 / cnorms[c];
        for (std::size_t j = 0; j < d; ++j) gc[j] = (gc[j] - radial * cc[j]) * inv;
    }
}

void affine_forward(const double* x, const double* w, const double* b,
                    double* y, std::size_t n, std::size_t in, std::size_t out) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x + i * in;
        double* yi = y + i * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = w + o * in;
            double acc = b[o];
            for (std::size_t j = 0; j < in; ++j) acc += xi[j] * wo[j];
            yi[o] = acc;
        }
    }
}

void apply_activation(const double* u, double* y, std::size_t count, Activation a) {
    if (a == Activation::Relu) {
        for (std::size_t i = 0; i < count; ++i) y[i] = u[i] > 0.0 ? u[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < count; ++i) y[i] = std::tanh(u[i]);
    }
}

void activation_backward(const double* u, const double* dy, double* du,
                         std::size_t count, Activation a) {
    if (a == Activation::Relu) {
        for (std::size_t i = 0; i < count; ++i) du[i] = u[i] > 0.0 ? dy[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            const double t = std::tanh(u[i]);
            du[i] = dy[i] * (1.0 - t * t);
        }
    }
}

void grad_weights(const double* dy, const double* x, double* dw,
                  std::size_t n, std::size_t in, std::size_t out) {
    for (std::size_t o = 0; o < out; ++o) {
        double* dwo = dw + o * in;
        for (std::size_t j = 0; j < in; ++j) dwo[j] = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = dy[i * out + o];
            const double* xi = x + i * in;
            for (std::size_t j = 0; j < in; ++j) dwo[j] += g * xi[j];
        }
    }
}

void grad_bias(const double* dy, double* db, std::size_t n, std::size_t out) {
    for (std::size_t o = 0; o < out; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += dy[i * out + o];
        db[o] = acc;
    }
}

void pair_cosine_stats(const double* unit_rows, const int* labels,
                       std::size_t n, std::size_t d, PairStats& out) {
    // Sums accumulate per row first, then combine in row order, so the
    // parallel kernel can reproduce the same floating-point reduction order.
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double* ri = unit_rows + i * d;
        double intra = 0.0, inter = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double* rj = unit_rows + j * d;
            double c = 0.0;
            for (std::size_t t = 0; t < d; ++t) c += ri[t] * rj[t];
            const int bin = histogram_bin(c);
            if (labels[i] == labels[j]) {
                intra += c;
                out.intra_count++;
                out.hist_intra[bin]++;
            } else {
                inter += c;
                out.inter_count++;
                out.hist_inter[bin]++;
            }
        }
        out.intra_sum += intra;
        out.inter_sum += inter;
    }
}

}  // namespace serial

namespace parallel {

std::size_t row_l2_normalize(const double* src, double* dst, double* norms,
                             std::size_t n, std::size_t d, double eps) {
    long long bad = LLONG_MAX;
#pragma omp parallel for schedule(static) reduction(min : bad)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double* in = src + i * d;
        double* out = dst + i * d;
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += in[j] * in[j];
        const double nrm = std::sqrt(sq);
        norms[i] = nrm;
        if (!(nrm > eps)) {
            for (std::size_t j = 0; j < d; ++j) out[j] = 0.0;
            bad = std::min(bad, i);
        } else {
            const double inv = 1.0 / nrm;
            for (std::size_t j = 0; j < d; ++j) out[j] = in[j] * inv;
        }
    }
    return bad == LLONG_MAX ? npos : static_cast<std::size_t>(bad);
}

void matmul_nt(const double* a, const double* b, double* out,
               std::size_t n, std::size_t m, std::size_t d) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double* ai = a + i * d;
        double* oi = out + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b + j * d;
            double acc = 0.0;
            for (std::size_t t = 0; t < d; ++t) acc += ai[t] * bj[t];
            oi[j] = acc;
        }
    }
}

void matmul_nn(const double* a, const double* b, double* out,
               std::size_t n, std::size_t k, std::size_t m) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double* ai = a + i * k;
        double* oi = out + i * m;
        for (std::size_t j = 0; j < m; ++j) oi[j] = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = ai[t];
            const double* bt = b + t * m;
            for (std::size_t j = 0; j < m; ++j) oi[j] += av * bt[j];
        }
    }
}

void softmax_rows(const double* z, double* p, std::size_t n, std::size_t k) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double* zi = z + i * k;
        double* pi = p + i * k;
        double mx = zi[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, zi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            pi[j] = std::exp(zi[j] - mx);
            sum += pi[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < k; ++j) pi[j] *= inv;
    }
}

void nll_rows(const double* z, const int* labels, double* out,
              std::size_t n, std::size_t k) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double* zi = z + i * k;
        double mx = zi[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, zi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(zi[j] - mx);
        out[i] = std::log(sum) - (zi[labels[i]] - mx);
    }
}

void cosine_softmax_feature_grads(const double* probs, const int* labels,
                                  const double* chat, const double* fhat,
                                  const double* fnorms, double scale,
                                  double* grad, std::size_t m, std::size_t k,
                                  std::size_t d) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        const double* pi = probs + i * k;
        const double* fi = fhat + i * d;
        double* gi = grad + i * d;
        for (std::size_t j = 0; j < d; ++j) gi[j] = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double w =
                scale * (pi[c] - (static_cast<long long>(c) == labels[i] ? 1.0 : 0.0));
            const double* cc = chat + c * d;
            for (std::size_t j = 0; j < d; ++j) gi[j] += w * cc[j];
        }
        double radial = 0.0;
        for (std::size_t j = 0; j < d; ++j) radial += gi[j] * fi[j];
        const double inv = 1.0 / fnorms[i];
        for (std::size_t j = 0; j < d; ++j) gi[j] = (gi[j] - radial * fi[j]) * inv;
    }
}

void cosine_softmax_centroid_grads(const double* probs, const int* labels,
                                   const double* fhat, const double* chat,
                                   const double* cnorms, double scale,
                                   double* grad, std::size_t m, std::size_t k,
                                   std::size_t d) {
#pragma omp parallel for schedule(static)
    for (long long c = 0; c < static_cast<long long>(k); ++c) {
        const double* cc = chat + c * d;
        double* gc = grad + c * d;
        for (std::size_t j = 0; j < d; ++j) gc[j] = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double w =
                scale * (probs[i * k + c] -
                         (c == static_cast<long long>(labels[i]) ? 1.0 : 0.0));
            const double* fi = fhat + i * d;
            for (std::size_t j = 0; j < d; ++j) gc[j] += w * fi[j];
        }
        double radial = 0.0;
        for (std::size_t j = 0; j < d; ++j) radial += gc[j] * cc[j];
        const double inv = 1.0 / cnorms[c];
        for (std::size_t j = 0; j < d; ++j) gc[j] = (gc[j] - radial * cc[j]) * inv;
    }
}

void affine_forward(const double* x, const double* w, const double* b,
                    double* y, std::size_t n, std::size_t in, std::size_t out) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double* xi = x + i * in;
        double* yi = y + i * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = w + o * in;
            double acc = b[o];
            for (std::size_t j = 0; j < in; ++j) acc += xi[j] * wo[j];
            yi[o] = acc;
        }
    }
}

void apply_activation(const double* u, double* y, std::size_t count, Activation a) {
    if (a == Activation::Relu) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(count); ++i)
            y[i] = u[i] > 0.0 ? u[i] : 0.0;
    } else {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(count); ++i)
            y[i] = std::tanh(u[i]);
    }
}

void activation_backward(const double* u, const double* dy, double* du,
                         std::size_t count, Activation a) {
    if (a == Activation::Relu) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(count); ++i)
            du[i] = u[i] > 0.0 ? dy[i] : 0.0;
    } else {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(count); ++i) {
            const double t = std::tanh(u[i]);
            du[i] = dy[i] * (1.0 - t * t);
        }
    }
}

void grad_weights(const double* dy, const double* x, double* dw,
                  std::size_t n, std::size_t in, std::size_t out) {
#pragma omp parallel for schedule(static)
    for (long long o = 0; o < static_cast<long long>(out); ++o) {
        double* dwo = dw + o * in;
        for (std::size_t j = 0; j < in; ++j) dwo[j] = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = dy[i * out + o];
            const double* xi = x + i * in;
            for (std::size_t j = 0; j < in; ++j) dwo[j] += g * xi[j];
        }
    }
}

void grad_bias(const double* dy, double* db, std::size_t n, std::size_t out) {
#pragma omp parallel for schedule(static)
    for (long long o = 0; o < static_cast<long long>(out); ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += dy[i * out + o];
        db[o] = acc;
    }
}

void pair_cosine_stats(const double* unit_rows, const int* labels,
                       std::size_t n, std::size_t d, PairStats& out) {
    if (n < 2) return;
    // Per-row partial sums are combined serially in row order afterwards so
    // the floating-point reduction order matches the serial kernel exactly.
    // Histogram counts are integers; atomic accumulation is order-free.
    std::vector<double> row_intra(n, 0.0), row_inter(n, 0.0);
    std::vector<std::uint64_t> row_intra_count(n, 0), row_inter_count(n, 0);
#pragma omp parallel for schedule(dynamic, 16)
    for (long long i = 0; i < static_cast<long long>(n) - 1; ++i) {
        const double* ri = unit_rows + i * d;
        for (std::size_t j = static_cast<std::size_t>(i) + 1; j < n; ++j) {
            const double* rj = unit_rows + j * d;
            double c = 0.0;
            for (std::size_t t = 0; t < d; ++t) c += ri[t] * rj[t];
            const int bin = histogram_bin(c);
            if (labels[i] == labels[j]) {
                row_intra[i] += c;
                row_intra_count[i]++;
#pragma omp atomic
                out.hist_intra[bin]++;
            } else {
                row_inter[i] += c;
                row_inter_count[i]++;
#pragma omp atomic
                out.hist_inter[bin]++;
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        out.intra_sum += row_intra[i];
        out.inter_sum += row_inter[i];
        out.intra_count += row_intra_count[i];
        out.inter_count += row_inter_count[i];
    }
}

}  // namespace parallel

#define COCO_DISPATCH(fn, ...)                \
    do {                                      \
        if (g_backend == Backend::Serial)     \
            return serial::fn(__VA_ARGS__);   \
        return parallel::fn(__VA_ARGS__);     \
    } while (0)

std::size_t row_l2_normalize(const double* src, double* dst, double* norms,
                             std::size_t n, std::size_t d, double eps) {
    COCO_DISPATCH(row_l2_normalize, src, dst, norms, n, d, eps);
}
void matmul_nt(const double* a, const double* b, double* out,
               std::size_t n, std::size_t m, std::size_t d) {
    COCO_DISPATCH(matmul_nt, a, b, out, n, m, d);
}
void matmul_nn(const double* a, const double* b, double* out,
               std::size_t n, std::size_t k, std::size_t m) {
    COCO_DISPATCH(matmul_nn, a, b, out, n, k, m);
}
void softmax_rows(const double* z, double* p, std::size_t n, std::size_t k) {
    COCO_DISPATCH(softmax_rows, z, p, n, k);
}
void nll_rows(const double* z, const int* labels, double* out,
              std::size_t n, std::size_t k) {
    COCO_DISPATCH(nll_rows, z, labels, out, n, k);
}
void cosine_softmax_feature_grads(const double* probs, const int* labels,
                                  const double* chat, const double* fhat,
                                  const double* fnorms, double scale,
                                  double* grad, std::size_t m, std::size_t k,
                                  std::size_t d) {
    COCO_DISPATCH(cosine_softmax_feature_grads, probs, labels, chat, fhat,
                  fnorms, scale, grad, m, k, d);
}
void cosine_softmax_centroid_grads(const double* probs, const int* labels,
                                   const double* fhat, const double* chat,
                                   const double* cnorms, double scale,
                                   double* grad, std::size_t m, std::size_t k,
                                   std::size_t d) {
    COCO_DISPATCH(cosine_softmax_centroid_grads, probs, labels, fhat, chat,
                  cnorms, scale, grad, m, k, d);
}
void affine_forward(const double* x, const double* w, const double* b,
                    double* y, std::size_t n, std::size_t in, std::size_t out) {
    COCO_DISPATCH(affine_forward, x, w, b, y, n, in, out);
}
void apply_activation(const double* u, double* y, std::size_t count, Activation a) {
    COCO_DISPATCH(apply_activation, u, y, count, a);
}
void activation_backward(const double* u, const double* dy, double* du,
                         std::size_t count, Activation a) {
    COCO_DISPATCH(activation_backward, u, dy, du, count, a);
}
void grad_weights(const double* dy, const double* x, double* dw,
                  std::size_t n, std::size_t in, std::size_t out) {
    COCO_DISPATCH(grad_weights, dy, x, dw, n, in, out);
}
void grad_bias(const double* dy, double* db, std::size_t n, std::size_t out) {
    COCO_DISPATCH(grad_bias, dy, db, n, out);
}
void pair_cosine_stats(const double* unit_rows, const int* labels,
                       std::size_t n, std::size_t d, PairStats& out) {
    COCO_DISPATCH(pair_cosine_stats, unit_rows, labels, n, d, out);
}

#undef COCO_DISPATCH

}  // namespace coco::kernels
