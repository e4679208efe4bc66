#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "coco/kernels.hpp"
#include "coco/matrix.hpp"

namespace {

using coco::DenseMatrix;
namespace kn = coco::kernels;

template <typename F>
double time_ms(F&& f, int reps) {
    f();  // warm-up, also primes the OpenMP pool
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) f();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-28s %12.3f %12.3f %9.2fx\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms);
}

}  // namespace

int main() {
    const std::size_t n = 3000, m = 256, d = 128;
    std::mt19937_64 rng(42);
    std::normal_distribution<double> dist(0.0, 1.0);

    DenseMatrix a(n, d), b(m, d), unit(n, d), out_nm(n, m), probs(n, m);
    std::vector<double> norms(n), nll(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = dist(rng);
    for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] = dist(rng);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % m);

    kn::serial::row_l2_normalize(a.data(), unit.data(), norms.data(), n, d, 1e-12);
    kn::serial::matmul_nt(a.data(), b.data(), out_nm.data(), n, m, d);
    kn::serial::softmax_rows(out_nm.data(), probs.data(), n, m);

    DenseMatrix bhat(m, d);
    std::vector<double> bnorms(m);
    kn::serial::row_l2_normalize(b.data(), bhat.data(), bnorms.data(), m, d, 1e-12);
    DenseMatrix grads(n, d);

    const int reps = 5;
    std::printf("%-28s %12s %12s %9s\n", "kernel", "serial ms", "parallel ms",
                "speedup");

    report("row_l2_normalize",
           time_ms([&] { kn::serial::row_l2_normalize(a.data(), unit.data(),
                                                      norms.data(), n, d, 1e-12); },
                   reps),
           time_ms([&] { kn::parallel::row_l2_normalize(a.data(), unit.data(),
                                                        norms.data(), n, d, 1e-12); },
                   reps));
    report("matmul_nt",
           time_ms([&] { kn::serial::matmul_nt(a.data(), b.data(), out_nm.data(), n,
                                               m, d); },
                   reps),
           time_ms([&] { kn::parallel::matmul_nt(a.data(), b.data(), out_nm.data(),
                                                 n, m, d); },
                   reps));
    report("softmax_rows",
           time_ms([&] { kn::serial::softmax_rows(out_nm.data(), probs.data(), n, m); },
                   reps),
           time_ms([&] { kn::parallel::softmax_rows(out_nm.data(), probs.data(), n,
                                                    m); },
                   reps));
    report("nll_rows",
           time_ms([&] { kn::serial::nll_rows(out_nm.data(), labels.data(),
                                              nll.data(), n, m); },
                   reps),
           time_ms([&] { kn::parallel::nll_rows(out_nm.data(), labels.data(),
                                                nll.data(), n, m); },
                   reps));
    report("cosine_softmax_feature_grads",
           time_ms([&] { kn::serial::cosine_softmax_feature_grads(
                             probs.data(), labels.data(), bhat.data(), unit.data(),
                             norms.data(), 1.0, grads.data(), n, m, d); },
                   reps),
           time_ms([&] { kn::parallel::cosine_softmax_feature_grads(
                             probs.data(), labels.data(), bhat.data(), unit.data(),
                             norms.data(), 1.0, grads.data(), n, m, d); },
                   reps));
    DenseMatrix dw(m, d);
    report("grad_weights",
           time_ms([&] { kn::serial::grad_weights(out_nm.data(), a.data(), dw.data(),
                                                  n, d, m); },
                   reps),
           time_ms([&] { kn::parallel::grad_weights(out_nm.data(), a.data(),
                                                    dw.data(), n, d, m); },
                   reps));

    const std::size_t pair_n = 1200;
    kn::PairStats ps;
    report("pair_cosine_stats",
           time_ms([&] { kn::serial::pair_cosine_stats(unit.data(), labels.data(),
                                                       pair_n, d, ps); },
                   reps),
           time_ms([&] { kn::parallel::pair_cosine_stats(unit.data(), labels.data(),
                                                         pair_n, d, ps); },
                   reps));
    return 0;
}
