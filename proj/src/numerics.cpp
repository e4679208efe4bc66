#include "coco/numerics.hpp"

#include <cmath>

#include "coco/errors.hpp"

namespace coco {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimMismatchError("dot: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

std::vector<double> l2_normalize(std::span<const double> v, double eps) {
    const double n = norm(v);
    if (!(n > eps)) throw ZeroNormError("l2_normalize: norm below epsilon");
    std::vector<double> out(v.size());
    const double inv = 1.0 / n;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
    return out;
}

std::vector<double> finite_difference_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> point, double step) {
    if (!(step > 0.0)) throw Error("finite_difference_grad: step must be positive");
    std::vector<double> grad(point.size());
    for (std::size_t j = 0; j < point.size(); ++j) {
        const double saved = point[j];
        point[j] = saved + step;
        const double fp = f(point);
        point[j] = saved - step;
        const double fm = f(point);
        point[j] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NonFiniteEvaluationError(
                "finite_difference_grad: non-finite probe at coordinate " +
                std::to_string(j));
        }
        grad[j] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

}  // namespace coco
