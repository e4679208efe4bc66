#pragma once

#include <functional>
#include <span>
#include <vector>

#include "coco/matrix.hpp"

namespace coco {

// Norms at or below this are treated as zero vectors.
inline constexpr double kNormEpsilon = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

// Returns v / ||v||. Throws ZeroNormError if ||v|| <= eps.
std::vector<double> l2_normalize(std::span<const double> v, double eps = kNormEpsilon);

// Central-difference gradient of a scalar function:
//   g_j = (f(x + h e_j) - f(x - h e_j)) / (2h).
// Throws NonFiniteEvaluationError if any probe evaluates to NaN/Inf.
std::vector<double> finite_difference_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> point, double step);

}  // namespace coco
