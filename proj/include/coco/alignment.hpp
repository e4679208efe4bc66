#pragma once

#include <array>
#include <string>

#include "coco/matrix.hpp"

namespace coco {

// m keypoints as an m x 2 matrix of (x, y) coordinates.
struct KeypointSet {
    DenseMatrix points;

    std::size_t size() const { return points.rows(); }
    double x(std::size_t i) const { return points(i, 0); }
    double y(std::size_t i) const { return points(i, 1); }

    static KeypointSet from_rows(std::initializer_list<std::array<double, 2>> pts);
};

enum class TransformKind { Affine, Similarity };

// q = A p + b applied row-wise; Similarity constrains A = s R with a proper
// rotation R and s > 0.
struct AlignmentTransform {
    std::array<double, 4> linear = {1.0, 0.0, 0.0, 1.0};  // row-major 2x2
    std::array<double, 2> translation = {0.0, 0.0};
    TransformKind kind = TransformKind::Affine;

    double det() const { return linear[0] * linear[3] - linear[1] * linear[2]; }

    // |det| > 1e-12; Similarity additionally A^T A = s^2 I (1e-9) with det > 0.
    void validate() const;
};

// Least-squares affine fit of src -> dst via normal equations. Requires
// m >= 3 matched points that are not (near-)collinear: the smallest singular
// value of the centered src set must exceed 1e-9.
AlignmentTransform estimate_affine(const KeypointSet& src, const KeypointSet& dst);

// Closed-form least-squares scale/rotation/translation fit of src -> dst on
// centered point sets. Reflections are never produced. Requires m >= 2 with
// at least two distinct src points.
AlignmentTransform estimate_similarity(const KeypointSet& src, const KeypointSet& dst);

KeypointSet apply_transform(const AlignmentTransform& t, const KeypointSet& pts);

// compose(t2, t1) applies t1 first: x -> t2(t1(x)).
AlignmentTransform compose(const AlignmentTransform& t2, const AlignmentTransform& t1);

// Mean of ||t(src_i) - dst_i|| squared over points, square-rooted (RMS).
double alignment_rms(const AlignmentTransform& t, const KeypointSet& src,
                     const KeypointSet& dst);

// Text format: one "x y" pair per line, '#' starts a comment.
KeypointSet read_keypoints(const std::string& path);
void write_keypoints(const std::string& path, const KeypointSet& pts);

}  // namespace coco
