#include "coco/alignment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "coco/errors.hpp"

namespace coco {

namespace {

constexpr double kDegenerateTol = 1e-9;
constexpr double kDetTol = 1e-12;

struct Centered {
    double cx = 0.0, cy = 0.0;
    DenseMatrix pts;  // m x 2, centroid removed
};

Centered center_points(const KeypointSet& p) {
    const std::size_t m = p.size();
    Centered c;
    for (std::size_t i = 0; i < m; ++i) {
        c.cx += p.x(i);
        c.cy += p.y(i);
    }
    c.cx /= static_cast<double>(m);
    c.cy /= static_cast<double>(m);
    c.pts = DenseMatrix(m, 2);
    for (std::size_t i = 0; i < m; ++i) {
        c.pts(i, 0) = p.x(i) - c.cx;
        c.pts(i, 1) = p.y(i) - c.cy;
    }
    return c;
}

// Smallest singular value of a centered m x 2 point matrix: sqrt of the
// smaller eigenvalue of the 2x2 scatter matrix.
double min_singular_value(const DenseMatrix& centered) {
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < centered.rows(); ++i) {
        const double x = centered(i, 0), y = centered(i, 1);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    const double tr = sxx + syy;
    const double det = sxx * syy - sxy * sxy;
    const double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * det));
    const double lam_min = std::max(0.0, (tr - disc) / 2.0);
    return std::sqrt(lam_min);
}

// Solves the 3x3 system N x = rhs in place, partial pivoting.
void solve3(double n[3][3], double rhs[3], double out[3]) {
    int perm[3] = {0, 1, 2};
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r) {
            if (std::fabs(n[perm[r]][col]) > std::fabs(n[perm[piv]][col])) piv = r;
        }
        std::swap(perm[col], perm[piv]);
        const double diag = n[perm[col]][col];
        if (std::fabs(diag) < 1e-300)
            throw DegenerateConfigurationError("estimate_affine: singular system");
        for (int r = col + 1; r < 3; ++r) {
            const double f = n[perm[r]][col] / diag;
            for (int c = col; c < 3; ++c) n[perm[r]][c] -= f * n[perm[col]][c];
            rhs[perm[r]] -= f * rhs[perm[col]];
        }
    }
    for (int col = 2; col >= 0; --col) {
        double acc = rhs[perm[col]];
        for (int c = col + 1; c < 3; ++c) acc -= n[perm[col]][c] * out[c];
        out[col] = acc / n[perm[col]][col];
    }
}

void require_same_count(const KeypointSet& src, const KeypointSet& dst,
                        std::size_t min_count, const char* who) {
    if (src.size() != dst.size())
        throw CountMismatchError(std::string(who) + ": point counts differ");
    if (src.size() < min_count)
        throw CountMismatchError(std::string(who) + ": need at least " +
                                 std::to_string(min_count) + " points");
}

}  // namespace

KeypointSet KeypointSet::from_rows(std::initializer_list<std::array<double, 2>> pts) {
    KeypointSet ks;
    ks.points = DenseMatrix(pts.size(), 2);
    std::size_t i = 0;
    for (const auto& p : pts) {
        ks.points(i, 0) = p[0];
        ks.points(i, 1) = p[1];
        ++i;
    }
    return ks;
}

void AlignmentTransform::validate() const {
    if (std::fabs(det()) <= kDetTol)
        throw DegenerateConfigurationError("transform: non-invertible linear part");
    if (kind == TransformKind::Similarity) {
        // A^T A must equal s^2 I.
        const double a = linear[0], b = linear[1], c = linear[2], d = linear[3];
        const double g00 = a * a + c * c;
        const double g11 = b * b + d * d;
        const double g01 = a * b + c * d;
        if (std::fabs(g00 - g11) > kDegenerateTol || std::fabs(g01) > kDegenerateTol)
            throw DegenerateConfigurationError("transform: not a similarity");
        if (det() <= 0.0)
            throw DegenerateConfigurationError("transform: similarity with reflection");
    }
}

AlignmentTransform estimate_affine(const KeypointSet& src, const KeypointSet& dst) {
    require_same_count(src, dst, 3, "estimate_affine");
    const Centered cs = center_points(src);
    if (min_singular_value(cs.pts) <= kDegenerateTol)
        throw DegenerateConfigurationError(
            "estimate_affine: source points collinear or coincident");

    const std::size_t m = src.size();
    // Normal equations over design rows [x, y, 1], one solve per output axis.
    double n[3][3] = {};
    double rx[3] = {}, ry[3] = {};
    for (std::size_t i = 0; i < m; ++i) {
        const double v[3] = {src.x(i), src.y(i), 1.0};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) n[r][c] += v[r] * v[c];
            rx[r] += v[r] * dst.x(i);
            ry[r] += v[r] * dst.y(i);
        }
    }
    double bx[3], by[3];
    double n2[3][3];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) n2[r][c] = n[r][c];
    solve3(n, rx, bx);
    solve3(n2, ry, by);

    AlignmentTransform t;
    t.kind = TransformKind::Affine;
    t.linear = {bx[0], bx[1], by[0], by[1]};
    t.translation = {bx[2], by[2]};
    return t;
}

AlignmentTransform estimate_similarity(const KeypointSet& src, const KeypointSet& dst) {
    require_same_count(src, dst, 2, "estimate_similarity");
    const Centered cs = center_points(src);
    const Centered cd = center_points(dst);

    double src_sq = 0.0, d = 0.0, c = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double ax = cs.pts(i, 0), ay = cs.pts(i, 1);
        const double bx = cd.pts(i, 0), by = cd.pts(i, 1);
        src_sq += ax * ax + ay * ay;
        d += ax * bx + ay * by;
        c += ax * by - ay * bx;
    }
    if (src_sq <= kDegenerateTol * kDegenerateTol)
        throw DegenerateConfigurationError(
            "estimate_similarity: source points coincident");
    const double mag = std::sqrt(d * d + c * c);
    const double scale = mag / src_sq;
    if (!(scale > kDetTol))
        throw DegenerateConfigurationError(
            "estimate_similarity: destination points coincident");
    const double cos_t = d / mag;
    const double sin_t = c / mag;

    AlignmentTransform t;
    t.kind = TransformKind::Similarity;
    t.linear = {scale * cos_t, -scale * sin_t, scale * sin_t, scale * cos_t};
    t.translation = {cd.cx - (t.linear[0] * cs.cx + t.linear[1] * cs.cy),
                     cd.cy - (t.linear[2] * cs.cx + t.linear[3] * cs.cy)};
    return t;
}

KeypointSet apply_transform(const AlignmentTransform& t, const KeypointSet& pts) {
    KeypointSet out;
    out.points = DenseMatrix(pts.size(), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double x = pts.x(i), y = pts.y(i);
        out.points(i, 0) = t.linear[0] * x + t.linear[1] * y + t.translation[0];
        out.points(i, 1) = t.linear[2] * x + t.linear[3] * y + t.translation[1];
    }
    return out;
}

AlignmentTransform compose(const AlignmentTransform& t2, const AlignmentTransform& t1) {
    AlignmentTransform t;
    const auto& a = t2.linear;
    const auto& b = t1.linear;
    t.linear = {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
                a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]};
    t.translation = {
        a[0] * t1.translation[0] + a[1] * t1.translation[1] + t2.translation[0],
        a[2] * t1.translation[0] + a[3] * t1.translation[1] + t2.translation[1]};
    t.kind = (t1.kind == TransformKind::Similarity &&
              t2.kind == TransformKind::Similarity)
                 ? TransformKind::Similarity
                 : TransformKind::Affine;
    return t;
}

double alignment_rms(const AlignmentTransform& t, const KeypointSet& src,
                     const KeypointSet& dst) {
    require_same_count(src, dst, 1, "alignment_rms");
    const KeypointSet mapped = apply_transform(t, src);
    double sq = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double dx = mapped.x(i) - dst.x(i);
        const double dy = mapped.y(i) - dst.y(i);
        sq += dx * dx + dy * dy;
    }
    return std::sqrt(sq / static_cast<double>(src.size()));
}

KeypointSet read_keypoints(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open keypoint file: " + path);
    std::vector<double> coords;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        double x, y;
        if (!(ls >> x)) continue;  // blank or comment-only line
        if (!(ls >> y))
            throw IoError(path + ":" + std::to_string(lineno) +
                          ": expected two coordinates");
        std::string trailing;
        if (ls >> trailing)
            throw IoError(path + ":" + std::to_string(lineno) +
                          ": trailing tokens after point");
        coords.push_back(x);
        coords.push_back(y);
    }
    if (coords.empty()) throw IoError("keypoint file has no points: " + path);
    KeypointSet ks;
    ks.points = DenseMatrix(coords.size() / 2, 2);
    std::copy(coords.begin(), coords.end(), ks.points.data());
    return ks;
}

void write_keypoints(const std::string& path, const KeypointSet& pts) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write keypoint file: " + path);
    char buf[80];
    for (std::size_t i = 0; i < pts.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", pts.x(i), pts.y(i));
        out << buf;
    }
}

}  // namespace coco
