#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <random>

#include "coco/alignment.hpp"
#include "coco/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace coco;
using coco::test::TempDir;

namespace {

KeypointSet base_points() {
    return KeypointSet::from_rows(
        {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.5, 1.25}, {-0.5, 2.0}, {2.0, -1.0}});
}

AlignmentTransform similarity(double s, double theta, double tx, double ty) {
    AlignmentTransform t;
    t.kind = TransformKind::Similarity;
    t.linear = {s * std::cos(theta), -s * std::sin(theta),
                s * std::sin(theta), s * std::cos(theta)};
    t.translation = {tx, ty};
    return t;
}

void check_close(const AlignmentTransform& got, const AlignmentTransform& want,
                 double tol) {
    for (int i = 0; i < 4; ++i) CHECK(std::abs(got.linear[i] - want.linear[i]) <= tol);
    for (int i = 0; i < 2; ++i)
        CHECK(std::abs(got.translation[i] - want.translation[i]) <= tol);
}

}  // namespace

TEST_CASE("estimate_affine on identical point sets is the identity") {
    const KeypointSet pts = base_points();
    const AlignmentTransform t = estimate_affine(pts, pts);
    AlignmentTransform eye;
    check_close(t, eye, 1e-9);
}

TEST_CASE("estimate_affine recovers a quarter-turn with translation (3,5)") {
    AlignmentTransform gen;
    gen.linear = {0.0, -1.0, 1.0, 0.0};
    gen.translation = {3.0, 5.0};
    const KeypointSet src = base_points();
    const KeypointSet dst = apply_transform(gen, src);
    const AlignmentTransform t = estimate_affine(src, dst);
    check_close(t, gen, 1e-9);
    CHECK(alignment_rms(t, src, dst) <= 1e-9);
}

TEST_CASE("estimate_affine residual stays below three sigma under noise") {
    const KeypointSet src = base_points();
    AlignmentTransform gen;
    gen.linear = {1.2, 0.3, -0.4, 0.9};
    gen.translation = {0.5, -1.5};
    const double sigma = 0.01;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, sigma);
        KeypointSet dst = apply_transform(gen, src);
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst.points(i, 0) += noise(rng);
            dst.points(i, 1) += noise(rng);
        }
        const AlignmentTransform t = estimate_affine(src, dst);
        CHECK(alignment_rms(t, src, dst) <= 3.0 * sigma);
    }
}

TEST_CASE("estimate_affine rejects degenerate configurations") {
    const KeypointSet collinear =
        KeypointSet::from_rows({{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}});
    CHECK_THROWS_AS(estimate_affine(collinear, collinear), DegenerateConfigurationError);

    const KeypointSet coincident =
        KeypointSet::from_rows({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}});
    CHECK_THROWS_AS(estimate_affine(coincident, coincident),
                    DegenerateConfigurationError);

    // too few points is a count problem, not a placement one
    const KeypointSet two = KeypointSet::from_rows({{0.0, 0.0}, {1.0, 0.0}});
    CHECK_THROWS_AS(estimate_affine(two, two), CountMismatchError);

    const KeypointSet three = base_points();
    const KeypointSet four =
        KeypointSet::from_rows({{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}});
    CHECK_THROWS_AS(estimate_affine(three, four), CountMismatchError);
}

TEST_CASE("estimate_similarity on identical point sets is the identity") {
    const KeypointSet pts = base_points();
    const AlignmentTransform t = estimate_similarity(pts, pts);
    CHECK(t.kind == TransformKind::Similarity);
    check_close(t, similarity(1.0, 0.0, 0.0, 0.0), 1e-9);
}

TEST_CASE("estimate_similarity recovers scale 2, rotation 90 degrees, shift (1,-1)") {
    const AlignmentTransform gen = similarity(2.0, M_PI / 2.0, 1.0, -1.0);
    const KeypointSet src = base_points();
    const KeypointSet dst = apply_transform(gen, src);
    const AlignmentTransform t = estimate_similarity(src, dst);
    check_close(t, gen, 1e-9);
    t.validate();
}

TEST_CASE("similarity residual is at least the affine residual on noisy data") {
    const KeypointSet src = base_points();
    AlignmentTransform gen;
    gen.linear = {1.1, 0.4, -0.2, 0.8};  // genuinely affine, not a similarity
    gen.translation = {0.3, 0.7};
    std::mt19937_64 rng(7);
    std::normal_distribution<double> noise(0.0, 0.01);
    KeypointSet dst = apply_transform(gen, src);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst.points(i, 0) += noise(rng);
        dst.points(i, 1) += noise(rng);
    }
    const double affine_rms = alignment_rms(estimate_affine(src, dst), src, dst);
    const double sim_rms = alignment_rms(estimate_similarity(src, dst), src, dst);
    CHECK(sim_rms >= affine_rms);
}

TEST_CASE("estimate_similarity never produces a reflection") {
    // dst is src mirrored; the best proper similarity still has det > 0
    KeypointSet src = base_points();
    KeypointSet dst = src;
    for (std::size_t i = 0; i < dst.size(); ++i) dst.points(i, 0) *= -1.0;
    const AlignmentTransform t = estimate_similarity(src, dst);
    CHECK(t.det() > 0.0);
}

TEST_CASE("estimate_similarity degenerate and mismatched inputs") {
    const KeypointSet one = KeypointSet::from_rows({{1.0, 2.0}});
    CHECK_THROWS_AS(estimate_similarity(one, one), CountMismatchError);

    const KeypointSet same = KeypointSet::from_rows({{1.0, 2.0}, {1.0, 2.0}});
    CHECK_THROWS_AS(estimate_similarity(same, same), DegenerateConfigurationError);

    const KeypointSet a = KeypointSet::from_rows({{0.0, 0.0}, {1.0, 0.0}});
    const KeypointSet b = KeypointSet::from_rows({{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}});
    CHECK_THROWS_AS(estimate_similarity(a, b), CountMismatchError);
}

TEST_CASE("apply_transform identity and pure translation") {
    const KeypointSet pts = base_points();
    AlignmentTransform eye;
    const KeypointSet mapped = apply_transform(eye, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(mapped.x(i) == pts.x(i));
        CHECK(mapped.y(i) == pts.y(i));
    }

    AlignmentTransform shift;
    shift.translation = {1.0, 2.0};
    const KeypointSet origin = KeypointSet::from_rows({{0.0, 0.0}});
    const KeypointSet moved = apply_transform(shift, origin);
    CHECK(moved.x(0) == 1.0);
    CHECK(moved.y(0) == 2.0);
}

TEST_CASE("composition applies the first transform first") {
    AlignmentTransform t1;
    t1.linear = {1.5, 0.25, -0.5, 2.0};
    t1.translation = {0.1, -0.2};
    const AlignmentTransform t2 = similarity(0.8, 0.6, 2.0, 1.0);
    const KeypointSet pts = base_points();

    const KeypointSet two_step = apply_transform(t2, apply_transform(t1, pts));
    const KeypointSet one_step = apply_transform(compose(t2, t1), pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(std::abs(two_step.x(i) - one_step.x(i)) <= 1e-12);
        CHECK(std::abs(two_step.y(i) - one_step.y(i)) <= 1e-12);
    }

    // two similarities compose to a similarity; mixing kinds falls back to affine
    const AlignmentTransform s = compose(t2, similarity(2.0, -0.3, 0.0, 1.0));
    CHECK(s.kind == TransformKind::Similarity);
    s.validate();
    CHECK(compose(t2, t1).kind == TransformKind::Affine);
}

TEST_CASE("random noiseless transforms are recovered to 1e-9") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> entry(-2.0, 2.0);
    std::uniform_real_distribution<double> angle(-M_PI, M_PI);
    std::uniform_real_distribution<double> scale(0.25, 4.0);
    const KeypointSet src = base_points();

    for (int trial = 0; trial < 100; ++trial) {
        AlignmentTransform gen;
        do {
            gen.linear = {entry(rng), entry(rng), entry(rng), entry(rng)};
        } while (std::abs(gen.det()) < 0.1);
        gen.translation = {entry(rng), entry(rng)};
        const AlignmentTransform est =
            estimate_affine(src, apply_transform(gen, src));
        check_close(est, gen, 1e-9);

        const AlignmentTransform sgen =
            similarity(scale(rng), angle(rng), entry(rng), entry(rng));
        const AlignmentTransform sest =
            estimate_similarity(src, apply_transform(sgen, src));
        check_close(sest, sgen, 1e-9);
        sest.validate();
    }
}

TEST_CASE("similarity transforms preserve angles") {
    const AlignmentTransform t = similarity(1.7, 0.9, -1.0, 2.0);
    const KeypointSet pts = base_points();
    const KeypointSet mapped = apply_transform(t, pts);
    auto cos_at = [](const KeypointSet& p, std::size_t a, std::size_t b,
                     std::size_t c) {
        const double ux = p.x(a) - p.x(b), uy = p.y(a) - p.y(b);
        const double vx = p.x(c) - p.x(b), vy = p.y(c) - p.y(b);
        return (ux * vx + uy * vy) /
               (std::hypot(ux, uy) * std::hypot(vx, vy));
    };
    for (std::size_t b = 0; b < pts.size(); ++b) {
        const std::size_t a = (b + 1) % pts.size(), c = (b + 2) % pts.size();
        CHECK(std::abs(cos_at(pts, a, b, c) - cos_at(mapped, a, b, c)) <= 1e-9);
    }
}

TEST_CASE("estimation is translation equivariant") {
    const KeypointSet src = base_points();
    AlignmentTransform gen;
    gen.linear = {0.9, -0.3, 0.2, 1.4};
    gen.translation = {1.0, 2.0};
    const KeypointSet dst = apply_transform(gen, src);

    const double ox = 5.0, oy = -3.0;
    KeypointSet src2 = src, dst2 = dst;
    for (std::size_t i = 0; i < src.size(); ++i) {
        src2.points(i, 0) += ox;
        src2.points(i, 1) += oy;
        dst2.points(i, 0) += ox;
        dst2.points(i, 1) += oy;
    }
    const AlignmentTransform t1 = estimate_affine(src, dst);
    const AlignmentTransform t2 = estimate_affine(src2, dst2);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(t1.linear[i] - t2.linear[i]) <= 1e-9);
    // shifting both sides by o moves the translation by o - A o
    CHECK(std::abs(t2.translation[0] -
                   (t1.translation[0] + ox - (t1.linear[0] * ox + t1.linear[1] * oy))) <=
          1e-9);
    CHECK(std::abs(t2.translation[1] -
                   (t1.translation[1] + oy - (t1.linear[2] * ox + t1.linear[3] * oy))) <=
          1e-9);
}

TEST_CASE("transform validation catches broken invariants") {
    AlignmentTransform singular;
    singular.linear = {1.0, 2.0, 2.0, 4.0};
    CHECK_THROWS_AS(singular.validate(), DegenerateConfigurationError);

    AlignmentTransform fake_similarity;
    fake_similarity.kind = TransformKind::Similarity;
    fake_similarity.linear = {2.0, 0.0, 0.0, 1.0};  // anisotropic scale
    CHECK_THROWS(fake_similarity.validate());

    AlignmentTransform ok = similarity(1.5, 0.3, 1.0, 1.0);
    ok.validate();
}

TEST_CASE("keypoint files round-trip and reject malformed content") {
    TempDir dir("alignment");
    const KeypointSet pts = KeypointSet::from_rows(
        {{0.125, -3.5}, {1.0 / 3.0, 2.718281828459045}, {-0.0001, 7.25}});
    const std::string path = dir.file("pts.txt");
    write_keypoints(path, pts);
    const KeypointSet back = read_keypoints(path);
    REQUIRE(back.size() == pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(back.x(i) == pts.x(i));  // 17 significant digits round-trip exactly
        CHECK(back.y(i) == pts.y(i));
    }

    {
        std::ofstream out(dir.file("commented.txt"));
        out << "# base shape\n0.5 0.5\n# midline\n1.0 -1.0   # trailing comment\n";
    }
    const KeypointSet commented = read_keypoints(dir.file("commented.txt"));
    REQUIRE(commented.size() == 2);
    CHECK(commented.x(1) == 1.0);
    CHECK(commented.y(1) == -1.0);

    {
        std::ofstream out(dir.file("bad.txt"));
        out << "0.5\n";
    }
    CHECK_THROWS_AS(read_keypoints(dir.file("bad.txt")), IoError);

    {
        std::ofstream out(dir.file("extra.txt"));
        out << "0.5 0.5 0.5\n";
    }
    CHECK_THROWS_AS(read_keypoints(dir.file("extra.txt")), IoError);

    CHECK_THROWS_AS(read_keypoints(dir.file("missing.txt")), IoError);

    {
        std::ofstream out(dir.file("empty.txt"));
        out << "# nothing here\n";
    }
    CHECK_THROWS_AS(read_keypoints(dir.file("empty.txt")), IoError);
}
