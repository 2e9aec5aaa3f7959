#include "support.hpp"

#include "bscatter/io.hpp"

#include <gtest/gtest.h>

using namespace bscatter;
using bscatter::testing::Gen;
using bscatter::testing::make_scene;

namespace {

const ConvexBody kDisc = ConvexBody::disc(1, planar(-2, 0), 1.0);

bool has_kind(const std::vector<SceneViolation>& v, const std::string& kind)
{
    for (const auto& x : v)
        if (x.kind == kind)
            return true;
    return false;
}

}  // namespace

TEST(SceneGeometry, DiscValueAndGradient)
{
    const ImplicitValue on = kDisc.eval(planar(-3, 0));
    EXPECT_NEAR(on.value, 0.0, 1e-15);
    EXPECT_LT(on.gradient.normalized().dot(planar(-1, 0)) - 1.0, 1e-15);
    EXPECT_LT(kDisc.eval(planar(-2, 0)).value, 0.0);
}

TEST(SceneGeometry, DiscNormals)
{
    EXPECT_LT((outward_normal(kDisc, planar(-3, 0)) - planar(-1, 0)).norm(), 1e-15);
    EXPECT_LT((outward_normal(kDisc, planar(-2, 1)) - planar(0, 1)).norm(), 1e-15);
}

TEST(SceneGeometry, DiscCurvatureIsInverseRadius)
{
    for (double r : {1.0, 2.0}) {
        const ConvexBody d = ConvexBody::disc(1, planar(0.3, -0.2), r);
        for (const Vec& p : boundary_samples(d, 2, 64))
            EXPECT_NEAR(boundary_curvature(d, p), 1.0 / r, 1e-12);
    }
}

// Closed-form ellipse oracle: boundary c + R(a cos s, b sin s) has outward normal
// R(b cos s, a sin s)/|.| and curvature ab / (a^2 sin^2 s + b^2 cos^2 s)^(3/2).
TEST(SceneGeometry, EllipseMatchesClosedForm)
{
    Gen gen(11);
    for (int trial = 0; trial < 50; ++trial) {
        const double a = gen.uniform(0.3, 2.0), b = gen.uniform(0.2, a);
        const double rot = gen.uniform(-180, 180);
        const Vec c = planar(gen.uniform(-1, 1), gen.uniform(-1, 1));
        const ConvexBody e = ConvexBody::ellipsoid(1, c, Vec(a, b, 1.0), rot);
        const double r = rot * kPi / 180.0;
        auto R = [&](double x, double y) {
            return planar(std::cos(r) * x - std::sin(r) * y, std::sin(r) * x + std::cos(r) * y);
        };
        for (int i = 0; i < 20; ++i) {
            const double s = gen.angle();
            const Vec p = c + R(a * std::cos(s), b * std::sin(s));
            EXPECT_NEAR(e.eval(p).value, 0.0, 1e-12);
            const Vec n = R(b * std::cos(s), a * std::sin(s)).normalized();
            EXPECT_LT((outward_normal(e, p) - n).norm(), 1e-12);
            const double q = a * a * std::sin(s) * std::sin(s) + b * b * std::cos(s) * std::cos(s);
            EXPECT_NEAR(boundary_curvature(e, p), a * b / std::pow(q, 1.5), 1e-9);
        }
    }
}

TEST(SceneGeometry, NearestBoundaryPointIsOrthogonalFoot)
{
    Gen gen(12);
    for (int trial = 0; trial < 200; ++trial) {
        const ConvexBody b = gen.body(1, planar(gen.uniform(-1, 1), gen.uniform(-1, 1)), 1.8);
        const Vec p = planar(gen.uniform(-3.5, 3.5), gen.uniform(-3.5, 3.5));
        const Vec q = nearest_boundary_point(b, p);
        EXPECT_LT(boundary_residual(b, q), 1e-10);
        const Vec d = p - q;
        if (d.norm() > 1e-6)
            EXPECT_LT(std::abs(cross2(d.normalized(), outward_normal(b, q))), 1e-7);
        // No boundary sample is closer.
        for (const Vec& s : boundary_samples(b, 2, 90))
            EXPECT_GE((s - p).norm(), d.norm() - 1e-9);
    }
}

TEST(SceneGeometry, ClosestPointsOfDiscs)
{
    const ClosestPair cp = closest_points(ConvexBody::disc(1, planar(-2, 0), 1.0),
                                          ConvexBody::disc(2, planar(2, 0), 1.0));
    EXPECT_NEAR(cp.distance, 2.0, 1e-10);
    EXPECT_LT((cp.on_a - planar(-1, 0)).norm(), 1e-8);
    EXPECT_LT((cp.on_b - planar(1, 0)).norm(), 1e-8);
}

TEST(SceneValidation, TwoSeparatedDiscsAreValid)
{
    EXPECT_TRUE(validate_scene(bscatter::testing::load("two_discs")).empty());
}

TEST(SceneValidation, OverlapIsReported)
{
    const Scene s = make_scene({ConvexBody::disc(1, planar(-0.5, 0), 1.0),
                                ConvexBody::disc(2, planar(0.5, 0), 1.0)});
    EXPECT_TRUE(has_kind(validate_scene(s), "overlap"));
}

TEST(SceneValidation, BodyCrossingS0IsReported)
{
    const Scene s = make_scene({ConvexBody::disc(1, planar(3.5, 0), 1.0)});
    EXPECT_FALSE(validate_scene(s).empty());
}

TEST(SceneIo, JsonRoundTripPreservesHash)
{
    for (const char* name : {"ex11", "two_discs", "empty", "disc"}) {
        const Scene s = bscatter::testing::load(name);
        const Scene back = parse_scene_json(scene_to_json(s));
        EXPECT_EQ(scene_hash(s), scene_hash(back)) << name;
        EXPECT_EQ(back.bodies.size(), s.bodies.size());
    }
}

TEST(SceneIo, RejectsMalformedScenes)
{
    EXPECT_THROW(parse_scene_json("{"), Error);
    EXPECT_TRUE(has_kind(
        validate_scene(parse_scene_json(R"({"s0": {"center": [0, 0], "radius": -1}, "bodies": []})")),
        "radius"));
    EXPECT_THROW(
        parse_scene_json(
            R"({"s0": {"center": [0, 0], "radius": 4}, "bodies": [{"type": "blob"}]})"),
        Error);
}

TEST(Numbers, FormatDoubleRoundTrips)
{
    Gen gen(13);
    for (int i = 0; i < 20000; ++i) {
        const double v = gen.uniform(-1, 1) * std::pow(10.0, gen.integer(-300, 300));
        EXPECT_EQ(parse_double(format_double(v)), v);
    }
    EXPECT_EQ(format_double(0.5), "0.5");
    EXPECT_EQ(format_double(-2.0), "-2");
}

TEST(Numbers, WrapAngleRanges)
{
    Gen gen(14);
    for (int i = 0; i < 10000; ++i) {
        const double a = gen.uniform(-50, 50);
        const double w = wrap_angle(a), p = wrap_positive(a);
        EXPECT_GT(w, -kPi);
        EXPECT_LE(w, kPi);
        EXPECT_GE(p, 0.0);
        EXPECT_LT(p, kTwoPi);
        EXPECT_NEAR(std::remainder(w - a, kTwoPi), 0.0, 1e-12);
        EXPECT_NEAR(std::remainder(p - a, kTwoPi), 0.0, 1e-12);
    }
}
