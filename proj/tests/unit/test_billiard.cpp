#include "support.hpp"

#include "bscatter/spectrum.hpp"
#include "bscatter/verify.hpp"

#include <gtest/gtest.h>

using namespace bscatter;
using bscatter::testing::Gen;
using bscatter::testing::load;
using bscatter::testing::make_scene;

namespace {

/// Independent intersection oracle: march the ray in small steps until some body's
/// field changes sign, then bisect. Returns the length, or the S0 exit length.
double marching_oracle(const Scene& scene, const Vec& o, const Vec& d, int& body)
{
    const Vec oc = o - scene.s0.center;
    const double b = oc.dot(d);
    const double exit = -b + std::sqrt(b * b - oc.squaredNorm() + scene.s0.radius * scene.s0.radius);
    const double step = 1e-3;
    body = 0;
    for (double s = step; s < exit; s += step) {
        for (const auto& k : scene.bodies) {
            if (k.eval(o + s * d).value >= 0.0)
                continue;
            double lo = s - step, hi = s;
            for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                (k.eval(o + mid * d).value < 0.0 ? hi : lo) = mid;
            }
            body = k.id();
            return hi;
        }
    }
    return exit;
}

}  // namespace

TEST(FirstIntersection, DiscOnAxis)
{
    const Scene s = load("disc");
    const Hit h = first_intersection(s, planar(-4, 0), planar(1, 0));
    ASSERT_EQ(h.kind, Hit::Kind::Body);
    EXPECT_EQ(h.body_id, 1);
    EXPECT_LT((h.point - planar(-3, 0)).norm(), 1e-12);
    EXPECT_NEAR(h.length, 1.0, 1e-12);
}

TEST(FirstIntersection, EmptySceneDiameter)
{
    const Hit h = first_intersection(load("empty"), planar(-4, 0), planar(1, 0));
    ASSERT_EQ(h.kind, Hit::Kind::ExitS0);
    EXPECT_LT((h.point - planar(4, 0)).norm(), 1e-12);
    EXPECT_NEAR(h.length, 8.0, 1e-12);
}

TEST(FirstIntersection, AgreesWithMarchingOracle)
{
    Gen gen(21);
    for (int trial = 0; trial < 40; ++trial) {
        const Scene s = gen.scene();
        EntrySampler entries(s, 100 + trial);
        for (int i = 0; i < 10; ++i) {
            const PhasePoint e = entries.next();
            int body = 0;
            const double len = marching_oracle(s, e.x, e.u, body);
            const Hit h = first_intersection(s, e.x, e.u);
            // Grazing rays can cross a body between two march steps.
            if (body == 0 && h.kind == Hit::Kind::Body)
                continue;
            EXPECT_EQ(h.kind == Hit::Kind::Body ? h.body_id : 0, body);
            EXPECT_NEAR(h.length, len, 1e-9);
        }
    }
}

TEST(Reflect, Examples)
{
    EXPECT_LT((reflect(planar(1, 0), planar(-1, 0)) - planar(-1, 0)).norm(), 1e-15);
    const double c = std::sqrt(0.5);
    EXPECT_LT((reflect(planar(c, -c), planar(0, 1)) - planar(c, c)).norm(), 1e-15);
    EXPECT_THROW(reflect(planar(1, 0), planar(0, 1)), Error);
}

TEST(Reflect, IsAnIsometricInvolution)
{
    Gen gen(22);
    for (int i = 0; i < 10000; ++i) {
        const Vec n = gen.unit();
        Vec in = gen.unit();
        if (in.dot(n) > 0)
            in = -in;
        if (std::abs(in.dot(n)) < 1e-3)
            continue;
        const Vec out = reflect(in, n);
        EXPECT_NEAR(out.norm(), 1.0, 1e-15);
        EXPECT_NEAR(out.dot(n), -in.dot(n), 1e-15);
        EXPECT_NEAR(cross2(out, n), cross2(in, n), 1e-15);
        EXPECT_LT((reflect(-out, n) + in).norm(), 1e-15);
    }
}

TEST(Trace, RadialBounce)
{
    const Trajectory tr = trace(load("disc"), {planar(-4, 0), planar(1, 0)});
    ASSERT_EQ(tr.status, TraceStatus::Exited);
    ASSERT_EQ(tr.reflections.size(), 1u);
    EXPECT_LT((tr.reflections[0].point - planar(-3, 0)).norm(), 1e-12);
    ASSERT_TRUE(tr.exit);
    EXPECT_LT((tr.exit->x - planar(-4, 0)).norm(), 1e-12);
    EXPECT_LT((tr.exit->u - planar(-1, 0)).norm(), 1e-12);
    EXPECT_NEAR(tr.total_time, 2.0, 1e-12);
}

TEST(Trace, TwoDiscsAxisRayAndPeriodTwoOrbit)
{
    const Scene s = load("two_discs");
    const Trajectory tr = trace(s, {planar(-4, 0), planar(1, 0)});
    ASSERT_EQ(tr.status, TraceStatus::Exited);
    EXPECT_EQ(tr.reflections.size(), 1u);
    EXPECT_NEAR(tr.total_time, 2.0, 1e-12);

    const Trajectory trapped = trace_from_interior(s, planar(-1, 0), planar(1, 0));
    EXPECT_EQ(trapped.status, TraceStatus::BudgetTrapped);
    EXPECT_FALSE(trapped.exit);
}

TEST(Trace, ExactTangencyIsFlagged)
{
    // From (-4,0) the disc of radius 1 at (-2,0) subtends exactly 30 degrees.
    const Scene s = load("disc");
    const Trajectory tr = trace(s, {planar(-4, 0), inward_direction(s, kPi, -kPi / 6)});
    EXPECT_EQ(tr.status, TraceStatus::TangencyDetected);
    EXPECT_LT(tr.min_incidence, 1e-7);
}

// Random rays in random scenes: segment lengths add up, reflections obey the specular
// law on the boundary, and the reversed ray retraces the path.
TEST(Trace, RandomRaysAreReversible)
{
    Gen gen(23);
    long checked = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const Scene s = gen.scene();
        EntrySampler entries(s, 200 + trial);
        for (int i = 0; i < 30; ++i) {
            const Trajectory tr = trace(s, entries.next());
            if (tr.status != TraceStatus::Exited || tr.min_incidence < 1e-3)
                continue;
            double sum = 0.0;
            for (double l : tr.segment_lengths)
                sum += l;
            EXPECT_NEAR(sum, tr.total_time, 1e-12 * s.scale());
            for (const auto& r : tr.reflections) {
                const ConvexBody& b = s.body(r.body_id);
                EXPECT_LT(boundary_residual(b, r.point), 1e-9 * s.scale());
                EXPECT_LT((r.outgoing - reflect(r.incoming, outward_normal(b, r.point))).norm(),
                          1e-12);
            }
            const Trajectory back = trace(s, {tr.exit->x, -tr.exit->u});
            ASSERT_EQ(back.status, TraceStatus::Exited);
            EXPECT_EQ(back.reflections.size(), tr.reflections.size());
            EXPECT_NEAR(back.total_time, tr.total_time, 1e-8 * s.scale());
            EXPECT_LT((back.exit->x - tr.entry.x).norm(), 1e-8 * s.scale());
            ++checked;
        }
    }
    EXPECT_GT(checked, 500);
}

TEST(CrossSection, RadialEntryReturnsToItself)
{
    const Scene s = load("disc");
    const CrossSectionResult r = cross_section_map(s, {planar(-4, 0), planar(1, 0)});
    EXPECT_LT((r.exit.x - planar(-4, 0)).norm(), 1e-12);
}

TEST(Regularity, EmptySceneIsRegular)
{
    const Scene s = load("empty");
    Gen gen(24);
    for (int i = 0; i < 50; ++i) {
        const double th = gen.angle();
        const RegularityResult r =
            regularity_jacobian(s, s.s0.point_at(th), inward_direction(s, th, gen.uniform(-1.4, 1.4)));
        EXPECT_TRUE(r.regular);
        EXPECT_GT(std::abs(r.det), 0.0);
    }
}

TEST(Geodesics, ContinuationToOwnEndpointsIsIdentity)
{
    const Scene s = load("ex11");
    const auto gs = find_geodesics(s, 2.5, -1.0);
    ASSERT_FALSE(gs.empty());
    for (const auto& g : gs) {
        const auto c = continue_geodesic(s, g, g.theta_x, g.theta_y);
        ASSERT_TRUE(c);
        EXPECT_NEAR(c->t, g.t, 1e-12);
        EXPECT_NEAR(c->alpha, g.alpha, 1e-12);
        EXPECT_EQ(c->sequence, g.sequence);
    }
}

TEST(Geodesics, EmptySceneHasOnlyTheChord)
{
    const Scene s = load("empty");
    Gen gen(25);
    for (int i = 0; i < 20; ++i) {
        const double tx = gen.angle(), ty = tx + gen.uniform(0.3, kTwoPi - 0.3);
        const auto gs = find_geodesics(s, tx, ty);
        ASSERT_EQ(gs.size(), 1u);
        EXPECT_NEAR(gs[0].t, (s.s0.point_at(tx) - s.s0.point_at(ty)).norm(), 1e-12);
        EXPECT_TRUE(gs[0].sequence.empty());
    }
}

TEST(Geodesics, TwoPointContinuationKeepsSequence)
{
    const Scene s = load("ex11");
    const auto gs = find_geodesics(s, 2.5, -1.0);
    ASSERT_FALSE(gs.empty());
    int continued = 0;
    for (const Geodesic& g : gs) {
        // Long branches hug the trapped orbit and their windows are far narrower than
        // the step below.
        if (g.sequence.empty() || g.sequence.size() > 4 || g.trajectory.min_incidence < 0.3)
            continue;
        const Vec y = s.s0.point_at(g.theta_y - 2e-4);
        const Trajectory moved =
            two_point_continuation(s, g.trajectory, s.s0.point_at(g.theta_x + 2e-4), y);
        EXPECT_EQ(moved.body_sequence(), g.sequence);
        EXPECT_LT((moved.exit->x - y).norm(), 1e-9);
        ++continued;
    }
    EXPECT_GT(continued, 0);
}
