#include "support.hpp"

#include "bscatter/spectrum.hpp"

#include <gtest/gtest.h>

#include <map>

using namespace bscatter;
using bscatter::testing::Gen;
using bscatter::testing::load;

namespace {

DiagData small_diag(const Scene& s, int n, int threads = 1)
{
    DiagOptions o;
    o.resolution = n;
    o.threads = threads;
    return diag_spectrum(s, o);
}

}  // namespace

TEST(Parametrisation, InwardDirectionRoundTrip)
{
    const Scene s = load("empty");
    Gen gen(31);
    for (int i = 0; i < 1000; ++i) {
        const double th = gen.angle(), al = gen.uniform(-1.5, 1.5);
        const Vec d = inward_direction(s, th, al);
        EXPECT_NEAR(d.norm(), 1.0, 1e-15);
        EXPECT_GT(d.dot(s.s0.inward_normal(s.s0.point_at(th))), 0.0);
        EXPECT_NEAR(direction_offset(s, th, d), al, 1e-12);
    }
}

TEST(Spectrum, EmptySceneObeysChordLaw)
{
    const Scene s = load("empty");
    const SpectrumDataset d = sample_spectrum(s, 256, 256, {}, 1);
    ASSERT_EQ(d.samples.size(), 256u * 256u);
    for (const auto& x : d.samples) {
        EXPECT_EQ(x.k, 0);
        const double chord = (s.s0.point_at(x.x_angle) - s.s0.point_at(x.y_angle)).norm();
        EXPECT_NEAR(x.t, chord, 1e-12);
    }
    EXPECT_EQ(distinct_times_check(d, 1e-9).coincidences, 0);
}

TEST(Spectrum, TimesNeverBeatTheChord)
{
    const Scene s = load("ex11");
    const SpectrumDataset d = sample_spectrum(s, 256, 256, {}, 1);
    for (const auto& x : d.samples) {
        const double chord = (s.s0.point_at(x.x_angle) - s.s0.point_at(x.y_angle)).norm();
        EXPECT_GE(x.t, chord - 1e-12);
        if (x.k == 0)
            EXPECT_NEAR(x.t, chord, 1e-12);
    }
}

TEST(Spectrum, ThreadCountDoesNotChangeBytes)
{
    const Scene s = load("ex11");
    const std::string one = dataset_to_csv(sample_spectrum(s, 256, 256, {}, 1));
    const std::string four = dataset_to_csv(sample_spectrum(s, 256, 256, {}, 4));
    EXPECT_EQ(one, four);
    EXPECT_EQ(dataset_to_csv(diag_to_dataset(small_diag(s, 256, 1))),
              dataset_to_csv(diag_to_dataset(small_diag(s, 256, 3))));
}

TEST(Spectrum, CsvRoundTripIsExact)
{
    const Scene s = load("two_discs");
    SpectrumDataset d = sample_spectrum(s, 256, 256, {}, 0);
    const std::string csv = dataset_to_csv(d);
    SpectrumDataset back = dataset_from_csv(csv);
    apply_dataset_manifest(back, dataset_manifest_json(d));
    EXPECT_EQ(dataset_to_csv(back), csv);
    EXPECT_EQ(back.scene_hash, d.scene_hash);
    EXPECT_EQ(back.grid.x_res, 256);
    ASSERT_EQ(back.samples.size(), d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); i += 97)
        EXPECT_EQ(back.samples[i].t, d.samples[i].t);
}

TEST(Spectrum, MeasuredModeHidesOracleData)
{
    const Scene s = load("disc");
    const SpectrumDataset m = to_measured(sample_spectrum(s, 256, 256, {}, 0));
    EXPECT_EQ(m.mode, DataMode::Measured);
    for (const auto& x : m.samples) {
        EXPECT_EQ(x.k, -1);
        EXPECT_EQ(x.branch_id, -1);
        EXPECT_FALSE(x.u);
    }
}

TEST(Echograph, PointExamples)
{
    const Scene s = load("empty");
    EXPECT_LT((echo_point(s, kPi, 2.0) - planar(-3, 0)).norm(), 1e-15);
    EXPECT_LT((echo_point(s, kPi / 2, 8.0) - planar(0, 0)).norm(), 1e-15);
}

TEST(Echograph, DiscHeadOnReturn)
{
    const Scene s = load("disc");
    const DiagData d = small_diag(s, 256);
    const auto echo = echograph(s, d);
    bool found = false;
    for (const auto& e : echo) {
        if (e.cell != 128 || std::abs(e.t - 2.0) > 1e-9)
            continue;
        found = true;
        EXPECT_TRUE(e.reflexive);
        EXPECT_EQ(e.order, 1);
        EXPECT_LT((e.w - planar(-3, 0)).norm(), 1e-9);
    }
    EXPECT_TRUE(found);
}

// For a disc every x has a head-on return along the line through the center, with
// round trip 2(|x - c| - r). Its echograph point sits at half that distance along the
// inward normal of S0, which is the foot on the disc only when the chord is radial.
TEST(Echograph, DiscOrderOnePointsFollowClosedForm)
{
    const Scene s = load("disc");
    const DiagData d = small_diag(s, 256);
    const Vec c = s.bodies[0].center();
    int order_one = 0;
    for (const auto& e : echograph(s, d)) {
        if (!e.reflexive || e.order != 1)
            continue;
        ++order_one;
        const double t = 2.0 * ((e.x - c).norm() - 1.0);
        EXPECT_NEAR(e.t, t, 1e-9);
        EXPECT_LT((e.w - (e.x + 0.5 * t * s.s0.inward_normal(e.x))).norm(), 1e-9);
        if (e.cell == 0)
            EXPECT_LT((e.w - planar(-1, 0)).norm(), 1e-9);
    }
    EXPECT_EQ(order_one, 256);
}

TEST(Echograph, MeasuredReflexivityMatchesOracle)
{
    const Scene s = load("ex11");
    const DiagData oracle = small_diag(s, 256);
    const auto a = echograph(s, oracle);
    const auto b = echograph(s, to_measured(oracle));
    ASSERT_EQ(a.size(), b.size());
    std::map<std::pair<int, double>, bool> truth;
    for (const auto& e : a)
        truth[{e.cell, e.t}] = e.reflexive;
    long agree = 0, usable = 0;
    for (const auto& e : b) {
        EXPECT_EQ(e.order, -1);
        const auto it = truth.find({e.cell, e.t});
        ASSERT_NE(it, truth.end());
        if (!e.stencil_ok)
            continue;
        ++usable;
        agree += it->second == e.reflexive;
    }
    EXPECT_GT(usable, 0);
    EXPECT_GE(static_cast<double>(agree), 0.99 * usable);
}

TEST(DistinctTimes, DiscHasNoCoincidences)
{
    const SpectrumDataset d = sample_spectrum(load("disc"), 256, 512, {}, 0);
    const DistinctReport r = distinct_times_check(d, 1e-9);
    EXPECT_GE(r.cells, 10000);
    EXPECT_EQ(r.coincidences, 0);
    EXPECT_EQ(r.fraction, 0.0);
}

TEST(Probes, VacuousChordExamples)
{
    const Scene s = load("two_discs");
    const LiveChordProbe probe(s);
    const double tol = 1e-6 * s.scale();
    EXPECT_TRUE(probe.straight_time_present(kPi / 2, -kPi / 2, tol));
    EXPECT_FALSE(probe.straight_time_present(kPi, 0.0, tol));
}

TEST(Probes, DatasetProbeAgreesWithLiveProbe)
{
    const Scene s = load("two_discs");
    const SpectrumDataset d = sample_spectrum(s, 256, 1024, {}, 0);
    const DatasetChordProbe from_data(s, d, kTwoPi / 256);
    const LiveChordProbe live(s);
    const double tol = 1e-6 * s.scale();
    int checked = 0;
    for (int i = 0; i < 256; i += 8)
        for (int j = 0; j < 256; j += 8) {
            if (i == j)
                continue;
            const double tx = kTwoPi * i / 256, ty = kTwoPi * j / 256;
            const bool l = live.straight_time_present(tx, ty, tol);
            // Chords passing within a grid step of a body are resolved differently by
            // the direction grid; compare away from grazing.
            const Vec x = s.s0.point_at(tx), y = s.s0.point_at(ty);
            double clearance = 1e9;
            for (const auto& b : s.bodies) {
                const Vec c = b.center();
                const double t = std::clamp((c - x).dot(y - x) / (y - x).squaredNorm(), 0.0, 1.0);
                clearance = std::min(clearance, std::abs((x + t * (y - x) - c).norm() - 1.0));
            }
            if (clearance < 0.05)
                continue;
            try {
                EXPECT_EQ(from_data.straight_time_present(tx, ty, tol), l) << i << " " << j;
            }
            catch (const Error& e) {
                // Shadowed chords have no nearby exit at all.
                EXPECT_EQ(e.code(), ErrorCode::MissingCell);
                EXPECT_FALSE(l) << i << " " << j;
            }
            ++checked;
        }
    EXPECT_GT(checked, 500);
}
