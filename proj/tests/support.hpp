#pragma once

#include "bscatter/scene.hpp"

#include <random>
#include <string>

namespace bscatter::testing {

inline std::string scene_path(const std::string& name)
{
    return std::string(BSCATTER_SCENE_DIR) + "/" + name + ".json";
}

inline Scene load(const std::string& name) { return load_scene_json(scene_path(name)); }

inline Scene make_scene(std::vector<ConvexBody> bodies, double radius = 4.0)
{
    Scene s;
    s.s0.radius = radius;
    s.bodies = std::move(bodies);
    return s;
}

/// Seeded generator for property tests.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    double angle() { return uniform(-kPi, kPi); }
    Vec unit() { const double a = angle(); return planar(std::cos(a), std::sin(a)); }

    /// Random ellipse (sometimes a disc) with id `id`, inside the disc of radius 3.
    ConvexBody body(int id, const Vec& center, double max_axis)
    {
        const double a = uniform(0.25, max_axis);
        if (uniform(0, 1) < 0.3)
            return ConvexBody::disc(id, center, a);
        const double b = uniform(0.2, a);
        return ConvexBody::ellipsoid(id, center, Vec(a, b, 1.0), uniform(-90, 90));
    }

    /// One or two disjoint random bodies well inside an S0 of radius 4.
    Scene scene()
    {
        for (;;) {
            const int m = integer(1, 2);
            std::vector<ConvexBody> bodies;
            if (m == 1) {
                bodies.push_back(body(1, planar(uniform(-1, 1), uniform(-1, 1)), 1.8));
            }
            else {
                const Vec d = unit();
                const double r = uniform(1.3, 2.0);
                bodies.push_back(body(1, -r * d, 1.1));
                bodies.push_back(body(2, r * d + 0.3 * perp(d) * uniform(-1, 1), 1.1));
            }
            Scene s = make_scene(std::move(bodies));
            if (validate_scene(s).empty() && separated(s))
                return s;
        }
    }

private:
    static bool separated(const Scene& s)
    {
        return s.bodies.size() < 2 || closest_points(s.bodies[0], s.bodies[1]).distance > 0.2;
    }

    std::mt19937_64 rng_;
};

}  // namespace bscatter::testing
