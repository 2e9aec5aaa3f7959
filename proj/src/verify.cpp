#include "bscatter/verify.hpp"

#include "bscatter/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace bscatter {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double median(std::vector<double> v)
{
    if (v.empty())
        return kNaN;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

/// A branch through a random regular, well-conditioned exiting ray with reflections.
struct Branch {
    Geodesic g;
};

bool make_branch(const Scene& scene, EntrySampler& sampler, Branch& out)
{
    const double theta = sampler.uniform(-kPi, kPi);
    const double alpha = sampler.uniform(-1.2, 1.2);
    const PhasePoint entry{scene.s0.point_at(theta), inward_direction(scene, theta, alpha)};
    Trajectory tr;
    try {
        tr = trace(scene, entry);
    }
    catch (const Error&) {
        return false;
    }
    if (tr.status != TraceStatus::Exited || tr.reflections.empty() || tr.min_incidence < 0.1)
        return false;
    const Vec nu_y = scene.s0.inward_normal(tr.exit->x);
    if (-tr.exit->u.dot(nu_y) < 0.1)
        return false;
    try {
        if (!regularity_jacobian(scene, entry.x, entry.u).regular)
            return false;
    }
    catch (const Error&) {
        return false;
    }
    Geodesic& g = out.g;
    g.theta_x = theta;
    g.theta_y = scene.s0.angle_of(tr.exit->x);
    g.alpha = alpha;
    g.t = tr.total_time;
    g.sequence = tr.body_sequence();
    g.trajectory = std::move(tr);
    return true;
}

double angle_between(const Vec& a, const Vec& b)
{
    return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace

bool CheckResult::pass() const
{
    if (failed)
        return false;
    return std::all_of(measures.begin(), measures.end(), [](const Measure& m) { return m.pass(); });
}

std::string CheckResult::summary() const
{
    std::string out;
    for (const auto& m : measures) {
        if (!out.empty())
            out += ", ";
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s %.3g %s %.3g", m.name.c_str(), m.value,
                      m.upper ? "<=" : ">=", m.limit);
        out += buf;
    }
    for (const auto& n : notes)
        out += (out.empty() ? "" : "; ") + n;
    return out;
}

EntrySampler::EntrySampler(const Scene& scene, std::uint64_t seed) : scene_(scene), rng_(seed) {}

double EntrySampler::uniform(double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
}

PhasePoint EntrySampler::next()
{
    const double theta = uniform(-kPi, kPi);
    const double alpha = uniform(-0.5 * kPi, 0.5 * kPi);
    return {scene_.s0.point_at(theta), inward_direction(scene_, theta, alpha)};
}

CheckResult check_scene_geometry(const Scene& scene, int points, std::uint64_t seed)
{
    CheckResult res;
    res.name = "scene_geometry";
    const double a = scene.scale();
    const double eps = 1e-6 * a;
    double normal_dev = 0.0;
    double min_curv = std::numeric_limits<double>::infinity();
    long sign_fail = 0, nonconvex = 0;
    for (const auto& b : scene.bodies) {
        for (const Vec& p : boundary_samples(b, scene.dim, 720)) {
            const ImplicitValue f = b.eval(p);
            const Vec n = outward_normal(b, p);
            normal_dev = std::max(normal_dev, (n - f.gradient.normalized()).norm());
            if (b.eval(p + eps * n).value <= 0.0 || b.eval(p - eps * n).value >= 0.0)
                ++sign_fail;
            try {
                min_curv = std::min(min_curv, boundary_curvature(b, p));
            }
            catch (const Error&) {
                ++nonconvex;
            }
        }
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double grad_err = 0.0;
    const double h = 1e-5 * a;
    for (int i = 0; i < points && !scene.bodies.empty(); ++i) {
        const ConvexBody& b = scene.bodies[static_cast<std::size_t>(i) % scene.bodies.size()];
        Vec p = scene.s0.center + a * Vec(u(rng), u(rng), scene.dim == 3 ? u(rng) : 0.0);
        const Vec g = b.eval(p).gradient;
        Vec fd = Vec::Zero();
        for (int d = 0; d < scene.dim; ++d) {
            Vec e = Vec::Zero();
            e[d] = h;
            fd[d] = (b.eval(p + e).value - b.eval(p - e).value) / (2.0 * h);
        }
        if (g.norm() > 1e-8)
            grad_err = std::max(grad_err, (fd - g).norm() / g.norm());
    }
    res.add("normal_vs_gradient", normal_dev, 1e-12);
    res.add("sign_failures", static_cast<double>(sign_fail), 0.0);
    res.add("nonconvex_points", static_cast<double>(nonconvex), 0.0);
    if (!scene.bodies.empty())
        res.add("min_curvature", min_curv, 0.0, false);
    res.add("fd_gradient_rel", grad_err, 1e-6);
    const auto violations = validate_scene(scene);
    res.add("scene_violations", static_cast<double>(violations.size()), 0.0);
    for (const auto& v : violations)
        res.notes.push_back(v.kind + ": " + v.detail);
    return res;
}

CheckResult check_reflection_suite(const Scene& scene, int rays, std::uint64_t seed,
                                   const TraceLimits& limits)
{
    CheckResult res;
    res.name = "reflection_suite";
    const double a = scene.scale();
    EntrySampler sampler(scene, seed);
    double specular = 0.0, speed = 0.0, additivity = 0.0, reversal = 0.0, on_boundary = 0.0;
    long sequence_mismatch = 0, reverse_failed = 0, obstructed = 0, reflections = 0;
    int collected = 0;
    for (long attempts = 0; collected < rays && attempts < 100L * rays; ++attempts) {
        const PhasePoint entry = sampler.next();
        Trajectory tr;
        try {
            tr = trace(scene, entry, limits);
        }
        catch (const Error&) {
            continue;
        }
        if (tr.status != TraceStatus::Exited)
            continue;
        ++collected;
        reflections += static_cast<long>(tr.reflections.size());
        speed = std::max({speed, std::abs(tr.entry.u.norm() - 1.0),
                          std::abs(tr.exit->u.norm() - 1.0)});
        for (const auto& r : tr.reflections) {
            const ConvexBody& body = scene.body(r.body_id);
            const Vec n = outward_normal(body, r.point);
            const Vec expect = r.incoming - 2.0 * r.incoming.dot(n) * n;
            specular = std::max(specular, (r.outgoing - expect).norm());
            speed = std::max({speed, std::abs(r.incoming.norm() - 1.0),
                              std::abs(r.outgoing.norm() - 1.0)});
            on_boundary = std::max(on_boundary, boundary_residual(body, r.point) / a);
        }
        const auto verts = tr.vertices();
        double len = 0.0;
        for (std::size_t i = 1; i < verts.size(); ++i) {
            len += (verts[i] - verts[i - 1]).norm();
            const Vec mid = 0.5 * (verts[i] + verts[i - 1]);
            for (const auto& b : scene.bodies)
                if (b.eval(mid).value <= 0.0)
                    ++obstructed;
        }
        additivity = std::max(additivity, std::abs(tr.total_time - len) / a);

        Trajectory back;
        try {
            back = trace(scene, {tr.exit->x, -tr.exit->u}, limits);
        }
        catch (const Error&) {
            ++reverse_failed;
            continue;
        }
        if (back.status != TraceStatus::Exited) {
            ++reverse_failed;
            continue;
        }
        auto seq = tr.body_sequence();
        std::reverse(seq.begin(), seq.end());
        if (back.body_sequence() != seq)
            ++sequence_mismatch;
        reversal = std::max({reversal, (back.exit->x - entry.x).norm() / a,
                             (back.exit->u + entry.u).norm(),
                             std::abs(back.total_time - tr.total_time) / a});
    }
    res.add("rays", collected, rays, false);
    res.add("specular", specular, 1e-12);
    res.add("unit_speed", speed, 1e-12);
    res.add("additivity_rel", additivity, 1e-10);
    res.add("time_reversal_rel", reversal, 1e-8);
    res.add("reversal_failures", static_cast<double>(reverse_failed + sequence_mismatch), 0.0);
    res.add("on_boundary_rel", on_boundary, 1e-9);
    res.add("obstructed_segments", static_cast<double>(obstructed), 0.0);
    res.notes.push_back(std::to_string(reflections) + " reflections checked");
    return res;
}

CheckResult check_travel_time_derivative(const Scene& scene, int branches, double h,
                                         std::uint64_t seed)
{
    CheckResult res;
    res.name = "travel_time_derivative";
    const double a = scene.scale();
    EntrySampler sampler(scene, seed);
    double err_h = 0.0, err_h5 = 0.0;
    std::vector<double> orders;
    int done = 0;
    long lost = 0;
    for (long attempts = 0; done < branches && attempts < 200L * branches; ++attempts) {
        Branch br;
        if (!make_branch(scene, sampler, br))
            continue;
        const Geodesic& g = br.g;
        const double phi = sampler.uniform(-kPi, kPi);
        const double ca = std::cos(phi), cb = std::sin(phi);
        const Vec av = a * ca * BoundingSphere::tangent_at(g.theta_x);
        const Vec bv = a * cb * BoundingSphere::tangent_at(g.theta_y);
        const double exact = g.v().dot(bv) - g.u().dot(av);
        double err[2];
        bool ok = true;
        for (int s = 0; s < 2 && ok; ++s) {
            const double step = s == 0 ? h : h / 5.0;
            const auto p = continue_geodesic(scene, g, g.theta_x + step * ca, g.theta_y + step * cb);
            const auto m = continue_geodesic(scene, g, g.theta_x - step * ca, g.theta_y - step * cb);
            if (!p || !m) {
                ok = false;
                break;
            }
            err[s] = std::abs((p->t - m->t) / (2.0 * step) - exact);
        }
        if (!ok) {
            ++lost;
            continue;
        }
        ++done;
        err_h = std::max(err_h, err[0]);
        err_h5 = std::max(err_h5, err[1]);
        // Only branches whose truncation error stands clear of rounding show the order.
        if (err[0] > 1e-8)
            orders.push_back(std::log(err[0] / std::max(err[1], 1e-300)) / std::log(5.0));
    }
    res.add("branches", done, branches, false);
    res.add("max_err_h", err_h, 1e-5);
    res.add("max_err_h_over_5", err_h5, 4e-7);
    res.add("median_observed_order", orders.empty() ? kNaN : median(orders), 1.8, false);
    res.notes.push_back(std::to_string(orders.size()) + " branches above the rounding floor, "
                        + std::to_string(lost) + " lost inside the stencil");
    return res;
}

CheckResult check_direction_recovery(const Scene& scene, int branches, double h,
                                     std::uint64_t seed)
{
    CheckResult res;
    res.name = "direction_recovery";
    EntrySampler sampler(scene, seed);
    double err = 0.0, unit = 0.0;
    long sign_fail = 0;
    int done = 0;
    for (long attempts = 0; done < branches && attempts < 200L * branches; ++attempts) {
        Branch br;
        if (!make_branch(scene, sampler, br))
            continue;
        Directions d;
        try {
            d = recover_directions(scene.s0, make_patch(scene, br.g, h));
        }
        catch (const Error&) {
            continue;
        }
        ++done;
        err = std::max({err, angle_between(d.u, br.g.u()), angle_between(d.v, br.g.v())});
        unit = std::max({unit, std::abs(d.u.norm() - 1.0), std::abs(d.v.norm() - 1.0)});
        const Vec x = scene.s0.point_at(br.g.theta_x), y = scene.s0.point_at(br.g.theta_y);
        if (d.u.dot(scene.s0.inward_normal(x)) <= 0.0 || d.v.dot(scene.s0.inward_normal(y)) >= 0.0)
            ++sign_fail;
    }
    res.add("branches", done, branches, false);
    res.add("max_angle_error", err, 1e-4);
    res.add("unit_length", unit, 1e-12);
    res.add("sign_failures", static_cast<double>(sign_fail), 0.0);
    return res;
}

CheckResult check_spectrum_invariants(const Scene& scene, const SpectrumDataset& data,
                                      const std::vector<EchoPoint>& echo)
{
    CheckResult res;
    res.name = "spectrum_invariants";
    const double a = scene.scale();
    long below_chord = 0, count_mismatch = 0;
    for (const auto& s : data.samples) {
        const double chord =
            (scene.s0.point_at(s.x_angle) - scene.s0.point_at(s.y_angle)).norm();
        if (s.t < chord - 1e-9)
            ++below_chord;
        if (s.k >= 0 && ((s.k == 0) != (std::abs(s.t - chord) <= 1e-9)))
            ++count_mismatch;
    }
    double echo_dev = 0.0;
    for (const auto& e : echo)
        echo_dev = std::max(echo_dev, std::abs((e.w - e.x).norm() - 0.5 * e.t) / a);
    res.add("samples", static_cast<double>(data.samples.size()), 1.0, false);
    res.add("below_chord", static_cast<double>(below_chord), 0.0);
    res.add("straight_iff_k0_failures", static_cast<double>(count_mismatch), 0.0);
    res.add("echo_distance_rel", echo_dev, 1e-12);
    return res;
}

CheckResult check_distinct_times(const SpectrumDataset& data, double tol, long min_cells)
{
    CheckResult res;
    res.name = "distinct_times";
    const DistinctReport rep = distinct_times_check(data, tol);
    res.add("cells", static_cast<double>(rep.cells), static_cast<double>(min_cells), false);
    res.add("coincidence_fraction", rep.fraction, 0.0);
    res.notes.push_back(std::to_string(rep.pairs) + " distinct-branch pairs in "
                        + std::to_string(rep.cells_with_pairs) + " cells");
    return res;
}

CheckResult check_trapped(const Scene& scene, int entries, std::uint64_t seed,
                          const TraceLimits& limits)
{
    CheckResult res;
    res.name = "trapped_detection";
    if (scene.bodies.size() >= 2) {
        const ClosestPair cp = closest_points(scene.bodies[0], scene.bodies[1]);
        const Trajectory tr =
            trace_from_interior(scene, cp.on_a, (cp.on_b - cp.on_a).normalized(), limits);
        auto round = [](const ConvexBody& b) {
            return b.kind() == ConvexBody::Kind::Ellipsoid
                   && b.semi_axes().x() == b.semi_axes().y();
        };
        const double escaped = tr.status == TraceStatus::BudgetTrapped ? 0.0 : 1.0;
        if (round(scene.bodies[0]) && round(scene.bodies[1]))
            res.add("period2_orbit_escapes", escaped, 0.0);
        else
            res.notes.push_back("period-2 orbit "
                                + std::string(escaped > 0 ? "escaped after " : "held for ")
                                + std::to_string(tr.reflections.size())
                                + " reflections (unstable orbit, not gated for non-discs)");
    }
    EntrySampler sampler(scene, seed);
    long trapped = 0, tangent = 0;
    for (int i = 0; i < entries; ++i) {
        try {
            const Trajectory tr = trace(scene, sampler.next(), limits);
            if (tr.status == TraceStatus::BudgetTrapped)
                ++trapped;
            else if (tr.status == TraceStatus::TangencyDetected)
                ++tangent;
        }
        catch (const Error&) {
            ++trapped;
        }
    }
    res.add("entries", entries, 1.0, false);
    res.add("entries_misclassified_trapped", static_cast<double>(trapped), 0.0);
    res.notes.push_back(std::to_string(tangent) + " entries flagged tangent");
    return res;
}

CheckResult check_single_convex(const Scene& scene, const DiagData& oracle_diag,
                                double max_hausdorff)
{
    CheckResult res;
    res.name = "single_convex_reconstruct";
    if (scene.bodies.size() != 1) {
        res.failed = true;
        res.notes.push_back("scene must have exactly one body");
        return res;
    }
    const ConvexBody& body = scene.bodies[0];
    std::vector<ConvexCloudPoint> cloud;
    try {
        cloud = single_convex_reconstruct(scene.s0, to_measured(oracle_diag));
    }
    catch (const Error& e) {
        res.failed = true;
        res.notes.push_back(e.what());
        return res;
    }
    double hausdorff = 0.0, nearest = 0.0, normal = 0.0;
    for (const auto& p : cloud) {
        hausdorff = std::max(hausdorff, (nearest_boundary_point(body, p.z) - p.z).norm());
        const Vec foot = nearest_boundary_point(body, scene.s0.point_at(p.theta));
        nearest = std::max(nearest, (foot - p.z).norm());
        normal = std::max(normal, angle_between(p.normal, outward_normal(body, foot)));
    }
    res.add("points", static_cast<double>(cloud.size()), 1.0, false);
    res.add("hausdorff", hausdorff, max_hausdorff);
    res.add("nearest_point_error", nearest, max_hausdorff);
    res.add("normal_error_rad", normal, 1e-3);
    return res;
}

double support_value(const ConvexBody& body, const Vec& e)
{
    if (body.kind() == ConvexBody::Kind::Ellipsoid) {
        const Vec s2 = body.semi_axes().cwiseProduct(body.semi_axes());
        const Vec le = body.rotation().transpose() * e;
        return body.center().dot(e) + std::sqrt(le.cwiseProduct(le).dot(s2));
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const Vec& p : boundary_samples(body, 2, 20000))
        best = std::max(best, p.dot(e));
    return best;
}

CheckResult check_hull(const Scene& scene, int directions, double tol, int threads)
{
    CheckResult res;
    res.name = "hull_support";
    const LiveChordProbe probe(scene);
    HullOptions ho;
    ho.directions = directions;
    ho.threads = threads;
    const HullResult hull = convex_hull_recover(scene.s0, probe, ho);
    double err = 0.0;
    long missing = 0;
    for (std::size_t i = 0; i < hull.phi.size(); ++i) {
        const Vec e = planar(std::cos(hull.phi[i]), std::sin(hull.phi[i]));
        double expect = -std::numeric_limits<double>::infinity();
        for (const auto& b : scene.bodies)
            expect = std::max(expect, support_value(b, e) - scene.s0.center.dot(e));
        if (std::isnan(hull.support[i])) {
            ++missing;
            continue;
        }
        err = std::max(err, std::abs(hull.support[i] - expect));
    }
    res.add("directions", static_cast<double>(hull.phi.size()), directions, false);
    res.add("max_support_error", err, tol);
    res.add("missing_directions", static_cast<double>(missing), 0.0);
    return res;
}

CheckResult check_separating_line(const Scene& scene, const VacuousOptions& opts)
{
    CheckResult res;
    res.name = "separating_line";
    const LiveChordProbe probe(scene);
    const VacuousReport rep = vacuous_components(scene.s0, probe, opts);
    res.add("found", rep.separating ? 1.0 : 0.0, 1.0, false);
    if (!rep.separating || scene.bodies.size() < 2)
        return res;
    const SeparatingLine& H = *rep.separating;
    const double level = H.point.dot(H.normal);
    double side[2], gap[2];
    for (int i = 0; i < 2; ++i) {
        const double hi = support_value(scene.bodies[i], H.normal) - level;
        const double lo = -support_value(scene.bodies[i], -H.normal) - level;
        side[i] = lo > 0.0 ? 1.0 : (hi < 0.0 ? -1.0 : 0.0);
        gap[i] = std::max(lo, -hi);
    }
    const double margin = side[0] * side[1] < 0.0 ? std::min(gap[0], gap[1]) : -1.0;
    res.add("separation_margin", margin, 0.0, false);
    res.notes.push_back(std::to_string(rep.components.size()) + " vacuous components");
    return res;
}

CheckResult check_seeds(const Scene& scene, const DiagData& measured_diag,
                        const std::optional<SeparatingLine>& line, double tol)
{
    CheckResult res;
    res.name = "seeds";
    Seeds seeds;
    try {
        seeds = seed_first_body(scene.s0, measured_diag);
        if (line)
            seed_second_body(scene.s0, measured_diag, line, seeds);
    }
    catch (const Error& e) {
        res.failed = true;
        res.notes.push_back(e.what());
        return res;
    }
    auto dist = [&](const Vec& p) {
        double d = std::numeric_limits<double>::infinity();
        for (const auto& b : scene.bodies)
            d = std::min(d, (nearest_boundary_point(b, p) - p).norm());
        return d;
    };
    const Vec w = echo_point(scene, seeds.theta_K, seeds.rho_K);
    const Vec formula = seeds.x_K + 0.5 * seeds.rho_K * scene.s0.inward_normal(seeds.x_K);
    res.add("zK_to_boundary", dist(seeds.z_K), tol);
    res.add("w_xK_minus_zK", (w - seeds.z_K).norm(), tol);
    res.add("zK_formula", (formula - seeds.z_K).norm(), 1e-12 * scene.scale());
    if (seeds.has_second)
        res.add("z2_to_boundary", dist(seeds.z2), tol);
    return res;
}

CheckResult check_reconstruction(const Scene& scene, const ReconstructionState& st,
                                 double max_hausdorff, double min_coverage)
{
    CheckResult res;
    res.name = "reconstruction";
    const ValidationReport v = validate_reconstruction(scene, st);
    res.add("depth", st.depth, 2.0, false);
    res.add("hausdorff", v.hausdorff, max_hausdorff);
    res.add("coverage", v.coverage, min_coverage, false);
    res.add("audit_violations", static_cast<double>(v.audit_violations), 0.0);
    res.notes.push_back(std::to_string(v.audit_checked) + " reflections audited");
    for (const auto& d : v.details)
        res.notes.push_back(d);
    return res;
}

std::string checks_to_json(const std::vector<CheckResult>& checks, const std::string& scene_hash,
                           const std::string& config_hash)
{
    nlohmann::ordered_json j;
    j["scene_hash"] = scene_hash;
    j["config_hash"] = config_hash;
    bool all = true;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
        nlohmann::ordered_json jc;
        jc["name"] = c.name;
        jc["pass"] = c.pass();
        all = all && c.pass();
        auto ms = nlohmann::ordered_json::array();
        for (const auto& m : c.measures)
            ms.push_back({{"name", m.name},
                          {"value", m.value},
                          {"limit", m.limit},
                          {"relation", m.upper ? "<=" : ">="},
                          {"pass", m.pass()}});
        jc["measures"] = ms;
        jc["notes"] = c.notes;
        arr.push_back(jc);
    }
    j["pass"] = all;
    j["checks"] = arr;
    return j.dump(2) + "\n";
}

}  // namespace bscatter
