#include "bscatter/directions.hpp"

#include "bscatter/io.hpp"
#include "bscatter/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <numeric>

namespace bscatter {

BranchPatch make_patch(const Scene& scene, const Geodesic& g, double h)
{
    BranchPatch p;
    p.theta_x = g.theta_x;
    p.theta_y = g.theta_y;
    p.h = h;
    p.t0 = g.t;
    p.branch_id = branch_hash(g.sequence);
    auto at = [&](double dx, double dy) {
        const auto c = continue_geodesic(scene, g, g.theta_x + dx, g.theta_y + dy);
        if (!c)
            throw Error(ErrorCode::BranchBroken, "branch lost inside the stencil");
        return c->t;
    };
    p.t_xm = at(-h, 0.0);
    p.t_xp = at(h, 0.0);
    p.t_ym = at(0.0, -h);
    p.t_yp = at(0.0, h);
    return p;
}

BranchPatch make_patch(const TimeSource& source, const BoundingSphere& s0, double theta_x,
                       double theta_y, double t0, double h, double factor)
{
    BranchPatch p;
    p.theta_x = theta_x;
    p.theta_y = theta_y;
    p.h = h;
    p.t0 = t0;
    const double a = s0.radius;
    if (!stencil_pair(source.times(theta_x - h, theta_y), source.times(theta_x + h, theta_y),
                      t0, h, a, factor, p.t_xm, p.t_xp)
        || !stencil_pair(source.times(theta_x, theta_y - h),
                         source.times(theta_x, theta_y + h), t0, h, a, factor, p.t_ym,
                         p.t_yp))
        throw Error(ErrorCode::BranchBroken, "no time-continuous stencil pair");
    return p;
}

namespace {

Vec complete(double tangential, const Vec& tau, const Vec& nu, const char* what)
{
    if (std::abs(tangential) > 1.0 - 1e-8)
        throw Error(ErrorCode::NearNormalAmbiguity, what);
    return tangential * tau + std::sqrt(1.0 - tangential * tangential) * nu;
}

}  // namespace

Directions recover_directions(const BoundingSphere& s0, const BranchPatch& patch)
{
    const double a = s0.radius;
    const double dtx = (patch.t_xp - patch.t_xm) / (2.0 * patch.h);
    const double dty = (patch.t_yp - patch.t_ym) / (2.0 * patch.h);
    const Vec x = s0.point_at(patch.theta_x);
    const Vec y = s0.point_at(patch.theta_y);
    Directions d;
    // dT = <v, dy> - <u, dx> with dx = a tau dtheta.
    d.u = complete(-dtx / a, BoundingSphere::tangent_at(patch.theta_x), s0.inward_normal(x),
                   "entry direction nearly tangent to S0");
    d.v = complete(dty / a, BoundingSphere::tangent_at(patch.theta_y), -s0.inward_normal(y),
                   "exit direction nearly tangent to S0");
    return d;
}

Vec recover_reflexive_direction(const BoundingSphere& s0, double theta, double slope)
{
    const Vec x = s0.point_at(theta);
    return complete(0.5 * slope / s0.radius, BoundingSphere::tangent_at(theta),
                    -s0.inward_normal(x), "reflexive direction nearly tangent to S0");
}

std::vector<ConvexCloudPoint> single_convex_reconstruct(const BoundingSphere& s0,
                                                        const DiagData& data,
                                                        double lipschitz_factor)
{
    std::vector<ConvexCloudPoint> out;
    for (const auto& c : data.cells) {
        if (c.t0.empty())
            continue;
        const double f = *std::min_element(c.t0.begin(), c.t0.end());
        double tm = 0.0, tp = 0.0;
        if (!stencil_pair(c.mm, c.pp, f, data.stencil_h, s0.radius, lipschitz_factor, tm, tp))
            continue;
        const double slope = (tp - tm) / (2.0 * data.stencil_h);
        Vec u;
        try {
            u = recover_reflexive_direction(s0, c.theta, slope);
        }
        catch (const Error&) {
            continue;
        }
        ConvexCloudPoint p;
        p.theta = c.theta;
        p.z = s0.point_at(c.theta) - 0.5 * f * u;
        p.normal = u;
        out.push_back(p);
    }
    if (out.empty())
        throw Error(ErrorCode::EmptyDiagonal, "no diagonal returns to reconstruct from");
    return out;
}

bool vacuous_line_test(const ChordProbe& probe, double theta_x, double theta_y, double tol)
{
    return probe.straight_time_present(theta_x, theta_y, tol);
}

bool line_chord(const BoundingSphere& s0, double phi, double p, double& theta_x,
                double& theta_y)
{
    const double a = s0.radius;
    if (std::abs(p) >= a)
        return false;
    const double half = std::sqrt(a * a - p * p);
    const Vec e = planar(std::cos(phi), std::sin(phi));
    const Vec f = perp(e);
    const Vec x = s0.center + p * e - half * f;
    const Vec y = s0.center + p * e + half * f;
    theta_x = s0.angle_of(x);
    theta_y = s0.angle_of(y);
    return true;
}

namespace {

bool line_vacuous(const BoundingSphere& s0, const ChordProbe& probe, double phi, double p,
                  double tol)
{
    double tx = 0.0, ty = 0.0;
    if (!line_chord(s0, phi, p, tx, ty))
        return true;
    return probe.straight_time_present(tx, ty, tol);
}

}  // namespace

HullResult convex_hull_recover(const BoundingSphere& s0, const ChordProbe& probe,
                               const HullOptions& opts)
{
    if (s0.center.z() != 0.0)
        throw Error(ErrorCode::InvalidArgument, "hull recovery is planar only");
    const int n = opts.directions;
    const double a = s0.radius;
    const double tol = opts.tol_factor * a;
    const double step = a / opts.offset_steps;
    HullResult out;
    out.phi.resize(n);
    out.support.resize(n);
    parallel_for(static_cast<std::size_t>(n), opts.threads, [&](std::size_t i) {
        const double phi = kTwoPi * static_cast<double>(i) / n;
        out.phi[i] = phi;
        double last_vacuous = a;
        double hit = std::numeric_limits<double>::quiet_NaN();
        for (int j = 1; a - j * step > -a; ++j) {
            const double p = a - j * step;
            if (!line_vacuous(s0, probe, phi, p, tol)) {
                hit = p;
                break;
            }
            last_vacuous = p;
        }
        if (std::isnan(hit)) {
            out.support[i] = hit;
            return;
        }
        double lo = hit, hi = last_vacuous;
        for (int it = 0; it < 48 && hi - lo > 1e-13 * a; ++it) {
            const double mid = 0.5 * (lo + hi);
            (line_vacuous(s0, probe, phi, mid, tol) ? hi : lo) = mid;
        }
        out.support[i] = 0.5 * (lo + hi);
    });
    for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        if (std::isnan(out.support[i]) || std::isnan(out.support[j]))
            continue;
        const double c1 = std::cos(out.phi[i]), s1 = std::sin(out.phi[i]);
        const double c2 = std::cos(out.phi[j]), s2 = std::sin(out.phi[j]);
        const double det = c1 * s2 - s1 * c2;
        if (std::abs(det) < 1e-15)
            continue;
        const double h1 = out.support[i], h2 = out.support[j];
        out.polyline.push_back(s0.center
                               + planar((h1 * s2 - h2 * s1) / det, (c1 * h2 - c2 * h1) / det));
    }
    return out;
}

namespace {

struct DisjointSet {
    std::vector<int> parent;
    explicit DisjointSet(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x)
    {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(int a, int b)
    {
        a = find(a);
        b = find(b);
        if (a != b)
            parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

VacuousReport vacuous_components(const BoundingSphere& s0, const ChordProbe& probe,
                                 const VacuousOptions& opts)
{
    const int nf = opts.n_phi;
    const int np = opts.n_p;
    const double a = s0.radius;
    const double tol = opts.tol_factor * a;
    auto phi_of = [&](int i) { return kPi * i / nf; };
    auto p_of = [&](int j) { return -a + 2.0 * a * (j + 0.5) / np; };
    std::vector<char> vac(static_cast<std::size_t>(nf) * np, 0);
    parallel_for(static_cast<std::size_t>(nf), opts.threads, [&](std::size_t i) {
        for (int j = 0; j < np; ++j)
            vac[i * np + j] = line_vacuous(s0, probe, phi_of(static_cast<int>(i)), p_of(j), tol);
    });
    DisjointSet ds(nf * np);
    for (int i = 0; i < nf; ++i) {
        for (int j = 0; j < np; ++j) {
            const int id = i * np + j;
            if (!vac[id])
                continue;
            if (j + 1 < np && vac[id + 1])
                ds.unite(id, id + 1);
            const int ni = i + 1 < nf ? (i + 1) * np + j : np - 1 - j;
            if (vac[ni])
                ds.unite(id, ni);
        }
    }
    VacuousReport rep;
    rep.n_phi = nf;
    rep.n_p = np;
    std::vector<int> comp_of_root(nf * np, -1);
    for (int id = 0; id < nf * np; ++id) {
        if (!vac[id])
            continue;
        const int r = ds.find(id);
        if (comp_of_root[r] < 0) {
            comp_of_root[r] = static_cast<int>(rep.components.size());
            rep.components.push_back({comp_of_root[r], 0, false});
        }
        auto& c = rep.components[comp_of_root[r]];
        ++c.cells;
        const int j = id % np;
        if (j == 0 || j == np - 1)
            c.trivial = true;
    }
    int best = -1;
    for (const auto& c : rep.components)
        if (!c.trivial && (best < 0 || c.cells > rep.components[best].cells))
            best = c.id;
    if (best >= 0) {
        int best_row = -1, best_lo = 0, best_len = 0;
        for (int i = 0; i < nf; ++i) {
            int run = 0;
            for (int j = 0; j <= np; ++j) {
                const bool in = j < np && vac[i * np + j]
                                && comp_of_root[ds.find(i * np + j)] == best;
                if (in) {
                    ++run;
                    continue;
                }
                if (run > best_len) {
                    best_len = run;
                    best_row = i;
                    best_lo = j - run;
                }
                run = 0;
            }
        }
        SeparatingLine line;
        line.phi = phi_of(best_row);
        line.p = 0.5 * (p_of(best_lo) + p_of(best_lo + best_len - 1));
        line.normal = planar(std::cos(line.phi), std::sin(line.phi));
        line.point = s0.center + line.p * line.normal;
        rep.separating = line;
    }
    return rep;
}

std::string hull_to_csv(const HullResult& hull)
{
    std::string out = "phi_rad,support,vx,vy\n";
    for (std::size_t i = 0; i < hull.phi.size(); ++i) {
        out += format_double(hull.phi[i]) + ',' + format_double(hull.support[i]);
        if (i < hull.polyline.size())
            out += ',' + format_double(hull.polyline[i].x()) + ','
                   + format_double(hull.polyline[i].y());
        else
            out += ",,";
        out += '\n';
    }
    return out;
}

std::string vacuous_report_json(const VacuousReport& rep)
{
    nlohmann::ordered_json j;
    j["grid"] = {{"n_phi", rep.n_phi}, {"n_p", rep.n_p}};
    j["components"] = nlohmann::ordered_json::array();
    for (const auto& c : rep.components)
        j["components"].push_back({{"id", c.id}, {"cells", c.cells}, {"trivial", c.trivial}});
    if (rep.separating) {
        const auto& s = *rep.separating;
        j["separating_line"] = {{"point", {s.point.x(), s.point.y()}},
                                {"normal", {s.normal.x(), s.normal.y()}}};
    }
    else {
        j["separating_line"] = nullptr;
    }
    return j.dump(2) + "\n";
}

}  // namespace bscatter
