#include "bscatter/reconstruct.hpp"

#include "bscatter/io.hpp"
#include "bscatter/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

namespace bscatter {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct MinCandidate {
    int cell = 0;
    double theta = 0.0;
    double t = 0.0;
};

std::vector<double> cell_minima(const DiagData& diag)
{
    std::vector<double> m(diag.cells.size(), kInf);
    for (std::size_t i = 0; i < diag.cells.size(); ++i)
        for (double t : diag.cells[i].t0)
            if (t > 0.0)
                m[i] = std::min(m[i], t);
    return m;
}

// Local minima of the per-cell minimum time over the allowed cells, refined by a
// parabola through the three neighbouring grid values. Sorted by refined time.
std::vector<MinCandidate> refined_minima(const DiagData& diag, const std::vector<char>& allowed)
{
    const int n = static_cast<int>(diag.cells.size());
    const auto m = cell_minima(diag);
    const double step = kTwoPi / n;
    std::vector<MinCandidate> out;
    for (int i = 0; i < n; ++i) {
        if (!allowed[i] || !std::isfinite(m[i]))
            continue;
        const double fm = m[(i + n - 1) % n];
        const double fp = m[(i + 1) % n];
        if (!(m[i] <= fm && m[i] < fp))
            continue;
        MinCandidate c{i, diag.cells[i].theta, m[i]};
        const double denom = fm - 2.0 * m[i] + fp;
        if (std::isfinite(denom) && denom > 0.0) {
            const double delta = 0.5 * (fm - fp) / denom;
            c.theta = diag.cells[i].theta + delta * step;
            c.t = m[i] - 0.25 * (fm - fp) * delta;
        }
        out.push_back(c);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const MinCandidate& a, const MinCandidate& b) { return a.t < b.t; });
    return out;
}

void check_unique(const std::vector<MinCandidate>& mins, int n)
{
    if (mins.size() < 2)
        return;
    for (std::size_t j = 1; j < mins.size(); ++j) {
        if (mins[j].t - mins[0].t > 1e-9)
            break;
        const int d = std::abs(mins[j].cell - mins[0].cell);
        if (std::min(d, n - d) >= 2)
            throw Error(ErrorCode::NonUniqueMinimum,
                        "diagonal minimum attained at grid-separated points "
                            + std::to_string(mins[0].cell) + " and "
                            + std::to_string(mins[j].cell));
    }
}

}  // namespace

Seeds seed_first_body(const BoundingSphere& s0, const DiagData& diag)
{
    const int n = static_cast<int>(diag.cells.size());
    const auto mins = refined_minima(diag, std::vector<char>(n, 1));
    if (mins.empty())
        throw Error(ErrorCode::EmptyDiagonal, "no diagonal returns");
    check_unique(mins, n);
    Seeds s;
    s.rho_K = mins[0].t;
    s.theta_K = wrap_positive(mins[0].theta);
    s.x_K = s0.point_at(s.theta_K);
    s.z_K = s.x_K + 0.5 * s.rho_K * s0.inward_normal(s.x_K);
    return s;
}

void seed_second_body(const BoundingSphere& s0, const DiagData& diag,
                      const std::optional<SeparatingLine>& line, Seeds& seeds)
{
    if (!line)
        throw Error(ErrorCode::NoSeparatingLine, "the vacuous set has no separating component");
    const int n = static_cast<int>(diag.cells.size());
    const double side_k = (seeds.z_K - line->point).dot(line->normal);
    std::vector<char> allowed(n, 0);
    for (int i = 0; i < n; ++i) {
        const double side = (s0.point_at(diag.cells[i].theta) - line->point).dot(line->normal);
        allowed[i] = side * side_k < 0.0;
    }
    const auto mins = refined_minima(diag, allowed);
    if (mins.empty())
        throw Error(ErrorCode::NoSeparatingLine, "no diagonal returns beyond the separating line");
    // Beyond the separating line every minimum lies on the second body, so a tie (a body
    // symmetric about a line through the S0 centre) is resolved by the lowest cell index.
    int pick = 0;
    for (std::size_t j = 1; j < mins.size() && mins[j].t - mins[0].t <= 1e-9; ++j)
        if (mins[j].cell < mins[pick].cell)
            pick = static_cast<int>(j);
    seeds.has_second = true;
    seeds.tau2 = mins[pick].t;
    seeds.theta2 = wrap_positive(mins[pick].theta);
    seeds.x2 = s0.point_at(seeds.theta2);
    seeds.z2 = seeds.x2 + 0.5 * seeds.tau2 * s0.inward_normal(seeds.x2);
    seeds.H = line;
}

const char* to_string(Side s)
{
    switch (s) {
    case Side::Both: return "B";
    case Side::Left: return "L";
    case Side::Right: return "R";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Echograph segmentation
// ---------------------------------------------------------------------------

namespace {

struct Track {
    std::vector<int> pts;
    std::vector<double> ang;
    int last_cell = 0;
    int first_cell = 0;
    bool merged = false;
};

struct EndRef {
    int arc;
    int end;  // 0 first, 1 last
};

Vec z1_point(const BoundingSphere& s0, const EchoPoint& e)
{
    const Vec u = recover_reflexive_direction(s0, e.x_angle, e.slope);
    return e.x - 0.5 * e.t * u;
}

}  // namespace

Segmentation segment_echograph(const BoundingSphere& s0, std::vector<EchoPoint> echo,
                               const Seeds& seeds, int k_max, const SegmentOptions& opts)
{
    Segmentation seg;
    seg.echo = std::move(echo);
    const auto& E = seg.echo;
    const double a = s0.radius;
    int n = 0;
    for (const auto& e : E)
        n = std::max(n, e.cell + 1);
    if (n == 0)
        throw Error(ErrorCode::EmptyDiagonal, "empty echograph");
    // Grid size is recovered from the cell angles.
    for (const auto& e : E) {
        if (e.cell > 0) {
            n = static_cast<int>(std::lround(kTwoPi * e.cell / e.x_angle));
            break;
        }
    }
    const double dtheta = kTwoPi / n;
    std::vector<std::vector<int>> by_cell(n);
    for (int i = 0; i < static_cast<int>(E.size()); ++i)
        if (E[i].reflexive && E[i].stencil_ok)
            by_cell[E[i].cell].push_back(i);

    auto link_cost = [&](int from, int to, int gap) {
        const double d = gap * dtheta;
        const double pred = E[from].t + 0.5 * d * (E[from].slope + E[to].slope);
        const double et = std::abs(E[to].t - pred) / (opts.t_tol * a * gap);
        const double es = std::abs(E[to].slope - E[from].slope) / (opts.slope_tol * a * gap);
        return (et <= 1.0 && es <= 1.0) ? et + es : kInf;
    };

    std::vector<Track> tracks;
    for (int i = 0; i < n; ++i) {
        struct Cand {
            double cost;
            int track;
            int point;
        };
        std::vector<Cand> cands;
        for (int ti = 0; ti < static_cast<int>(tracks.size()); ++ti) {
            const int gap = i - tracks[ti].last_cell;
            if (gap < 1 || gap > opts.max_gap_cells + 1)
                continue;
            for (int p : by_cell[i]) {
                const double c = link_cost(tracks[ti].pts.back(), p, gap);
                if (std::isfinite(c))
                    cands.push_back({c, ti, p});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
            return x.cost < y.cost || (x.cost == y.cost && x.point < y.point);
        });
        std::vector<char> track_used(tracks.size(), 0);
        std::map<int, bool> point_used;
        for (const auto& c : cands) {
            if (track_used[c.track] || point_used[c.point])
                continue;
            track_used[c.track] = 1;
            point_used[c.point] = true;
            tracks[c.track].pts.push_back(c.point);
            tracks[c.track].ang.push_back(E[c.point].x_angle);
            tracks[c.track].last_cell = i;
        }
        for (int p : by_cell[i]) {
            if (point_used[p])
                continue;
            Track t;
            t.pts = {p};
            t.ang = {E[p].x_angle};
            t.first_cell = t.last_cell = i;
            tracks.push_back(std::move(t));
        }
    }
    // Join tracks across the angle origin.
    {
        struct Cand {
            double cost;
            int a, b;
        };
        std::vector<Cand> cands;
        for (int ta = 0; ta < static_cast<int>(tracks.size()); ++ta) {
            if (tracks[ta].last_cell < n - 1 - opts.max_gap_cells)
                continue;
            for (int tb = 0; tb < static_cast<int>(tracks.size()); ++tb) {
                if (ta == tb || tracks[tb].first_cell > opts.max_gap_cells)
                    continue;
                const int gap = tracks[tb].first_cell + n - tracks[ta].last_cell;
                const double c = link_cost(tracks[ta].pts.back(), tracks[tb].pts.front(), gap);
                if (std::isfinite(c))
                    cands.push_back({c, ta, tb});
            }
        }
        std::sort(cands.begin(), cands.end(),
                  [](const Cand& x, const Cand& y) { return x.cost < y.cost; });
        std::vector<char> used_a(tracks.size(), 0), used_b(tracks.size(), 0);
        for (const auto& c : cands) {
            if (used_a[c.a] || used_b[c.b] || tracks[c.a].merged || tracks[c.b].merged)
                continue;
            used_a[c.a] = used_b[c.b] = 1;
            auto& A = tracks[c.a];
            auto& B = tracks[c.b];
            for (std::size_t j = 0; j < B.pts.size(); ++j) {
                A.pts.push_back(B.pts[j]);
                A.ang.push_back(B.ang[j] + kTwoPi);
            }
            B.merged = true;
        }
    }
    for (auto& t : tracks) {
        if (t.merged || static_cast<int>(t.pts.size()) < opts.min_points)
            continue;
        EchoArc arc;
        arc.id = static_cast<int>(seg.arcs.size());
        arc.points = std::move(t.pts);
        arc.angles = std::move(t.ang);
        seg.arcs.push_back(std::move(arc));
    }

    // Cusp candidates: two arc ends extending in the same direction from nearly the
    // same (x, t) with matching slopes.
    auto end_point = [&](const EndRef& r) {
        const auto& arc = seg.arcs[r.arc];
        return r.end == 0 ? arc.points.front() : arc.points.back();
    };
    auto end_angle = [&](const EndRef& r) {
        const auto& arc = seg.arcs[r.arc];
        return r.end == 0 ? arc.angles.front() : arc.angles.back();
    };
    auto cusp_cost = [&](const EndRef& p, const EndRef& q) {
        if (p.end != q.end || p.arc == q.arc)
            return kInf;
        const double dth = wrap_angle(end_angle(p) - end_angle(q));
        if (std::abs(dth) > (opts.cusp_cells + 0.5) * dtheta)
            return kInf;
        const auto& ep = E[end_point(p)];
        const auto& eq = E[end_point(q)];
        const double et = std::abs(ep.t - eq.t - 0.5 * (ep.slope + eq.slope) * dth)
                          / (opts.cusp_t_tol * a);
        const double es = std::abs(ep.slope - eq.slope) / (opts.cusp_slope_tol * a);
        return (et <= 1.0 && es <= 1.0) ? et + es : kInf;
    };
    const int narcs = static_cast<int>(seg.arcs.size());
    std::vector<std::vector<std::pair<double, EndRef>>> cand(2 * narcs);
    for (int p = 0; p < narcs; ++p)
        for (int pe = 0; pe < 2; ++pe)
            for (int q = 0; q < narcs; ++q)
                for (int qe = 0; qe < 2; ++qe) {
                    const double c = cusp_cost({p, pe}, {q, qe});
                    if (std::isfinite(c))
                        cand[2 * p + pe].push_back({c, {q, qe}});
                }
    for (auto& c : cand)
        std::sort(c.begin(), c.end(), [](const auto& x, const auto& y) {
            return x.first < y.first || (x.first == y.first && x.second.arc < y.second.arc);
        });
    auto ambiguous = [&](int slot) {
        const auto& c = cand[slot];
        return c.size() >= 2 && c[1].first < 2.0 * c[0].first + 0.05;
    };
    for (int p = 0; p < narcs; ++p) {
        for (int pe = 0; pe < 2; ++pe) {
            const auto& c = cand[2 * p + pe];
            if (c.empty())
                continue;
            const EndRef q = c[0].second;
            const auto& back = cand[2 * q.arc + q.end];
            if (!back.empty() && back[0].second.arc == p && back[0].second.end == pe) {
                seg.arcs[p].link[pe] = q.arc;
                seg.arcs[p].link_end[pe] = q.end;
            }
        }
    }

    // Level-1 arcs contain the seeds.
    auto arc_at = [&](double theta, double t) {
        int best = -1;
        double best_err = kInf;
        for (const auto& arc : seg.arcs) {
            for (std::size_t j = 0; j < arc.points.size(); ++j) {
                const double dth = std::abs(wrap_angle(arc.angles[j] - theta));
                if (dth > 1.5 * dtheta)
                    continue;
                const double err = std::abs(E[arc.points[j]].t - t);
                if (err < best_err) {
                    best_err = err;
                    best = arc.id;
                }
            }
        }
        if (best < 0 || best_err > 1e-2 * a)
            throw Error(ErrorCode::BranchLost, "no echograph arc through the seed point");
        return best;
    };
    const int first = arc_at(seeds.theta_K, seeds.rho_K);
    std::vector<std::pair<int, int>> roots = {{first, 1}};
    if (seeds.has_second) {
        const int second = arc_at(seeds.theta2, seeds.tau2);
        if (second == first)
            throw Error(ErrorCode::BranchLost, "both seeds lie on the same echograph arc");
        roots.push_back({second, 2});
    }
    const Vec axis = seeds.has_second ? Vec(seeds.z2 - seeds.z_K) : Vec(perp(seeds.z_K));
    for (const auto& [root, body] : roots) {
        EchoArc& r = seg.arcs[root];
        r.body = body;
        r.level = 1;
        r.side = Side::Both;
        double cross[2];
        for (int e = 0; e < 2; ++e) {
            const auto& ep = E[e == 0 ? r.points.front() : r.points.back()];
            cross[e] = cross2(axis, z1_point(s0, ep) - seeds.z_K);
        }
        const int left_end = cross[0] >= cross[1] ? 0 : 1;
        for (int e = 0; e < 2; ++e) {
            const Side side = e == left_end ? Side::Left : Side::Right;
            int cur_arc = root;
            int cur_end = e;
            for (int level = 2; level <= k_max; ++level) {
                const int slot = 2 * cur_arc + cur_end;
                if (ambiguous(slot))
                    throw Error(ErrorCode::AmbiguousAdjacency,
                                "two cusp partners for arc " + std::to_string(cur_arc)
                                    + " at level " + std::to_string(level));
                const int next = seg.arcs[cur_arc].link[cur_end];
                if (next < 0) {
                    seg.log.push_back("chain body " + std::to_string(body) + " side "
                                      + to_string(side) + " ends before level "
                                      + std::to_string(level));
                    break;
                }
                EchoArc& na = seg.arcs[next];
                if (na.level != 0) {
                    seg.log.push_back("cusp chain revisits arc " + std::to_string(next));
                    break;
                }
                na.body = body;
                na.level = level;
                na.side = side;
                const int entered = seg.arcs[cur_arc].link_end[cur_end];
                cur_arc = next;
                cur_end = 1 - entered;
            }
        }
    }
    return seg;
}

// ---------------------------------------------------------------------------
// Level-1 arcs
// ---------------------------------------------------------------------------

namespace {

void orient_tangents(BoundaryArc& arc)
{
    auto& pts = arc.points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Vec t = perp(pts[i].normal);
        Vec along = Vec::Zero();
        if (i + 1 < pts.size())
            along = pts[i + 1].z - pts[i].z;
        else if (i > 0)
            along = pts[i].z - pts[i - 1].z;
        if (t.dot(along) < 0.0)
            t = -t;
        pts[i].tangent = t;
    }
    if (!pts.empty()) {
        arc.end_first = pts.front().z;
        arc.end_last = pts.back().z;
    }
}

}  // namespace

std::vector<BoundaryArc> trace_Z1_arcs(const BoundingSphere& s0, const Segmentation& seg)
{
    std::vector<BoundaryArc> out;
    for (const auto& ea : seg.arcs) {
        if (ea.level != 1)
            continue;
        BoundaryArc arc;
        arc.echo_arc = ea.id;
        arc.body = ea.body;
        arc.side = Side::Both;
        arc.level = 1;
        for (std::size_t j = 0; j < ea.points.size(); ++j) {
            const auto& e = seg.echo[ea.points[j]];
            ReconPoint p;
            p.normal = recover_reflexive_direction(s0, e.x_angle, e.slope);
            p.z = e.x - 0.5 * e.t * p.normal;
            p.echo_index = ea.points[j];
            p.arc_pos = static_cast<int>(j);
            p.x_angle = e.x_angle;
            p.t = e.t;
            arc.points.push_back(std::move(p));
        }
        orient_tangents(arc);
        out.push_back(std::move(arc));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Local fitting
// ---------------------------------------------------------------------------

LocalFit fit_local_curve(const CurveCloud& cloud, const Vec& q)
{
    const auto& P = cloud.points;
    if (P.size() < 5)
        throw Error(ErrorCode::InsufficientSupport, "fewer than five points in the cloud");
    std::vector<double> gaps;
    gaps.reserve(P.size());
    for (std::size_t i = 0; i + 1 < P.size(); ++i)
        gaps.push_back((P[i + 1] - P[i]).norm());
    std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
    const double radius = 10.0 * gaps[gaps.size() / 2];
    std::size_t nearest = 0;
    double nearest_d = kInf;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double d = (P[i] - q).norm();
        if (d < nearest_d) {
            nearest_d = d;
            nearest = i;
        }
        if (d < radius)
            idx.push_back(i);
    }
    if (idx.size() < 5)
        throw Error(ErrorCode::InsufficientSupport, "fewer than five points within the fit radius");
    const Vec n0 = cloud.normals[nearest].normalized();
    const Vec t0 = perp(n0);
    const Vec o = P[nearest];
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d atb = Eigen::Vector3d::Zero();
    for (std::size_t i : idx) {
        const double r = (P[i] - q).norm() / radius;
        const double w = std::pow(1.0 - r * r * r, 3);
        const double xi = (P[i] - o).dot(t0);
        const double eta = (P[i] - o).dot(n0);
        const Eigen::Vector3d row(1.0, xi, xi * xi);
        ata += w * row * row.transpose();
        atb += w * eta * row;
    }
    const Eigen::Vector3d c = ata.ldlt().solve(atb);
    // Foot of q on the fitted parabola.
    const double xq = (q - o).dot(t0);
    const double yq = (q - o).dot(n0);
    double xi = xq;
    for (int it = 0; it < 20; ++it) {
        const double f = c[0] + c[1] * xi + c[2] * xi * xi;
        const double fp = c[1] + 2.0 * c[2] * xi;
        const double g = (xi - xq) + (f - yq) * fp;
        const double gp = 1.0 + fp * fp + (f - yq) * 2.0 * c[2];
        const double step = g / gp;
        xi -= step;
        if (std::abs(step) < 1e-15 * (1.0 + std::abs(xi)))
            break;
    }
    const double f = c[0] + c[1] * xi + c[2] * xi * xi;
    const double fp = c[1] + 2.0 * c[2] * xi;
    LocalFit out;
    out.foot = o + xi * t0 + f * n0;
    out.tangent = (t0 + fp * n0).normalized();
    out.normal = (n0 - fp * t0).normalized();
    out.curvature = -2.0 * c[2] / std::pow(1.0 + fp * fp, 1.5);
    out.non_convex = !(out.curvature * radius > 1e-8);
    out.support = static_cast<int>(idx.size());
    return out;
}

// ---------------------------------------------------------------------------
// Determined boundary
// ---------------------------------------------------------------------------

void KnownBoundary::add_arc(const BoundaryArc& arc)
{
    const auto& pts = arc.points;
    if (pts.size() < 2)
        return;
    const std::size_t from = segs_.size();
    std::vector<double> len;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i)
        len.push_back((pts[i + 1].z - pts[i].z).norm());
    std::vector<double> sorted = len;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double hole = 5.0 * sorted[sorted.size() / 2];
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const int step = std::abs(pts[i + 1].arc_pos - pts[i].arc_pos);
        if (len[i] <= hole && step <= 4)
            segs_.push_back({arc.body, pts[i].z, pts[i + 1].z, pts[i].normal, pts[i + 1].normal,
                             std::max(pts[i].error, pts[i + 1].error)});
    }
    rebuild_chunks(from);
}

void KnownBoundary::add_segment(int body, const ReconPoint& a, const ReconPoint& b)
{
    const std::size_t from = segs_.size();
    segs_.push_back({body, a.z, b.z, a.normal, b.normal, std::max(a.error, b.error)});
    rebuild_chunks(from);
}

void KnownBoundary::rebuild_chunks(std::size_t from)
{
    constexpr std::size_t kChunk = 32;
    for (std::size_t b = from; b < segs_.size(); b += kChunk) {
        Chunk c;
        c.begin = b;
        c.end = std::min(segs_.size(), b + kChunk);
        c.lo = Vec::Constant(kInf);
        c.hi = Vec::Constant(-kInf);
        for (std::size_t i = c.begin; i < c.end; ++i) {
            const double pad = 0.25 * (segs_[i].b - segs_[i].a).norm();
            for (const Vec& p : {segs_[i].a, segs_[i].b}) {
                c.lo = c.lo.cwiseMin(p - Vec::Constant(pad));
                c.hi = c.hi.cwiseMax(p + Vec::Constant(pad));
            }
        }
        chunks_.push_back(c);
    }
}

namespace {

bool ray_hits_box(const Vec& o, const Vec& d, double s0, double s1, const Vec& lo,
                  const Vec& hi)
{
    for (int k = 0; k < 2; ++k) {
        if (std::abs(d[k]) < 1e-300) {
            if (o[k] < lo[k] || o[k] > hi[k])
                return false;
            continue;
        }
        double ta = (lo[k] - o[k]) / d[k];
        double tb = (hi[k] - o[k]) / d[k];
        if (ta > tb)
            std::swap(ta, tb);
        s0 = std::max(s0, ta);
        s1 = std::min(s1, tb);
        if (s0 > s1)
            return false;
    }
    return true;
}

struct Hermite {
    Vec a, b, ta, tb;

    Hermite(const Vec& pa, const Vec& pb, const Vec& na, const Vec& nb) : a(pa), b(pb)
    {
        const Vec chord = pb - pa;
        const double len = chord.norm();
        Vec u = perp(na);
        if (u.dot(chord) < 0.0)
            u = -u;
        Vec v = perp(nb);
        if (v.dot(chord) < 0.0)
            v = -v;
        ta = len * u;
        tb = len * v;
    }
    Vec at(double s) const
    {
        const double s2 = s * s, s3 = s2 * s;
        return (2 * s3 - 3 * s2 + 1) * a + (s3 - 2 * s2 + s) * ta + (-2 * s3 + 3 * s2) * b
               + (s3 - s2) * tb;
    }
    Vec deriv(double s) const
    {
        const double s2 = s * s;
        return (6 * s2 - 6 * s) * a + (3 * s2 - 4 * s + 1) * ta + (-6 * s2 + 6 * s) * b
               + (3 * s2 - 2 * s) * tb;
    }
};

}  // namespace

std::optional<KnownBoundary::Crossing> KnownBoundary::intersect(const Vec& origin,
                                                                const Vec& dir, double s_min,
                                                                double s_max) const
{
    std::optional<Crossing> best;
    double limit = s_max;
    for (const auto& ch : chunks_) {
        if (!ray_hits_box(origin, dir, s_min, limit, ch.lo, ch.hi))
            continue;
        for (std::size_t i = ch.begin; i < ch.end; ++i) {
            const auto& sg = segs_[i];
            const Hermite h(sg.a, sg.b, sg.na, sg.nb);
            auto F = [&](double s) { return cross2(h.at(s) - origin, dir); };
            constexpr int kSamples = 4;
            double prev_s = 0.0, prev_f = F(0.0);
            for (int k = 1; k <= kSamples; ++k) {
                const double cur_s = static_cast<double>(k) / kSamples;
                const double cur_f = F(cur_s);
                if ((prev_f < 0.0) != (cur_f < 0.0) || cur_f == 0.0) {
                    double lo = prev_s, hi = cur_s, flo = prev_f;
                    double u = 0.5 * (lo + hi);
                    for (int it = 0; it < 60; ++it) {
                        u = 0.5 * (lo + hi);
                        const double fu = F(u);
                        if ((fu < 0.0) == (flo < 0.0)) {
                            lo = u;
                            flo = fu;
                        }
                        else {
                            hi = u;
                        }
                        if (hi - lo < 1e-15)
                            break;
                    }
                    // Newton polish on the cubic.
                    for (int it = 0; it < 3; ++it) {
                        const double fd = cross2(h.deriv(u), dir);
                        if (std::abs(fd) < 1e-300)
                            break;
                        const double nu = u - F(u) / fd;
                        if (nu < prev_s - 1e-12 || nu > cur_s + 1e-12)
                            break;
                        u = nu;
                    }
                    const Vec p = h.at(u);
                    const double s = (p - origin).dot(dir);
                    if (s > s_min && s < limit) {
                        Vec n = perp(h.deriv(u)).normalized();
                        const Vec ref = ((1.0 - u) * sg.na + u * sg.nb);
                        if (n.dot(ref) < 0.0)
                            n = -n;
                        limit = s;
                        best = Crossing{sg.body, s, p, n, n.dot(dir) < 0.0, sg.err};
                    }
                }
                prev_s = cur_s;
                prev_f = cur_f;
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Backward tracing
// ---------------------------------------------------------------------------

namespace {

struct KnownPath {
    std::vector<KnownBoundary::Crossing> hits;
    std::vector<Vec> outgoing;  ///< direction after each reflection
    std::vector<double> remaining;  ///< length left after each reflection
    Vec z = Vec::Zero();
    Vec dir = Vec::Zero();
};

BacktraceOutcome follow_known(const KnownBoundary& known, double a, Vec pos, Vec dir,
                              double remaining, int want, int body, KnownPath& path)
{
    for (int bounce = 0; bounce <= want; ++bounce) {
        const auto hit = known.intersect(pos, dir, 1e-9 * a, remaining - 1e-7 * a);
        if (!hit)
            break;
        if (!hit->entering)
            return BacktraceOutcome::UnknownRegion;
        if (!path.hits.empty() && path.hits.back().body == hit->body)
            return BacktraceOutcome::WrongCount;
        pos = hit->point;
        remaining -= hit->s;
        dir = (dir - 2.0 * dir.dot(hit->normal) * hit->normal).normalized();
        path.hits.push_back(*hit);
        path.outgoing.push_back(dir);
        path.remaining.push_back(remaining);
    }
    if (remaining < 0.0)
        throw Error(ErrorCode::NegativeResidualLength, "path longer than the echo time");
    const int got = static_cast<int>(path.hits.size());
    if (got < want)
        return BacktraceOutcome::UnknownRegion;
    if (got > want || (got > 0 && path.hits.back().body == body))
        return BacktraceOutcome::WrongCount;
    path.z = pos + remaining * dir;
    path.dir = dir;
    return BacktraceOutcome::Ok;
}

Vec rotated(const Vec& d, double angle)
{
    const double c = std::cos(angle), s = std::sin(angle);
    return planar(c * d.x() - s * d.y(), s * d.x() + c * d.y());
}

}  // namespace

BacktraceOutcome backtrace_point(const BoundingSphere& s0, const EchoPoint& e, int level,
                                 int body, const KnownBoundary& known, ReconPoint& out,
                                 const BacktraceOptions& opts)
{
    const double a = s0.radius;
    const int want = level - 1;
    const Vec d0 = -recover_reflexive_direction(s0, e.x_angle, e.slope);
    KnownPath path;
    const auto r = follow_known(known, a, e.x, d0, 0.5 * e.t, want, body, path);
    if (r != BacktraceOutcome::Ok)
        return r;

    // Growth of a direction perturbation from each launch point to z.
    auto growth = [&](const Vec& from, const Vec& dir, double remaining, int left) {
        double g = 0.0;
        for (double sign : {-1.0, 1.0}) {
            KnownPath p;
            if (follow_known(known, a, from, rotated(dir, sign * opts.probe), remaining, left,
                             body, p)
                != BacktraceOutcome::Ok)
                return std::numeric_limits<double>::infinity();
            g = std::max(g, (p.dir - path.dir).norm() / opts.probe);
        }
        return g;
    };
    double err = growth(e.x, d0, 0.5 * e.t, want) * opts.direction_error;
    for (int i = 0; i < want && std::isfinite(err); ++i) {
        const double ei = path.hits[i].error;
        if (ei > 0.0)
            err += 2.0 * ei * growth(path.hits[i].point, path.outgoing[i], path.remaining[i], want - i - 1);
    }
    if (!(err <= opts.max_error))
        return BacktraceOutcome::IllConditioned;

    ReconPoint p;
    for (const auto& h : path.hits)
        p.reflections.push_back({h.body, h.point});
    p.z = path.z;
    p.normal = -path.dir;
    p.x_angle = e.x_angle;
    p.t = e.t;
    p.error = err;
    out = std::move(p);
    return BacktraceOutcome::Ok;
}

namespace {

void record_skips(BacktraceStats& stats, std::vector<std::string>& log, int echo_arc, int level,
                  const long counts[4])
{
    stats.skipped_unknown += counts[1];
    stats.skipped_count += counts[2];
    stats.ill_conditioned += counts[3];
    if (counts[1] + counts[2] + counts[3] == 0)
        return;
    log.push_back("arc " + std::to_string(echo_arc) + " level " + std::to_string(level) + ": skipped "
                  + std::to_string(counts[1]) + " points in undetermined regions, "
                  + std::to_string(counts[2]) + " with a wrong reflection sequence, "
                  + std::to_string(counts[3]) + " ill-conditioned");
}

}  // namespace

BoundaryArc backtrace_reconstruct_arc(const BoundingSphere& s0, const Segmentation& seg,
                                      int echo_arc, const KnownBoundary& known,
                                      BacktraceStats& stats, std::vector<std::string>& log,
                                      int threads, const BacktraceOptions& opts)
{
    const EchoArc& ea = seg.arcs.at(echo_arc);
    std::vector<BacktraceOutcome> outcome(ea.points.size());
    std::vector<ReconPoint> pts(ea.points.size());
    parallel_for(ea.points.size(), threads, [&](std::size_t j) {
        outcome[j] = backtrace_point(s0, seg.echo[ea.points[j]], ea.level, ea.body, known,
                                     pts[j], opts);
        pts[j].echo_index = ea.points[j];
        pts[j].arc_pos = static_cast<int>(j);
    });
    BoundaryArc arc;
    arc.echo_arc = echo_arc;
    arc.body = ea.body;
    arc.side = ea.side;
    arc.level = ea.level;
    long counts[4] = {0, 0, 0, 0};
    for (std::size_t j = 0; j < pts.size(); ++j) {
        ++stats.points;
        ++counts[static_cast<int>(outcome[j])];
        if (outcome[j] == BacktraceOutcome::Ok)
            arc.points.push_back(std::move(pts[j]));
    }
    record_skips(stats, log, echo_arc, ea.level, counts);
    orient_tangents(arc);
    return arc;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

CurveCloud ReconstructionState::body_cloud(int body) const
{
    CurveCloud c;
    for (const auto& arc : arcs) {
        if (arc.body != body)
            continue;
        for (const auto& p : arc.points) {
            c.points.push_back(p.z);
            c.normals.push_back(p.normal);
        }
    }
    return c;
}

namespace {

// Polylines of every reconstructed point, plus the segments across cusps between
// consecutive arcs of a chain when both touching ends are present.
KnownBoundary build_known(const Segmentation& seg, const std::vector<BoundaryArc>& arcs,
                          const std::map<int, int>& slot_of_echo_arc)
{
    KnownBoundary known;
    for (const auto& arc : arcs)
        known.add_arc(arc);
    auto end_point = [&](int echo_arc, int end) -> const ReconPoint* {
        const auto it = slot_of_echo_arc.find(echo_arc);
        if (it == slot_of_echo_arc.end())
            return nullptr;
        const auto& pts = arcs[it->second].points;
        if (pts.empty())
            return nullptr;
        const int n = static_cast<int>(seg.arcs[echo_arc].points.size());
        const ReconPoint& p = end == 0 ? pts.front() : pts.back();
        const int pos_gap = end == 0 ? p.arc_pos : n - 1 - p.arc_pos;
        return pos_gap <= 2 ? &p : nullptr;
    };
    for (const auto& ea : seg.arcs) {
        if (ea.level < 2)
            continue;
        for (int e = 0; e < 2; ++e) {
            const int other = ea.link[e];
            if (other < 0 || seg.arcs[other].level != ea.level - 1)
                continue;
            const ReconPoint* pa = end_point(ea.id, e);
            const ReconPoint* pb = end_point(other, ea.link_end[e]);
            if (pa && pb)
                known.add_segment(ea.body, *pa, *pb);
        }
    }
    return known;
}

}  // namespace

ReconstructionState reconstruct_all(const BoundingSphere& s0, const DiagData& measured,
                                    const std::optional<SeparatingLine>& line,
                                    const ReconstructOptions& opts)
{
    if (s0.center.z() != 0.0)
        throw Error(ErrorCode::InvalidArgument, "reconstruction is planar only");
    ReconstructionState st;
    Scene sphere_only;
    sphere_only.s0 = s0;
    sphere_only.dim = 2;
    DiagData data = measured.mode == DataMode::Measured ? measured : to_measured(measured);
    auto echo = echograph(sphere_only, data, opts.echo);

    st.seeds = seed_first_body(s0, data);
    seed_second_body(s0, data, line, st.seeds);
    st.segmentation = segment_echograph(s0, std::move(echo), st.seeds, opts.k_max, opts.segment);
    st.log = st.segmentation.log;
    const auto& seg = st.segmentation;

    std::map<int, int> slot;  // echo arc id -> index in st.arcs
    st.arcs = trace_Z1_arcs(s0, seg);
    for (int i = 0; i < static_cast<int>(st.arcs.size()); ++i) {
        slot[st.arcs[i].echo_arc] = i;
        for (auto& p : st.arcs[i].points)
            p.error = opts.backtrace.direction_error;
    }
    std::vector<std::vector<char>> done(seg.arcs.size());
    std::vector<int> order;
    for (int level = 2; level <= opts.k_max; ++level)
        for (const auto& ea : seg.arcs)
            if (ea.level == level) {
                order.push_back(ea.id);
                done[ea.id].assign(ea.points.size(), 0);
                BoundaryArc arc;
                arc.echo_arc = ea.id;
                arc.body = ea.body;
                arc.side = ea.side;
                arc.level = ea.level;
                slot[ea.id] = static_cast<int>(st.arcs.size());
                st.arcs.push_back(std::move(arc));
            }

    // Rounds over the labelled arcs in level order. A point is accepted once its reversed
    // ray meets only determined boundary; points whose reflections fall on parts that are
    // still missing wait for a later round.
    for (int round = 0; round < 64; ++round) {
        long accepted = 0;
        int current_level = 1;
        KnownBoundary known = build_known(seg, st.arcs, slot);
        for (int id : order) {
            const EchoArc& ea = seg.arcs[id];
            if (ea.level != current_level) {
                known = build_known(seg, st.arcs, slot);
                current_level = ea.level;
            }
            std::vector<std::size_t> todo;
            for (std::size_t j = 0; j < ea.points.size(); ++j)
                if (!done[id][j])
                    todo.push_back(j);
            std::vector<BacktraceOutcome> outcome(todo.size());
            std::vector<ReconPoint> pts(todo.size());
            parallel_for(todo.size(), opts.threads, [&](std::size_t i) {
                const std::size_t j = todo[i];
                outcome[i] = backtrace_point(s0, seg.echo[ea.points[j]], ea.level, ea.body,
                                             known, pts[i], opts.backtrace);
                pts[i].echo_index = ea.points[j];
                pts[i].arc_pos = static_cast<int>(j);
            });
            auto& arc = st.arcs[slot[id]];
            bool added = false;
            for (std::size_t i = 0; i < todo.size(); ++i) {
                if (outcome[i] != BacktraceOutcome::Ok)
                    continue;
                done[id][todo[i]] = 1;
                arc.points.push_back(std::move(pts[i]));
                added = true;
                ++accepted;
            }
            if (added) {
                std::sort(arc.points.begin(), arc.points.end(),
                          [](const ReconPoint& x, const ReconPoint& y) { return x.arc_pos < y.arc_pos; });
                orient_tangents(arc);
            }
        }
        st.stats.rounds = round + 1;
        if (accepted == 0)
            break;
    }

    // Final classification of the points that were never accepted.
    {
        const KnownBoundary known = build_known(seg, st.arcs, slot);
        for (int id : order) {
            const EchoArc& ea = seg.arcs[id];
            long counts[4] = {0, 0, 0, 0};
            for (std::size_t j = 0; j < ea.points.size(); ++j) {
                ++st.stats.points;
                if (done[id][j]) {
                    ++counts[0];
                    continue;
                }
                ReconPoint p;
                const auto r = backtrace_point(s0, seg.echo[ea.points[j]], ea.level, ea.body,
                                               known, p, opts.backtrace);
                // A point that now passes was blocked only by the round limit.
                ++counts[r == BacktraceOutcome::Ok ? 1 : static_cast<int>(r)];
            }
            record_skips(st.stats, st.log, id, ea.level, counts);
        }
    }
    st.depth = 0;
    for (const auto& arc : st.arcs)
        if (!arc.points.empty())
            st.depth = std::max(st.depth, arc.level);

    const CurveCloud c1 = st.body_cloud(1);
    const CurveCloud c2 = st.body_cloud(2);
    if (!c1.points.empty() && !c2.points.empty()) {
        double best = kInf;
        std::pair<Vec, Vec> pair;
        for (const Vec& p : c1.points)
            for (const Vec& q : c2.points) {
                const double d = (p - q).squaredNorm();
                if (d < best) {
                    best = d;
                    pair = {p, q};
                }
            }
        st.z_inf = pair;
    }
    return st;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

int true_level(const Scene& scene, const ConvexBody& body, const Vec& q)
{
    Vec p = q;
    Vec n = outward_normal(body, q);
    int skip = body.id();
    for (int level = 1; level <= 1000; ++level) {
        Hit hit;
        try {
            hit = first_intersection(scene, p, n, skip);
        }
        catch (const Error&) {
            return std::numeric_limits<int>::max();
        }
        if (hit.kind != Hit::Kind::Body)
            return level;
        p = hit.point;
        skip = hit.body_id;
        n = outward_normal(scene.body(skip), p);
    }
    return std::numeric_limits<int>::max();
}

namespace {

struct GridIndex {
    double cell;
    std::unordered_map<long long, std::vector<Vec>> buckets;

    explicit GridIndex(double c) : cell(c) {}
    static long long key(long long i, long long j) { return (i << 32) ^ (j & 0xffffffffLL); }
    void add(const Vec& p)
    {
        buckets[key(static_cast<long long>(std::floor(p.x() / cell)),
                    static_cast<long long>(std::floor(p.y() / cell)))]
            .push_back(p);
    }
    bool any_within(const Vec& p, double r) const
    {
        const long long i0 = static_cast<long long>(std::floor(p.x() / cell));
        const long long j0 = static_cast<long long>(std::floor(p.y() / cell));
        for (long long i = i0 - 1; i <= i0 + 1; ++i)
            for (long long j = j0 - 1; j <= j0 + 1; ++j) {
                const auto it = buckets.find(key(i, j));
                if (it == buckets.end())
                    continue;
                for (const Vec& q : it->second)
                    if ((q - p).norm() <= r)
                        return true;
            }
        return false;
    }
};

}  // namespace

ValidationReport validate_reconstruction(const Scene& scene, const ReconstructionState& st,
                                         double exclusion, double cover_radius)
{
    if (scene.bodies.size() != 2)
        throw Error(ErrorCode::InvalidArgument, "validation expects two bodies");
    ValidationReport rep;
    const auto cp = closest_points(scene.bodies[0], scene.bodies[1]);
    rep.z_inf_true[0] = cp.on_a;
    rep.z_inf_true[1] = cp.on_b;
    // Map reconstruction labels to scene bodies by mean distance.
    int map[3] = {-1, -1, -1};
    for (int label = 1; label <= 2; ++label) {
        const CurveCloud c = st.body_cloud(label);
        double best = kInf;
        for (int b = 0; b < 2; ++b) {
            double acc = 0.0;
            for (const Vec& p : c.points)
                acc += (nearest_boundary_point(scene.bodies[b], p) - p).norm();
            if (!c.points.empty() && acc < best) {
                best = acc;
                map[label] = b;
            }
        }
    }
    double covered = 0.0, total = 0.0;
    for (int label = 1; label <= 2; ++label) {
        if (map[label] < 0)
            continue;
        const ConvexBody& body = scene.bodies[map[label]];
        const CurveCloud c = st.body_cloud(label);
        GridIndex grid(cover_radius);
        for (const Vec& p : c.points) {
            grid.add(p);
            rep.hausdorff = std::max(rep.hausdorff, (nearest_boundary_point(body, p) - p).norm());
        }
        const Vec zinf = rep.z_inf_true[map[label]];
        const auto samples = boundary_samples(body, 2, 20000);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const Vec& p = samples[i];
            const Vec& q = samples[(i + 1) % samples.size()];
            const double len = (q - p).norm();
            const Vec mid = 0.5 * (p + q);
            if ((mid - zinf).norm() < exclusion)
                continue;
            total += len;
            if (grid.any_within(mid, cover_radius))
                covered += len;
        }
    }
    rep.coverage = total > 0.0 ? covered / total : 0.0;

    // Every reflection of a reversed ray must lie on a point of strictly smaller level
    // than the reconstructed point, on the same side of the segment joining the z_inf.
    const Vec axis = rep.z_inf_true[1] - rep.z_inf_true[0];
    auto side_of = [&](const Vec& q) { return cross2(axis, q - rep.z_inf_true[0]) > 0.0; };
    auto nearest_body = [&](const Vec& q) {
        int nb = 0;
        double nd = kInf;
        for (int b = 0; b < 2; ++b) {
            const double d = (nearest_boundary_point(scene.bodies[b], q) - q).norm();
            if (d < nd) {
                nd = d;
                nb = b;
            }
        }
        return nb;
    };
    // Levels are evaluated at the point and at its neighbours a distance `slack` away
    // along the boundary, so that points within the reconstruction error of a level
    // boundary are not counted. The slack grows with the point's normal error estimate,
    // which displaces the reflections of its ray along the boundary.
    const double base_slack = std::max(1e-6 * scene.s0.radius, 10.0 * rep.hausdorff);
    auto level_range = [&](const ConvexBody& b, const Vec& q, double slack) {
        const Vec t = perp(outward_normal(b, q));
        int lo = std::numeric_limits<int>::max(), hi = 0;
        for (double off : {-slack, 0.0, slack}) {
            const Vec p = nearest_boundary_point(b, q + off * t);
            const int l = true_level(scene, b, p);
            lo = std::min(lo, l);
            hi = std::max(hi, l);
        }
        return std::pair<int, int>{lo, hi};
    };
    for (const auto& arc : st.arcs) {
        if (arc.level < 2 || map[arc.body] < 0)
            continue;
        const ConvexBody& zb = scene.bodies[map[arc.body]];
        for (const auto& p : arc.points) {
            const double slack = std::max(base_slack, p.error * scene.s0.radius);
            const Vec z = nearest_boundary_point(zb, p.z);
            const auto lz = level_range(zb, z, slack);
            for (const auto& r : p.reflections) {
                ++rep.audit_checked;
                const int nb = nearest_body(r.point);
                const Vec q = nearest_boundary_point(scene.bodies[nb], r.point);
                const auto lq = level_range(scene.bodies[nb], q, slack);
                const bool side_ok = lq.first == 1 || side_of(q) == side_of(z);
                if (lq.first < lz.second && side_ok)
                    continue;
                ++rep.audit_violations;
                if (rep.details.size() < 20)
                    rep.details.push_back("point of level " + std::to_string(lz.second)
                                          + " reflects at a level " + std::to_string(lq.first)
                                          + (side_ok ? " point" : " point on the other side"));
            }
        }
    }
    return rep;
}

std::string reconstruction_to_csv(const ReconstructionState& st)
{
    std::string out = "level,side,body,z1,z2,n1,n2\n";
    for (const auto& arc : st.arcs) {
        for (const auto& p : arc.points) {
            out += std::to_string(arc.level) + ',' + to_string(arc.side) + ','
                   + std::to_string(arc.body) + ',' + format_double(p.z.x()) + ','
                   + format_double(p.z.y()) + ',' + format_double(p.normal.x()) + ','
                   + format_double(p.normal.y()) + '\n';
        }
    }
    return out;
}

std::string reconstruction_manifest_json(const ReconstructionState& st,
                                         const ValidationReport* validation)
{
    nlohmann::ordered_json j;
    const auto& s = st.seeds;
    j["seeds"]["rho_K"] = s.rho_K;
    j["seeds"]["x_K"] = {s.x_K.x(), s.x_K.y()};
    j["seeds"]["z_K"] = {s.z_K.x(), s.z_K.y()};
    if (s.has_second) {
        j["seeds"]["tau2"] = s.tau2;
        j["seeds"]["x2"] = {s.x2.x(), s.x2.y()};
        j["seeds"]["z2"] = {s.z2.x(), s.z2.y()};
    }
    if (s.H)
        j["seeds"]["separating_line"] = {{"point", {s.H->point.x(), s.H->point.y()}},
                                         {"normal", {s.H->normal.x(), s.H->normal.y()}}};
    if (st.z_inf)
        j["z_inf"] = {{st.z_inf->first.x(), st.z_inf->first.y()},
                      {st.z_inf->second.x(), st.z_inf->second.y()}};
    else
        j["z_inf"] = nullptr;
    j["depth"] = st.depth;
    j["arcs"] = nlohmann::ordered_json::array();
    for (const auto& arc : st.arcs)
        j["arcs"].push_back({{"body", arc.body},
                             {"side", to_string(arc.side)},
                             {"level", arc.level},
                             {"points", arc.points.size()}});
    j["backtrace"] = {{"points", st.stats.points},
                      {"rounds", st.stats.rounds},
                      {"skipped_unknown_region", st.stats.skipped_unknown},
                      {"skipped_reflection_count", st.stats.skipped_count},
                      {"skipped_ill_conditioned", st.stats.ill_conditioned}};
    if (validation) {
        j["validation"] = {{"hausdorff", validation->hausdorff},
                           {"coverage", validation->coverage},
                           {"audit_checked", validation->audit_checked},
                           {"audit_violations", validation->audit_violations}};
    }
    j["log"] = st.log;
    return j.dump(2) + "\n";
}

}  // namespace bscatter
