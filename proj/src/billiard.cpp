#include "bscatter/billiard.hpp"

#include <algorithm>
#include <limits>

namespace bscatter {

const char* to_string(TraceStatus s)
{
    switch (s) {
    case TraceStatus::Exited: return "Exited";
    case TraceStatus::BudgetTrapped: return "BudgetTrapped";
    case TraceStatus::TangencyDetected: return "TangencyDetected";
    }
    return "Unknown";
}

std::vector<int> Trajectory::body_sequence() const
{
    std::vector<int> seq;
    seq.reserve(reflections.size());
    for (const auto& r : reflections)
        seq.push_back(r.body_id);
    return seq;
}

std::vector<Vec> Trajectory::vertices() const
{
    std::vector<Vec> v;
    v.reserve(reflections.size() + 2);
    v.push_back(entry.x);
    for (const auto& r : reflections)
        v.push_back(r.point);
    if (exit)
        v.push_back(exit->x);
    return v;
}

namespace {

constexpr double kMinLength = 1e-12;

// Forward distance to S0 from a point inside (or on) the sphere.
double exit_length(const BoundingSphere& s0, const Vec& o, const Vec& d)
{
    const Vec p = o - s0.center;
    const double b = p.dot(d);
    const double c = p.squaredNorm() - s0.radius * s0.radius;
    const double disc = std::max(b * b - c, 0.0);
    const double sq = std::sqrt(disc);
    if (b <= 0.0)
        return -b + sq;
    return c < 0.0 ? -c / (b + sq) : 0.0;
}

// Entry distance into an ellipsoid, or infinity if the ray misses.
double ellipsoid_entry(const ConvexBody& body, const Vec& o, const Vec& d)
{
    const Vec p = body.to_unit(o);
    const Vec q = body.dir_to_unit(d);
    const double a = q.squaredNorm();
    const double b = p.dot(q);
    const double c = p.squaredNorm() - 1.0;
    if (b >= 0.0 || c <= 0.0)
        return std::numeric_limits<double>::infinity();
    const double disc = b * b - a * c;
    if (disc < 0.0)
        return std::numeric_limits<double>::infinity();
    const double qq = -b + std::sqrt(disc);
    double t = c / qq;
    // One Newton step on the exact field along the ray.
    const auto v = body.eval(o + t * d);
    const double slope = v.gradient.dot(d);
    if (slope < 0.0)
        t -= v.value / slope;
    return t;
}

double implicit_entry(const ConvexBody& body, const Vec& o, const Vec& d, double max_len,
                      double scale)
{
    const double step = 1e-3 * scale;
    // Skip quickly when the ray cannot reach the bounding ball.
    const Vec rel = body.interior_point() - o;
    const double along = rel.dot(d);
    const double perp_sq = rel.squaredNorm() - along * along;
    const double rb = body.bounding_radius();
    if (perp_sq > rb * rb || along + rb < 0.0)
        return std::numeric_limits<double>::infinity();
    double s0 = std::max(0.0, along - rb - step);
    const double s_end = std::min(max_len, along + rb + step);
    double prev = s0;
    double fprev = body.eval(o + prev * d).value;
    for (double s = s0 + step; s <= s_end + step; s += step) {
        const double ss = std::min(s, s_end);
        const double f = body.eval(o + ss * d).value;
        if (fprev > 0.0 && f <= 0.0) {
            double lo = prev, hi = ss;
            int it = 0;
            while (hi - lo > 1e-12 * scale) {
                const double mid = 0.5 * (lo + hi);
                (body.eval(o + mid * d).value > 0.0 ? lo : hi) = mid;
                if (++it > 100)
                    throw Error(ErrorCode::NumericalFailure, "bisection did not converge");
            }
            double t = 0.5 * (lo + hi);
            const auto v = body.eval(o + t * d);
            const double slope = v.gradient.dot(d);
            if (slope < 0.0) {
                const double t2 = t - v.value / slope;
                if (t2 >= lo - 1e-12 * scale && t2 <= hi + 1e-12 * scale)
                    t = t2;
            }
            return t;
        }
        prev = ss;
        fprev = f;
        if (ss >= s_end)
            break;
    }
    return std::numeric_limits<double>::infinity();
}

Vec project_to_sphere(const BoundingSphere& s0, const Vec& p)
{
    return s0.center + s0.radius * (p - s0.center).normalized();
}

Trajectory run_trace(const Scene& scene, const Vec& origin, const Vec& direction,
                     int skip_body, const TraceLimits& limits, bool from_s0)
{
    Trajectory tr;
    tr.entry = {origin, direction};
    Vec pos = origin;
    Vec dir = direction;
    int last = skip_body;
    const double budget = limits.time_budget(scene);
    double elapsed = 0.0;
    (void)from_s0;
    for (;;) {
        const Hit hit = first_intersection(scene, pos, dir, last);
        if (hit.kind == Hit::Kind::ExitS0) {
            const Vec x = project_to_sphere(scene.s0, hit.point);
            const double len = (x - pos).norm();
            tr.segment_lengths.push_back(len);
            elapsed += len;
            tr.exit = PhasePoint{x, dir};
            tr.status = TraceStatus::Exited;
            break;
        }
        if (hit.kind == Hit::Kind::None)
            throw Error(ErrorCode::NumericalFailure, "ray neither hit a body nor left S0");
        const ConvexBody& body = scene.body(hit.body_id);
        const Vec n = outward_normal(body, hit.point);
        const double inc = std::abs(dir.dot(n));
        tr.min_incidence = std::min(tr.min_incidence, inc);
        const double len = (hit.point - pos).norm();
        tr.segment_lengths.push_back(len);
        elapsed += len;
        if (inc < limits.tangency_threshold) {
            tr.reflections.push_back({hit.body_id, hit.point, dir, dir, n});
            tr.status = TraceStatus::TangencyDetected;
            break;
        }
        const Vec out = reflect(dir, n, limits.tangency_threshold);
        tr.reflections.push_back({hit.body_id, hit.point, dir, out, n});
        pos = hit.point;
        dir = out;
        last = hit.body_id;
        if (static_cast<int>(tr.reflections.size()) > limits.max_reflections
            || elapsed > budget) {
            tr.status = TraceStatus::BudgetTrapped;
            break;
        }
    }
    double total = 0.0;
    for (double l : tr.segment_lengths)
        total += l;
    tr.total_time = total;
    return tr;
}

}  // namespace

Hit first_intersection(const Scene& scene, const Vec& origin, const Vec& direction,
                       int skip_body)
{
    const double max_len = exit_length(scene.s0, origin, direction);
    Hit best;
    double best_t = std::numeric_limits<double>::infinity();
    for (const auto& body : scene.bodies) {
        if (body.id() == skip_body)
            continue;
        const double t = body.kind() == ConvexBody::Kind::Ellipsoid
                             ? ellipsoid_entry(body, origin, direction)
                             : implicit_entry(body, origin, direction, max_len, scene.scale());
        if (t > kMinLength && t < best_t && t <= max_len) {
            best_t = t;
            best.kind = Hit::Kind::Body;
            best.body_id = body.id();
        }
    }
    if (best.kind == Hit::Kind::Body) {
        best.length = best_t;
        best.point = origin + best_t * direction;
        return best;
    }
    if (max_len > kMinLength) {
        best.kind = Hit::Kind::ExitS0;
        best.length = max_len;
        best.point = origin + max_len * direction;
    }
    return best;
}

Vec reflect(const Vec& incoming, const Vec& normal, double tangency_threshold)
{
    const double c = incoming.dot(normal);
    if (std::abs(c) < tangency_threshold)
        throw Error(ErrorCode::TangentIncidence, "incidence below tangency threshold");
    Vec out = incoming - 2.0 * c * normal;
    return out / out.norm();
}

Trajectory trace(const Scene& scene, const PhasePoint& entry, const TraceLimits& limits)
{
    if (std::abs(entry.u.norm() - 1.0) > 1e-12)
        throw Error(ErrorCode::InvalidArgument, "entry direction must be a unit vector");
    if ((entry.x - scene.s0.center).dot(entry.u) >= 0.0)
        throw Error(ErrorCode::InvalidArgument, "entry direction must point into the ball");
    return run_trace(scene, entry.x, entry.u, -1, limits, true);
}

Trajectory trace_from_interior(const Scene& scene, const Vec& origin, const Vec& direction,
                               const TraceLimits& limits)
{
    int skip = -1;
    for (const auto& b : scene.bodies) {
        if (b.eval(origin).value < 0.0 && !on_boundary(scene, b, origin))
            throw Error(ErrorCode::InvalidArgument, "origin lies inside a body");
        if (on_boundary(scene, b, origin))
            skip = b.id();
    }
    return run_trace(scene, origin, direction.normalized(), skip, limits, false);
}

CrossSectionResult cross_section_map(const Scene& scene, const PhasePoint& entry,
                                     const TraceLimits& limits)
{
    Trajectory tr = trace(scene, entry, limits);
    if (tr.status == TraceStatus::BudgetTrapped)
        throw Error(ErrorCode::Trapped, "ray exceeded the trace budget");
    if (tr.status == TraceStatus::TangencyDetected)
        throw Error(ErrorCode::Tangency, "ray has a tangential contact");
    PhasePoint ex = *tr.exit;
    return {ex, std::move(tr)};
}

std::vector<Vec> tangent_basis(const Vec& n, int dim)
{
    if (dim == 2)
        return {perp(n).normalized()};
    int order[3] = {0, 1, 2};
    std::sort(order, order + 3,
              [&](int i, int j) { return std::abs(n[i]) < std::abs(n[j]); });
    Vec e1 = Vec::Unit(order[0]);
    e1 -= e1.dot(n) * n;
    e1.normalize();
    Vec e2 = Vec::Unit(order[1]);
    e2 -= e2.dot(n) * n + e2.dot(e1) * e1;
    e2.normalize();
    return {e1, e2};
}

namespace {

Vec chart_direction(const Vec& omega0, const std::vector<Vec>& basis,
                    const Eigen::VectorXd& eps)
{
    Vec w = omega0;
    for (std::size_t j = 0; j < basis.size(); ++j)
        w += eps[j] * basis[j];
    return w.normalized();
}

}  // namespace

RegularityResult regularity_jacobian(const Scene& scene, const Vec& x0, const Vec& omega0,
                                     double h, const TraceLimits& limits)
{
    const int m = scene.dim - 1;
    const Trajectory base = trace(scene, {x0, omega0}, limits);
    if (base.status != TraceStatus::Exited)
        throw Error(ErrorCode::Trapped, "base ray does not exit");
    const auto dbasis = tangent_basis(omega0, scene.dim);
    const Vec y0 = base.exit->x;
    const auto ybasis = tangent_basis(scene.s0.inward_normal(y0), scene.dim);
    const auto seq = base.body_sequence();
    RegularityResult res;
    res.jacobian = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(m);
        e[j] = h;
        const Trajectory tp = trace(scene, {x0, chart_direction(omega0, dbasis, e)}, limits);
        const Trajectory tm = trace(scene, {x0, chart_direction(omega0, dbasis, -e)}, limits);
        if (tp.status != TraceStatus::Exited || tm.status != TraceStatus::Exited)
            throw Error(ErrorCode::Trapped, "perturbed ray does not exit");
        if (tp.body_sequence() != seq || tm.body_sequence() != seq)
            throw Error(ErrorCode::CombinatoricsChanged,
                        "reflection sequence changes within the stencil");
        const Vec dy = (tp.exit->x - tm.exit->x) / (2.0 * h);
        for (int i = 0; i < m; ++i)
            res.jacobian(i, j) = dy.dot(ybasis[i]);
    }
    res.det = res.jacobian.determinant();
    res.regular = std::abs(res.det) > 1e-6;
    return res;
}

Trajectory two_point_continuation(const Scene& scene, const Trajectory& seed,
                                  const Vec& target_x, const Vec& target_y,
                                  const TraceLimits& limits)
{
    if (seed.status != TraceStatus::Exited)
        throw Error(ErrorCode::InvalidArgument, "seed must be an exited trajectory");
    const int m = scene.dim - 1;
    const double a = scene.scale();
    const auto seq = seed.body_sequence();
    const Vec omega0 = seed.entry.u;
    if ((target_x - scene.s0.center).dot(omega0) >= 0.0)
        throw Error(ErrorCode::NoConvergence, "seed direction is not inward at the target");
    const auto dbasis = tangent_basis(omega0, scene.dim);
    const auto ybasis = tangent_basis(scene.s0.inward_normal(target_y), scene.dim);

    auto residual = [&](const Trajectory& tr) {
        Eigen::VectorXd r(m);
        const Vec dy = tr.exit->x - target_y;
        for (int i = 0; i < m; ++i)
            r[i] = dy.dot(ybasis[i]);
        return r;
    };
    auto shoot = [&](const Eigen::VectorXd& eps) {
        return trace(scene, {target_x, chart_direction(omega0, dbasis, eps)}, limits);
    };
    auto valid = [&](const Trajectory& tr) {
        return tr.status == TraceStatus::Exited && tr.body_sequence() == seq;
    };

    Eigen::VectorXd eps = Eigen::VectorXd::Zero(m);
    Trajectory cur = shoot(eps);
    if (!valid(cur))
        throw Error(ErrorCode::CombinatoricsChanged, "start of continuation leaves the branch");
    Eigen::VectorXd r = residual(cur);
    // Converged when the exit point is on target; continue until stagnation for accuracy.
    const double tol = 1e-9 * a;
    const double fd = 1e-7;
    for (int it = 0; it < 60; ++it) {
        const double rn = r.norm();
        if (rn <= 1e-14 * a)
            return cur;
        Eigen::MatrixXd jac(m, m);
        for (int j = 0; j < m; ++j) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(m);
            e[j] = fd;
            const Trajectory tp = shoot(eps + e);
            const Trajectory tm = shoot(eps - e);
            if (!valid(tp) || !valid(tm)) {
                // One-sided difference when the stencil straddles a branch edge.
                if (valid(tp)) {
                    jac.col(j) = (residual(tp) - r) / fd;
                }
                else if (valid(tm)) {
                    jac.col(j) = (r - residual(tm)) / fd;
                }
                else {
                    throw Error(ErrorCode::CombinatoricsChanged,
                                "branch too narrow for the Jacobian stencil");
                }
            }
            else {
                jac.col(j) = (residual(tp) - residual(tm)) / (2.0 * fd);
            }
        }
        const Eigen::VectorXd step = jac.fullPivLu().solve(r);
        if (!step.allFinite())
            throw Error(ErrorCode::NoConvergence, "singular continuation Jacobian");
        double lambda = 1.0;
        bool accepted = false;
        for (int d = 0; d < 30; ++d) {
            const Eigen::VectorXd trial = eps - lambda * step;
            Trajectory tt = shoot(trial);
            if (valid(tt)) {
                const Eigen::VectorXd rt = residual(tt);
                if (rt.norm() < rn || rn <= tol) {
                    if (rt.norm() >= rn) {
                        // Stagnated below tolerance: keep the best iterate.
                        return cur;
                    }
                    eps = trial;
                    cur = std::move(tt);
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            if (rn <= tol)
                return cur;
            if (!valid(shoot(eps - step)))
                throw Error(ErrorCode::CombinatoricsChanged, "continuation left the branch");
            throw Error(ErrorCode::NoConvergence, "damped Newton step failed");
        }
    }
    if (r.norm() <= tol)
        return cur;
    throw Error(ErrorCode::NoConvergence, "continuation did not converge");
}

}  // namespace bscatter

namespace bscatter {

namespace {

struct FermatPath {
    std::vector<Vec> pts;  // x, reflection points, y
    std::vector<BoundaryParam> par;
};

}  // namespace

std::optional<Trajectory> fermat_geodesic(const Scene& scene, const std::vector<int>& sequence,
                                          const Vec& x, const Vec& y,
                                          const std::vector<Vec>& initial,
                                          double tangency_threshold)
{
    if (scene.dim != 2)
        throw Error(ErrorCode::InvalidArgument, "fermat_geodesic is planar only");
    const int k = static_cast<int>(sequence.size());
    if (static_cast<int>(initial.size()) != k)
        throw Error(ErrorCode::InvalidArgument, "one initial point per reflection required");
    if (k == 0) {
        // Straight chord; valid only when unobstructed.
        const double len = (y - x).norm();
        const Vec d = (y - x) / len;
        const Hit hit = first_intersection(scene, x, d);
        if (hit.kind != Hit::Kind::ExitS0 || (hit.point - y).norm() > 1e-9 * scene.scale())
            return std::nullopt;
        Trajectory tr;
        tr.entry = {x, d};
        tr.exit = PhasePoint{y, d};
        tr.segment_lengths = {len};
        tr.total_time = len;
        return tr;
    }
    std::vector<const ConvexBody*> bodies(k);
    Eigen::VectorXd s(k);
    for (int i = 0; i < k; ++i) {
        bodies[i] = &scene.body(sequence[i]);
        s[i] = boundary_param_of(*bodies[i], initial[i]);
    }
    auto build = [&](const Eigen::VectorXd& par, FermatPath& fp) {
        fp.pts.assign(k + 2, Vec::Zero());
        fp.par.resize(k);
        fp.pts[0] = x;
        fp.pts[k + 1] = y;
        for (int i = 0; i < k; ++i) {
            fp.par[i] = boundary_param(*bodies[i], par[i]);
            fp.pts[i + 1] = fp.par[i].p;
        }
    };
    auto gradient_hessian = [&](const FermatPath& fp, Eigen::VectorXd& g, Eigen::MatrixXd& hm) {
        g.setZero(k);
        hm.setZero(k, k);
        // Segment j joins pts[j] and pts[j+1]; reflection i sits at pts[i+1].
        for (int j = 0; j <= k; ++j) {
            const Vec d = fp.pts[j + 1] - fp.pts[j];
            const double l = d.norm();
            const Vec e = d / l;
            const int ia = j - 1;  // reflection index of the segment start
            const int ib = j;      // reflection index of the segment end
            if (ia >= 0) {
                const auto& A = fp.par[ia];
                const double ae = A.dp.dot(e);
                g[ia] -= ae;
                hm(ia, ia) += -A.ddp.dot(e) + (A.dp.squaredNorm() - ae * ae) / l;
            }
            if (ib < k) {
                const auto& B = fp.par[ib];
                const double be = B.dp.dot(e);
                g[ib] += be;
                hm(ib, ib) += B.ddp.dot(e) + (B.dp.squaredNorm() - be * be) / l;
            }
            if (ia >= 0 && ib < k) {
                const auto& A = fp.par[ia];
                const auto& B = fp.par[ib];
                const double c = -(A.dp.dot(B.dp) - A.dp.dot(e) * B.dp.dot(e)) / l;
                hm(ia, ib) += c;
                hm(ib, ia) += c;
            }
        }
    };

    FermatPath fp;
    build(s, fp);
    Eigen::VectorXd g;
    Eigen::MatrixXd hm;
    gradient_hessian(fp, g, hm);
    bool converged = false;
    for (int it = 0; it < 60; ++it) {
        const Eigen::VectorXd step = hm.fullPivLu().solve(-g);
        if (!step.allFinite())
            return std::nullopt;
        if (step.norm() < 1e-15 || g.norm() < 1e-15) {
            converged = true;
            break;
        }
        double lambda = 1.0;
        bool moved = false;
        for (int d = 0; d < 40; ++d) {
            const Eigen::VectorXd trial = s + lambda * step;
            FermatPath ft;
            build(trial, ft);
            Eigen::VectorXd gt;
            Eigen::MatrixXd ht;
            gradient_hessian(ft, gt, ht);
            if (gt.norm() < g.norm() || lambda * step.norm() < 1e-13) {
                s = trial;
                fp = std::move(ft);
                g = gt;
                hm = ht;
                moved = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!moved) {
            converged = g.norm() < 1e-10;
            break;
        }
        if (lambda * step.norm() < 1e-15) {
            converged = g.norm() < 1e-10;
            break;
        }
    }
    if (!converged && g.norm() < 1e-10)
        converged = true;
    if (!converged)
        return std::nullopt;

    // Validate: reflecting from outside, non-tangential, unobstructed.
    Trajectory tr;
    const double tol = 1e-7 * scene.scale();
    for (int j = 0; j <= k; ++j) {
        const Vec d = (fp.pts[j + 1] - fp.pts[j]).normalized();
        const int skip = j == 0 ? -1 : sequence[j - 1];
        const Hit hit = first_intersection(scene, fp.pts[j], d, skip);
        if (j < k) {
            if (hit.kind != Hit::Kind::Body || hit.body_id != sequence[j]
                || (hit.point - fp.pts[j + 1]).norm() > tol)
                return std::nullopt;
        }
        else if (hit.kind != Hit::Kind::ExitS0 || (hit.point - y).norm() > tol) {
            return std::nullopt;
        }
    }
    tr.entry = {x, (fp.pts[1] - x).normalized()};
    double min_inc = 1.0;
    for (int i = 0; i < k; ++i) {
        const Vec in = (fp.pts[i + 1] - fp.pts[i]).normalized();
        const Vec out = (fp.pts[i + 2] - fp.pts[i + 1]).normalized();
        const Vec n = outward_normal(*bodies[i], fp.pts[i + 1]);
        const double inc = -in.dot(n);
        if (inc < tangency_threshold)
            return std::nullopt;
        min_inc = std::min(min_inc, inc);
        tr.reflections.push_back({sequence[i], fp.pts[i + 1], in, out, n});
    }
    for (int j = 0; j <= k; ++j)
        tr.segment_lengths.push_back((fp.pts[j + 1] - fp.pts[j]).norm());
    double total = 0.0;
    for (double l : tr.segment_lengths)
        total += l;
    tr.total_time = total;
    tr.min_incidence = min_inc;
    tr.exit = PhasePoint{y, (y - fp.pts[k]).normalized()};
    tr.status = TraceStatus::Exited;
    return tr;
}

}  // namespace bscatter
