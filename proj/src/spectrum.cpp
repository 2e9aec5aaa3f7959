#include "bscatter/spectrum.hpp"

#include "bscatter/io.hpp"
#include "bscatter/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

namespace bscatter {

Vec inward_direction(const Scene& scene, double theta, double alpha)
{
    const Vec nu = scene.s0.inward_normal(scene.s0.point_at(theta));
    return std::cos(alpha) * nu + std::sin(alpha) * perp(nu);
}

double direction_offset(const Scene& scene, double theta, const Vec& dir)
{
    const Vec nu = scene.s0.inward_normal(scene.s0.point_at(theta));
    return std::atan2(cross2(nu, dir), nu.dot(dir));
}

namespace {

std::vector<Vec> reflection_points(const Trajectory& tr)
{
    std::vector<Vec> pts;
    for (const auto& r : tr.reflections)
        pts.push_back(r.point);
    return pts;
}

std::optional<Geodesic> polish(const Scene& scene, const std::vector<int>& sequence,
                               double theta_x, double theta_y, const std::vector<Vec>& initial,
                               const TraceLimits& limits)
{
    const Vec x = scene.s0.point_at(theta_x);
    const Vec y = scene.s0.point_at(theta_y);
    auto tr = fermat_geodesic(scene, sequence, x, y, initial, limits.tangency_threshold);
    if (!tr)
        return std::nullopt;
    Geodesic g;
    g.theta_x = theta_x;
    g.theta_y = theta_y;
    g.alpha = direction_offset(scene, theta_x, tr->entry.u);
    g.t = tr->total_time;
    g.sequence = sequence;
    g.trajectory = std::move(*tr);
    return g;
}

struct Probe {
    double alpha = 0.0;
    bool exited = false;
    std::vector<int> seq;
    double exit_angle = 0.0;
    std::vector<double> headings;  // direction angle of every segment
};

class Sweeper {
public:
    Sweeper(const Scene& scene, double theta_x, double theta_y, const SweepOptions& opts)
        : scene_(scene), tx_(theta_x), ty_(theta_y), opts_(opts),
          x_(scene.s0.point_at(theta_x)), target_(scene.s0.point_at(theta_y))
    {
        limits_ = opts.limits;
        limits_.max_reflections = std::min(limits_.max_reflections, opts.max_reflections + 1);
    }

    std::vector<Geodesic> run()
    {
        const int n = opts_.directions;
        std::vector<Probe> probes(n);
        for (int j = 0; j < n; ++j)
            probes[j] = probe(-0.5 * kPi + kPi * (j + 0.5) / n);
        for (int j = 0; j + 1 < n; ++j)
            refine(probes[j], probes[j + 1], 0);
        std::sort(found_.begin(), found_.end(),
                  [](const Geodesic& a, const Geodesic& b) { return a.alpha < b.alpha; });
        return std::move(found_);
    }

private:
    Trajectory shoot(double alpha) const
    {
        return trace(scene_, {x_, inward_direction(scene_, tx_, alpha)}, limits_);
    }

    Probe probe(double alpha) const
    {
        Probe p;
        p.alpha = alpha;
        try {
            const Trajectory tr = shoot(alpha);
            if (tr.status != TraceStatus::Exited)
                return p;
            p.exited = true;
            p.seq = tr.body_sequence();
            p.exit_angle = scene_.s0.angle_of(tr.exit->x);
            p.headings.reserve(tr.reflections.size() + 1);
            p.headings.push_back(std::atan2(tr.entry.u.y(), tr.entry.u.x()));
            for (const auto& r : tr.reflections)
                p.headings.push_back(std::atan2(r.outgoing.y(), r.outgoing.x()));
        }
        catch (const Error&) {
            p.exited = false;
        }
        return p;
    }

    double offset(const Probe& p) const { return wrap_angle(p.exit_angle - ty_); }

    static double max_turn(const Probe& a, const Probe& b)
    {
        double m = std::abs(wrap_angle(a.exit_angle - b.exit_angle));
        for (std::size_t i = 0; i < a.headings.size(); ++i)
            m = std::max(m, std::abs(wrap_angle(a.headings[i] - b.headings[i])));
        return m;
    }

    void refine(const Probe& a, const Probe& b, int depth)
    {
        if (!a.exited && !b.exited)
            return;
        if (b.alpha - a.alpha < opts_.min_window || depth > 80)
            return;
        const bool same = a.exited && b.exited && a.seq == b.seq;
        if (same && max_turn(a, b) <= opts_.max_turn) {
            const double ga = offset(a);
            const double gb = offset(b);
            if ((ga < 0.0) != (gb < 0.0) && std::abs(ga - gb) < kPi)
                solve(a, b, depth);
            return;
        }
        const Probe m = probe(0.5 * (a.alpha + b.alpha));
        refine(a, m, depth + 1);
        refine(m, b, depth + 1);
    }

    // Illinois regula falsi on the exit offset within a window of fixed combinatorics.
    void solve(const Probe& pa, const Probe& pb, int depth)
    {
        double a = pa.alpha, b = pb.alpha;
        double fa = offset(pa), fb = offset(pb);
        int side = 0;
        double best = std::abs(fa) < std::abs(fb) ? a : b;
        double best_f = std::min(std::abs(fa), std::abs(fb));
        for (int it = 0; it < 200; ++it) {
            double c = (a * fb - b * fa) / (fb - fa);
            if (!(c > a && c < b))
                c = 0.5 * (a + b);
            const Probe pc = probe(c);
            if (!pc.exited || pc.seq != pa.seq) {
                // A thin window hid inside; refine both halves properly.
                refine(Probe{pa.alpha == a ? pa : probe(a)}, pc, depth + 1);
                refine(pc, Probe{pb.alpha == b ? pb : probe(b)}, depth + 1);
                return;
            }
            const double fc = offset(pc);
            if (std::abs(fc) < best_f) {
                best_f = std::abs(fc);
                best = c;
            }
            if (fc == 0.0)
                break;
            if ((fc < 0.0) == (fa < 0.0)) {
                a = c;
                fa = fc;
                if (side == -1)
                    fb *= 0.5;
                side = -1;
            }
            else {
                b = c;
                fb = fc;
                if (side == 1)
                    fa *= 0.5;
                side = 1;
            }
            if (b - a <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(a)))
                break;
        }
        Trajectory tr = shoot(best);
        if (tr.status != TraceStatus::Exited || tr.body_sequence() != pa.seq)
            return;
        if (auto pg = polish(scene_, pa.seq, tx_, ty_, reflection_points(tr), opts_.limits)) {
            found_.push_back(std::move(*pg));
            return;
        }
        Geodesic g;
        g.theta_x = tx_;
        g.theta_y = ty_;
        g.alpha = best;
        g.t = tr.total_time + tr.exit->u.dot(target_ - tr.exit->x);
        g.sequence = tr.body_sequence();
        g.trajectory = std::move(tr);
        found_.push_back(std::move(g));
    }

    const Scene& scene_;
    double tx_, ty_;
    SweepOptions opts_;
    TraceLimits limits_;
    Vec x_, target_;
    std::vector<Geodesic> found_;
};

}  // namespace

std::vector<Geodesic> find_geodesics(const Scene& scene, double theta_x, double theta_y,
                                     const SweepOptions& opts)
{
    if (scene.dim != 2)
        throw Error(ErrorCode::InvalidArgument, "direction sweeps are planar only");
    return Sweeper(scene, theta_x, theta_y, opts).run();
}

std::optional<Geodesic> continue_geodesic(const Scene& scene, const Geodesic& g,
                                          double theta_x, double theta_y,
                                          const TraceLimits& limits)
{
    if (auto pg = polish(scene, g.sequence, theta_x, theta_y,
                         reflection_points(g.trajectory), limits))
        return pg;
    const Vec x = scene.s0.point_at(theta_x);
    const Vec target = scene.s0.point_at(theta_y);
    struct Eval {
        bool ok = false;
        double f = 0.0;
        Trajectory tr;
    };
    auto eval = [&](double alpha) {
        Eval e;
        if (std::abs(alpha) >= 0.5 * kPi)
            return e;
        try {
            e.tr = trace(scene, {x, inward_direction(scene, theta_x, alpha)}, limits);
        }
        catch (const Error&) {
            return e;
        }
        if (e.tr.status != TraceStatus::Exited || e.tr.body_sequence() != g.sequence)
            return e;
        e.ok = true;
        e.f = wrap_angle(scene.s0.angle_of(e.tr.exit->x) - theta_y);
        return e;
    };

    double a0 = g.alpha;
    Eval e0 = eval(a0);
    if (!e0.ok)
        return std::nullopt;
    double step = 1e-7;
    double a1 = a0 + step;
    Eval e1 = eval(a1);
    if (!e1.ok) {
        a1 = a0 - step;
        e1 = eval(a1);
        if (!e1.ok)
            return std::nullopt;
    }
    for (int it = 0; it < 60; ++it) {
        if (std::abs(e1.f) < std::abs(e0.f)) {
            std::swap(a0, a1);
            std::swap(e0, e1);
        }
        if (std::abs(e0.f) < 1e-15)
            break;
        const double slope = (e1.f - e0.f) / (a1 - a0);
        if (slope == 0.0 || !std::isfinite(slope))
            break;
        double dx = -e0.f / slope;
        Eval en;
        double an = a0;
        for (int d = 0; d < 40; ++d) {
            an = a0 + dx;
            en = eval(an);
            if (en.ok && std::abs(en.f) < std::abs(e0.f))
                break;
            dx *= 0.5;
            en.ok = false;
        }
        if (!en.ok)
            break;
        a1 = a0;
        e1 = std::move(e0);
        a0 = an;
        e0 = std::move(en);
        if (std::abs(a1 - a0) < 1e-17)
            break;
    }
    if (std::abs(e0.f) > 1e-9)
        return std::nullopt;
    Geodesic out;
    out.theta_x = theta_x;
    out.theta_y = theta_y;
    out.alpha = a0;
    out.t = e0.tr.total_time + e0.tr.exit->u.dot(target - e0.tr.exit->x);
    out.sequence = g.sequence;
    out.trajectory = std::move(e0.tr);
    return out;
}

const char* to_string(DataMode m)
{
    return m == DataMode::Oracle ? "oracle" : "measured";
}

long branch_hash(const std::vector<int>& sequence)
{
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    mix(sequence.size());
    for (int b : sequence)
        mix(static_cast<std::uint64_t>(b) + 1);
    return static_cast<long>(h & 0x7fffffffull);
}

SpectrumDataset sample_spectrum(const Scene& scene, int x_res, int dir_res,
                                const TraceLimits& limits, int threads)
{
    if (scene.dim != 2)
        throw Error(ErrorCode::InvalidArgument, "spectrum sampling is planar only");
    SpectrumDataset out;
    out.scene_hash = scene_hash(scene);
    out.grid.x_res = x_res;
    out.grid.dir_res = dir_res;
    out.mode = DataMode::Oracle;
    std::vector<std::vector<SpectrumSample>> rows(x_res);
    std::vector<long> failures(x_res, 0);
    parallel_for(static_cast<std::size_t>(x_res), threads, [&](std::size_t i) {
        const double theta = kTwoPi * static_cast<double>(i) / x_res;
        const Vec x = scene.s0.point_at(theta);
        auto& row = rows[i];
        row.reserve(dir_res);
        for (int j = 0; j < dir_res; ++j) {
            const double alpha = -0.5 * kPi + kPi * (j + 0.5) / dir_res;
            Trajectory tr;
            try {
                tr = trace(scene, {x, inward_direction(scene, theta, alpha)}, limits);
            }
            catch (const Error&) {
                ++failures[i];
                continue;
            }
            if (tr.status != TraceStatus::Exited) {
                ++failures[i];
                continue;
            }
            SpectrumSample s;
            s.x_angle = theta;
            s.y_angle = wrap_positive(scene.s0.angle_of(tr.exit->x));
            s.t = tr.total_time;
            s.k = static_cast<int>(tr.reflection_count());
            s.branch_id = branch_hash(tr.body_sequence());
            s.u = tr.entry.u;
            s.v = tr.exit->u;
            row.push_back(s);
        }
    });
    for (int i = 0; i < x_res; ++i) {
        out.samples.insert(out.samples.end(), rows[i].begin(), rows[i].end());
        out.failed_rays += failures[i];
    }
    return out;
}

SpectrumDataset to_measured(const SpectrumDataset& data)
{
    SpectrumDataset out = data;
    out.mode = DataMode::Measured;
    for (auto& s : out.samples) {
        s.k = -1;
        s.branch_id = -1;
        s.u.reset();
        s.v.reset();
    }
    return out;
}

DiagData diag_spectrum(const Scene& scene, const DiagOptions& opts)
{
    const int n = opts.resolution;
    const double h = opts.stencil_h;
    DiagData out;
    out.scene_hash = scene_hash(scene);
    out.mode = DataMode::Oracle;
    out.resolution = n;
    out.stencil_h = h;
    out.cells.resize(n);
    std::vector<long> lost(n, 0);
    parallel_for(static_cast<std::size_t>(n), opts.threads, [&](std::size_t i) {
        const double theta = kTwoPi * static_cast<double>(i) / n;
        DiagCell& cell = out.cells[i];
        cell.index = static_cast<int>(i);
        cell.theta = theta;
        const auto roots = find_geodesics(scene, theta, theta, opts.sweep);
        for (const auto& g : roots) {
            cell.t0.push_back(g.t);
            DiagRoot r;
            r.t = g.t;
            r.k = static_cast<int>(g.sequence.size());
            r.branch_id = branch_hash(g.sequence);
            r.u = g.u();
            r.v = g.v();
            r.reflexive = (r.u + r.v).norm() < 1e-6;
            cell.oracle.push_back(r);
            const std::pair<double, double> offsets[4] = {
                {-h, -h}, {h, h}, {0.0, -h}, {0.0, h}};
            std::vector<double>* slots[4] = {&cell.mm, &cell.pp, &cell.zm, &cell.zp};
            for (int s = 0; s < 4; ++s) {
                const auto c = continue_geodesic(scene, g, theta + offsets[s].first,
                                                 theta + offsets[s].second,
                                                 opts.sweep.limits);
                if (c)
                    slots[s]->push_back(c->t);
                else
                    ++lost[i];
            }
        }
    });
    for (long l : lost)
        out.lost_branches += l;
    return out;
}

DiagData to_measured(const DiagData& data)
{
    DiagData out = data;
    out.mode = DataMode::Measured;
    for (auto& c : out.cells) {
        c.oracle.clear();
        for (auto* v : {&c.t0, &c.mm, &c.pp, &c.zm, &c.zp})
            std::sort(v->begin(), v->end());
    }
    return out;
}

SpectrumDataset diag_to_dataset(const DiagData& data)
{
    SpectrumDataset out;
    out.scene_hash = data.scene_hash;
    out.mode = data.mode;
    out.grid.diag_res = data.resolution;
    out.grid.stencil_h = data.stencil_h;
    const double h = data.stencil_h;
    for (const auto& c : data.cells) {
        auto emit = [&](double dx, double dy, const std::vector<double>& ts, bool centre) {
            for (std::size_t r = 0; r < ts.size(); ++r) {
                SpectrumSample s;
                s.x_angle = wrap_positive(c.theta + dx);
                s.y_angle = wrap_positive(c.theta + dy);
                s.t = ts[r];
                if (centre && data.mode == DataMode::Oracle && r < c.oracle.size()) {
                    s.k = c.oracle[r].k;
                    s.branch_id = c.oracle[r].branch_id;
                    s.u = c.oracle[r].u;
                    s.v = c.oracle[r].v;
                }
                out.samples.push_back(s);
            }
        };
        emit(0.0, 0.0, c.t0, true);
        emit(-h, -h, c.mm, false);
        emit(h, h, c.pp, false);
        emit(0.0, -h, c.zm, false);
        emit(0.0, h, c.zp, false);
    }
    return out;
}

DiagData dataset_to_diag(const SpectrumDataset& data)
{
    const int n = data.grid.diag_res;
    const double h = data.grid.stencil_h;
    if (n <= 0 || h <= 0.0)
        throw Error(ErrorCode::InvalidArgument, "dataset carries no diagonal grid");
    DiagData out;
    out.scene_hash = data.scene_hash;
    out.mode = data.mode;
    out.resolution = n;
    out.stencil_h = h;
    out.cells.resize(n);
    for (int i = 0; i < n; ++i) {
        out.cells[i].index = i;
        out.cells[i].theta = kTwoPi * i / n;
    }
    for (const auto& s : data.samples) {
        const double dx = wrap_angle(s.x_angle - std::round(s.x_angle * n / kTwoPi) * kTwoPi / n);
        const double base_x = s.x_angle - dx;
        const int i = static_cast<int>(std::lround(wrap_positive(base_x) * n / kTwoPi)) % n;
        DiagCell& c = out.cells[i];
        const double rx = wrap_angle(s.x_angle - c.theta);
        const double ry = wrap_angle(s.y_angle - c.theta);
        const int cx = rx < -0.5 * h ? -1 : (rx > 0.5 * h ? 1 : 0);
        const int cy = ry < -0.5 * h ? -1 : (ry > 0.5 * h ? 1 : 0);
        if (cx == 0 && cy == 0) {
            c.t0.push_back(s.t);
            if (s.k >= 0) {
                DiagRoot r;
                r.t = s.t;
                r.k = s.k;
                r.branch_id = s.branch_id;
                c.oracle.push_back(r);
            }
        }
        else if (cx == -1 && cy == -1)
            c.mm.push_back(s.t);
        else if (cx == 1 && cy == 1)
            c.pp.push_back(s.t);
        else if (cx == 0 && cy == -1)
            c.zm.push_back(s.t);
        else if (cx == 0 && cy == 1)
            c.zp.push_back(s.t);
    }
    return out;
}

Vec echo_point(const Scene& scene, double theta, double t)
{
    const Vec x = scene.s0.point_at(theta);
    return x + 0.5 * t * scene.s0.inward_normal(x);
}

bool stencil_pair(const std::vector<double>& minus, const std::vector<double>& plus,
                  double t0, double h, double a, double factor, double& tm, double& tp)
{
    const double gate = factor * h * a;
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (double m : minus) {
        if (std::abs(m - t0) > gate)
            continue;
        for (double p : plus) {
            if (std::abs(p - t0) > gate)
                continue;
            const double d2 = std::abs(p - 2.0 * t0 + m);
            if (d2 < best) {
                best = d2;
                tm = m;
                tp = p;
                found = true;
            }
        }
    }
    return found;
}

std::vector<EchoPoint> echograph(const Scene& scene, const DiagData& data,
                                 const EchoOptions& opts)
{
    std::vector<EchoPoint> out;
    const double a = scene.scale();
    const double h = data.stencil_h;
    for (const auto& c : data.cells) {
        for (std::size_t r = 0; r < c.t0.size(); ++r) {
            EchoPoint e;
            e.cell = c.index;
            e.x_angle = c.theta;
            e.x = scene.s0.point_at(c.theta);
            e.t = c.t0[r];
            e.w = echo_point(scene, c.theta, e.t);
            double tm = 0, tp = 0, ym = 0, yp = 0;
            const bool diag_ok = stencil_pair(c.mm, c.pp, e.t, h, a, opts.lipschitz_factor, tm, tp);
            const bool off_ok = stencil_pair(c.zm, c.zp, e.t, h, a, opts.lipschitz_factor, ym, yp);
            e.stencil_ok = diag_ok && off_ok;
            if (diag_ok)
                e.slope = (tp - tm) / (2.0 * h);
            const bool oracle = data.mode == DataMode::Oracle && r < c.oracle.size();
            // Roots restored from a dataset file carry the reflection count but no
            // directions; their reflexivity is then decided from the stencil.
            if (oracle && c.oracle[r].u.squaredNorm() > 0.0) {
                e.reflexive = c.oracle[r].reflexive;
            }
            else if (e.stencil_ok) {
                const double off_slope = (yp - ym) / (2.0 * h);
                e.reflexive = std::abs(off_slope - 0.5 * e.slope) <= opts.reflexive_tol * a;
            }
            if (oracle && e.reflexive)
                e.order = (c.oracle[r].k + 1) / 2;
            out.push_back(e);
        }
    }
    return out;
}

DistinctReport distinct_times_check(const SpectrumDataset& data, double coincidence_tol)
{
    const int n = data.grid.x_res;
    if (n <= 0)
        throw Error(ErrorCode::InvalidArgument, "dataset has no x grid");
    std::map<std::pair<long, long>, std::vector<const SpectrumSample*>> cells;
    for (const auto& s : data.samples) {
        const long ix = std::lround(s.x_angle * n / kTwoPi) % n;
        const long iy = std::lround(s.y_angle * n / kTwoPi) % n;
        cells[{ix, iy}].push_back(&s);
    }
    DistinctReport rep;
    rep.min_gap = std::numeric_limits<double>::infinity();
    for (const auto& [key, list] : cells) {
        ++rep.cells;
        bool any = false;
        for (std::size_t i = 0; i < list.size(); ++i) {
            for (std::size_t j = i + 1; j < list.size(); ++j) {
                if (list[i]->branch_id == list[j]->branch_id)
                    continue;
                any = true;
                ++rep.pairs;
                const double gap = std::abs(list[i]->t - list[j]->t);
                rep.min_gap = std::min(rep.min_gap, gap);
                if (gap < coincidence_tol)
                    ++rep.coincidences;
            }
        }
        if (any)
            ++rep.cells_with_pairs;
    }
    rep.fraction = rep.pairs == 0 ? 0.0
                                  : static_cast<double>(rep.coincidences) / rep.pairs;
    return rep;
}

LiveChordProbe::LiveChordProbe(const Scene& scene, TraceLimits limits)
    : scene_(scene), limits_(limits)
{
}

bool LiveChordProbe::straight_time_present(double theta_x, double theta_y, double tol) const
{
    const Vec x = scene_.s0.point_at(theta_x);
    const Vec y = scene_.s0.point_at(theta_y);
    const double chord = (y - x).norm();
    if (chord < tol)
        return true;
    Trajectory tr;
    try {
        tr = trace(scene_, {x, (y - x) / chord}, limits_);
    }
    catch (const Error&) {
        return false;
    }
    if (tr.status != TraceStatus::Exited)
        return false;
    return std::abs(tr.total_time - chord) <= tol && (tr.exit->x - y).norm() <= tol;
}

DatasetChordProbe::DatasetChordProbe(const Scene& scene, const SpectrumDataset& data,
                                     double snap)
    : s0_(scene.s0), snap_(snap), x_res_(data.grid.x_res), by_x_(data.grid.x_res)
{
    if (x_res_ <= 0)
        throw Error(ErrorCode::InvalidArgument, "dataset has no x grid");
    for (const auto& s : data.samples) {
        const long ix = std::lround(s.x_angle * x_res_ / kTwoPi) % x_res_;
        by_x_[ix].emplace_back(s.y_angle, s.t);
    }
}

bool DatasetChordProbe::straight_time_present(double theta_x, double theta_y,
                                              double tol) const
{
    const long ix = std::lround(wrap_positive(theta_x) * x_res_ / kTwoPi) % x_res_;
    const double xa = kTwoPi * ix / x_res_;
    const Vec x = s0_.point_at(xa);
    bool near = false;
    for (const auto& [ya, t] : by_x_[ix]) {
        if (std::abs(wrap_angle(ya - theta_y)) > snap_)
            continue;
        near = true;
        if (std::abs(t - (s0_.point_at(ya) - x).norm()) <= tol)
            return true;
    }
    if (!near)
        throw Error(ErrorCode::MissingCell, "no dataset sample near the requested chord");
    return false;
}

LiveTimeSource::LiveTimeSource(const Scene& scene, SweepOptions opts)
    : scene_(scene), opts_(opts)
{
}

std::vector<double> LiveTimeSource::times(double theta_x, double theta_y) const
{
    std::vector<double> out;
    for (const auto& g : find_geodesics(scene_, theta_x, theta_y, opts_))
        out.push_back(g.t);
    std::sort(out.begin(), out.end());
    return out;
}

std::string dataset_to_csv(const SpectrumDataset& data)
{
    std::string out = "x_angle_rad,y_angle_rad,t,k,branch_id,mode\n";
    const char* mode = to_string(data.mode);
    for (const auto& s : data.samples) {
        out += format_double(s.x_angle);
        out += ',';
        out += format_double(s.y_angle);
        out += ',';
        out += format_double(s.t);
        out += ',';
        out += std::to_string(s.k);
        out += ',';
        out += std::to_string(s.branch_id);
        out += ',';
        out += mode;
        out += '\n';
    }
    return out;
}

SpectrumDataset dataset_from_csv(const std::string& text)
{
    SpectrumDataset out;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("x_angle_rad", 0) != 0)
        throw Error(ErrorCode::Io, "dataset CSV header missing");
    bool mode_set = false;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto f = split_csv_line(line);
        if (f.size() != 6)
            throw Error(ErrorCode::Io, "dataset row must have 6 fields");
        SpectrumSample s;
        s.x_angle = parse_double(f[0]);
        s.y_angle = parse_double(f[1]);
        s.t = parse_double(f[2]);
        s.k = static_cast<int>(parse_int(f[3]));
        s.branch_id = parse_int(f[4]);
        if (!mode_set) {
            out.mode = f[5] == "oracle" ? DataMode::Oracle : DataMode::Measured;
            mode_set = true;
        }
        out.samples.push_back(s);
    }
    return out;
}

std::string dataset_manifest_json(const SpectrumDataset& data)
{
    nlohmann::ordered_json j;
    j["scene_hash"] = data.scene_hash;
    j["mode"] = to_string(data.mode);
    j["grid"]["x_res"] = data.grid.x_res;
    j["grid"]["dir_res"] = data.grid.dir_res;
    j["grid"]["diag_res"] = data.grid.diag_res;
    j["grid"]["stencil_h"] = data.grid.stencil_h;
    j["samples"] = data.samples.size();
    j["failed_rays"] = data.failed_rays;
    return j.dump(2) + "\n";
}

void apply_dataset_manifest(SpectrumDataset& data, const std::string& json_text)
{
    try {
        const auto j = nlohmann::json::parse(json_text);
        data.scene_hash = j.value("scene_hash", std::string());
        data.mode = j.value("mode", std::string("oracle")) == "oracle" ? DataMode::Oracle
                                                                       : DataMode::Measured;
        const auto& g = j.at("grid");
        data.grid.x_res = g.value("x_res", 0);
        data.grid.dir_res = g.value("dir_res", 0);
        data.grid.diag_res = g.value("diag_res", 0);
        data.grid.stencil_h = g.value("stencil_h", 0.0);
        data.failed_rays = j.value("failed_rays", 0L);
    }
    catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Io, std::string("bad dataset manifest: ") + e.what());
    }
}

std::string echograph_to_csv(const std::vector<EchoPoint>& points)
{
    std::string out = "x_angle_rad,t,w1,w2,reflexive,order\n";
    for (const auto& e : points) {
        out += format_double(e.x_angle) + ',' + format_double(e.t) + ','
               + format_double(e.w.x()) + ',' + format_double(e.w.y()) + ','
               + (e.reflexive ? "1" : "0") + ',' + std::to_string(e.order) + '\n';
    }
    return out;
}

}  // namespace bscatter
