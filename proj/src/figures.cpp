#include "bscatter/figures.hpp"

#include "bscatter/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>

namespace bscatter {

namespace {

std::string num(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 5);
    std::string s(buf, r.ptr);
    while (!s.empty() && s.back() == '0')
        s.pop_back();
    if (!s.empty() && s.back() == '.')
        s.pop_back();
    if (s == "-0")
        s = "0";
    return s;
}

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string rgb(int r, int g, int b)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

/// Body colour, mixed towards white as the level grows.
std::string level_colour(int body, int level)
{
    const double f = std::min(0.7, 0.13 * std::max(0, level - 1));
    const int base[2][3] = {{205, 25, 30}, {25, 70, 200}};
    const int* c = base[body == 2 ? 1 : 0];
    auto mix = [&](int v) { return static_cast<int>(v + f * (255 - v) + 0.5); };
    return rgb(mix(c[0]), mix(c[1]), mix(c[2]));
}

void draw_scene_bodies(SvgCanvas& svg, const Scene& scene, const std::string& stroke,
                       double width, const std::string& dash = {})
{
    for (const auto& b : scene.bodies)
        svg.polyline(boundary_samples(b, 2, 720), stroke, width, dash, true);
}

/// Splits an ordered point run wherever consecutive points jump by more than `gap`.
std::vector<std::vector<Vec>> split_runs(const std::vector<Vec>& pts, double gap)
{
    std::vector<std::vector<Vec>> runs;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i == 0 || (pts[i] - pts[i - 1]).norm() > gap)
            runs.emplace_back();
        runs.back().push_back(pts[i]);
    }
    return runs;
}

}  // namespace

SvgCanvas::SvgCanvas(const BoundingSphere& s0, double margin)
{
    const double half = s0.radius * (1.0 + margin);
    x0_ = s0.center.x() - half;
    y0_ = -s0.center.y() - half;
    w_ = 2.0 * half;
}

std::string SvgCanvas::xy(const Vec& p) const { return num(p.x()) + ',' + num(-p.y()); }

void SvgCanvas::comment(const std::string& text)
{
    std::string t = text;
    std::size_t pos;
    while ((pos = t.find("--")) != std::string::npos)
        t.replace(pos, 2, "- -");
    body_ += "<!-- " + t + " -->\n";
}

void SvgCanvas::begin_group(const std::string& id, const std::string& title)
{
    body_ += "<g id=\"" + escape(id) + "\">\n";
    if (!title.empty())
        body_ += "<title>" + escape(title) + "</title>\n";
}

void SvgCanvas::end_group() { body_ += "</g>\n"; }

void SvgCanvas::circle(const Vec& c, double r, const std::string& stroke, double width,
                       const std::string& fill)
{
    body_ += "<circle cx=\"" + num(c.x()) + "\" cy=\"" + num(-c.y()) + "\" r=\"" + num(r)
             + "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\" fill=\""
             + fill + "\"/>\n";
}

void SvgCanvas::line(const Vec& a, const Vec& b, const std::string& stroke, double width,
                     const std::string& dash)
{
    body_ += "<line x1=\"" + num(a.x()) + "\" y1=\"" + num(-a.y()) + "\" x2=\"" + num(b.x())
             + "\" y2=\"" + num(-b.y()) + "\" stroke=\"" + stroke + "\" stroke-width=\""
             + num(width) + "\"";
    if (!dash.empty())
        body_ += " stroke-dasharray=\"" + dash + "\"";
    body_ += "/>\n";
}

void SvgCanvas::polyline(const std::vector<Vec>& pts, const std::string& stroke, double width,
                         const std::string& dash, bool closed)
{
    if (pts.size() < 2)
        return;
    body_ += closed ? "<polygon points=\"" : "<polyline points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i)
            body_ += ' ';
        body_ += xy(pts[i]);
    }
    body_ += "\" fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width)
             + "\" stroke-linejoin=\"round\"";
    if (!dash.empty())
        body_ += " stroke-dasharray=\"" + dash + "\"";
    body_ += "/>\n";
}

void SvgCanvas::dots(const std::vector<Vec>& pts, double r, const std::string& fill)
{
    if (pts.empty())
        return;
    // One path of tiny circles keeps large point clouds compact.
    body_ += "<path fill=\"" + fill + "\" d=\"";
    const std::string rr = num(r), dd = num(2.0 * r);
    for (const Vec& p : pts) {
        body_ += 'M' + num(p.x() - r) + ',' + num(-p.y()) + 'a' + rr + ',' + rr + " 0 1,0 "
                 + dd + ",0a" + rr + ',' + rr + " 0 1,0 -" + dd + ",0";
    }
    body_ += "\"/>\n";
}

void SvgCanvas::text(const Vec& at, const std::string& s, double size, const std::string& fill)
{
    body_ += "<text x=\"" + num(at.x()) + "\" y=\"" + num(-at.y()) + "\" font-size=\""
             + num(size) + "\" font-family=\"sans-serif\" fill=\"" + fill + "\">" + escape(s)
             + "</text>\n";
}

std::string SvgCanvas::str() const
{
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
           "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\""
           + num(x0_) + ' ' + num(y0_) + ' ' + num(w_) + ' ' + num(w_) + "\">\n"
           + "<rect x=\"" + num(x0_) + "\" y=\"" + num(y0_) + "\" width=\"" + num(w_)
           + "\" height=\"" + num(w_) + "\" fill=\"white\"/>\n" + body_ + "</svg>\n";
}

std::string trajectories_to_csv(const std::vector<Trajectory>& rays, int dim)
{
    std::string out = dim == 3 ? "ray,seg_index,x1,x2,x3,body_id,t_cumulative\n"
                               : "ray,seg_index,x1,x2,body_id,t_cumulative\n";
    for (std::size_t r = 0; r < rays.size(); ++r) {
        const Trajectory& tr = rays[r];
        const auto verts = tr.vertices();
        double t = 0.0;
        for (std::size_t i = 0; i < verts.size(); ++i) {
            if (i > 0 && i - 1 < tr.segment_lengths.size())
                t += tr.segment_lengths[i - 1];
            int body = 0;
            if (i >= 1 && i <= tr.reflections.size())
                body = tr.reflections[i - 1].body_id;
            out += std::to_string(r) + ',' + std::to_string(i);
            for (int d = 0; d < dim; ++d)
                out += ',' + format_double(verts[i][d]);
            out += ',' + std::to_string(body) + ',' + format_double(t) + '\n';
        }
    }
    return out;
}

std::string simulation_svg(const Scene& scene, const std::vector<Trajectory>& rays,
                           const std::string& config_hash)
{
    SvgCanvas svg(scene.s0);
    const double a = scene.s0.radius;
    svg.comment("config " + config_hash);
    svg.circle(scene.s0.center, a, "#333333", 0.004 * a);
    svg.begin_group("bodies");
    for (const auto& b : scene.bodies)
        svg.polyline(boundary_samples(b, 2, 720), "#000000", 0.004 * a, {}, true);
    svg.end_group();
    svg.begin_group("rays");
    for (const auto& tr : rays) {
        const std::string colour = tr.status == TraceStatus::Exited ? "#1f77b4" : "#d62728";
        svg.polyline(tr.vertices(), colour, 0.002 * a);
    }
    svg.end_group();
    if (!rays.empty())
        svg.circle(rays.front().entry.x, 0.012 * a, "none", 0.0, "#000000");
    return svg.str();
}

std::string echograph_svg(const BoundingSphere& s0, const std::vector<EchoPoint>& echo,
                          const Segmentation* seg, const Seeds* seeds,
                          const std::string& config_hash)
{
    SvgCanvas svg(s0);
    const double a = s0.radius;
    svg.comment("config " + config_hash);
    svg.circle(s0.center, a, "#333333", 0.004 * a);

    std::vector<char> drawn(echo.size(), 0);
    if (seg) {
        std::vector<const EchoArc*> labelled;
        for (const auto& arc : seg->arcs)
            if (arc.level > 0)
                labelled.push_back(&arc);
        // Deeper levels first so the innermost arcs stay on top.
        std::stable_sort(labelled.begin(), labelled.end(),
                         [](const EchoArc* x, const EchoArc* y) { return x->level > y->level; });
        for (const EchoArc* arc : labelled) {
            std::vector<Vec> pts;
            for (int i : arc->points) {
                pts.push_back(seg->echo[i].w);
                drawn[i] = 1;
            }
            const std::string id = "arc-b" + std::to_string(arc->body) + "-k"
                                   + std::to_string(arc->level) + "-" + to_string(arc->side);
            svg.begin_group(id, "body " + std::to_string(arc->body) + ", level "
                                    + std::to_string(arc->level) + ", side "
                                    + to_string(arc->side));
            for (const auto& run : split_runs(pts, 0.05 * a))
                svg.polyline(run, level_colour(arc->body, arc->level), 0.005 * a,
                             arc->side == Side::Right ? "0.04,0.02" : "");
            svg.end_group();
        }
    }
    std::vector<Vec> grey, light;
    const auto& pts = seg ? seg->echo : echo;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (drawn.size() == pts.size() && drawn[i])
            continue;
        (pts[i].reflexive ? grey : light).push_back(pts[i].w);
    }
    svg.begin_group("unlabelled");
    svg.dots(light, 0.003 * a, "#c8c8c8");
    svg.dots(grey, 0.003 * a, "#707070");
    svg.end_group();

    if (seeds) {
        svg.begin_group("seeds", "cusp at x_K");
        svg.line(seeds->x_K, seeds->z_K, "#000000", 0.003 * a, "0.03,0.015");
        svg.circle(seeds->x_K, 0.012 * a, "none", 0.0, "#000000");
        svg.circle(seeds->z_K, 0.012 * a, "#000000", 0.003 * a);
        svg.text(seeds->x_K + 0.04 * a * (seeds->x_K - s0.center).normalized(), "x_K",
                 0.05 * a, "#000000");
        if (seeds->has_second) {
            svg.line(seeds->x2, seeds->z2, "#000000", 0.003 * a, "0.03,0.015");
            svg.circle(seeds->x2, 0.012 * a, "none", 0.0, "#000000");
            svg.circle(seeds->z2, 0.012 * a, "#000000", 0.003 * a);
            svg.text(seeds->x2 + 0.04 * a * (seeds->x2 - s0.center).normalized(), "x_2",
                     0.05 * a, "#000000");
        }
        svg.end_group();
    }
    return svg.str();
}

std::string reconstruction_svg(const BoundingSphere& s0, const ReconstructionState& st,
                               const Scene* truth, const std::string& config_hash)
{
    SvgCanvas svg(s0);
    const double a = s0.radius;
    svg.comment("config " + config_hash);
    svg.circle(s0.center, a, "#333333", 0.004 * a);

    std::vector<Vec> echo_pts;
    for (const auto& e : st.segmentation.echo)
        if (e.reflexive)
            echo_pts.push_back(e.w);
    svg.begin_group("echograph");
    svg.dots(echo_pts, 0.0025 * a, "#dddddd");
    svg.end_group();

    if (truth) {
        svg.begin_group("true-boundary");
        draw_scene_bodies(svg, *truth, "#000000", 0.002 * a);
        svg.end_group();
    }
    if (st.seeds.H) {
        const auto& H = *st.seeds.H;
        const Vec d = perp(H.normal);
        svg.line(H.point - 2.0 * a * d, H.point + 2.0 * a * d, "#999999", 0.002 * a,
                 "0.05,0.03");
    }
    for (const auto& arc : st.arcs) {
        if (arc.points.empty())
            continue;
        std::vector<Vec> pts;
        for (const auto& p : arc.points)
            pts.push_back(p.z);
        svg.begin_group("z-b" + std::to_string(arc.body) + "-k" + std::to_string(arc.level)
                        + "-" + to_string(arc.side));
        svg.dots(pts, 0.004 * a, level_colour(arc.body, arc.level));
        svg.end_group();
    }
    if (st.z_inf) {
        svg.circle(st.z_inf->first, 0.015 * a, "#000000", 0.003 * a);
        svg.circle(st.z_inf->second, 0.015 * a, "#000000", 0.003 * a);
        svg.line(st.z_inf->first, st.z_inf->second, "#000000", 0.002 * a);
    }
    return svg.str();
}

}  // namespace bscatter
