#pragma once

#include "bscatter/reconstruct.hpp"

#include <string>
#include <vector>

namespace bscatter {

/// Minimal SVG writer in scene coordinates. The viewBox frames S0 with a margin and the
/// second axis points up; stroke widths and radii are given in scene units.
class SvgCanvas {
public:
    explicit SvgCanvas(const BoundingSphere& s0, double margin = 0.06);

    void comment(const std::string& text);
    void begin_group(const std::string& id, const std::string& title = {});
    void end_group();
    void circle(const Vec& c, double r, const std::string& stroke, double width,
                const std::string& fill = "none");
    void line(const Vec& a, const Vec& b, const std::string& stroke, double width,
              const std::string& dash = {});
    void polyline(const std::vector<Vec>& pts, const std::string& stroke, double width,
                  const std::string& dash = {}, bool closed = false);
    void dots(const std::vector<Vec>& pts, double r, const std::string& fill);
    void text(const Vec& at, const std::string& s, double size, const std::string& fill);

    std::string str() const;

private:
    std::string xy(const Vec& p) const;
    double x0_, y0_, w_;
    std::string body_;
};

/// One row per trajectory vertex: ray, seg_index, x1, x2[, x3], body_id, t_cumulative.
/// body_id 0 marks the entry and exit points on S0.
std::string trajectories_to_csv(const std::vector<Trajectory>& rays, int dim);

/// S0, the bodies and the rays as polylines.
std::string simulation_svg(const Scene& scene, const std::vector<Trajectory>& rays,
                           const std::string& config_hash);

/// Echograph figure. Labelled arcs are drawn per body (red for body 1, blue for body 2,
/// lighter with level, dashed on the right side); unlabelled reflexive points in grey and
/// non-reflexive returns in light grey. The cusp at x_K is marked when seeds are given.
std::string echograph_svg(const BoundingSphere& s0, const std::vector<EchoPoint>& echo,
                          const Segmentation* seg, const Seeds* seeds,
                          const std::string& config_hash);

/// Reconstructed boundary over the faint echograph, with the z_inf estimates. When
/// `truth` is given its bodies are drawn as thin black outlines.
std::string reconstruction_svg(const BoundingSphere& s0, const ReconstructionState& st,
                               const Scene* truth, const std::string& config_hash);

}  // namespace bscatter
