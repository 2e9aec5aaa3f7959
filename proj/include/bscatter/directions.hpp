#pragma once

#include "bscatter/spectrum.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bscatter {

/// Travelling times of one branch on a central-difference stencil around (x0, y0).
struct BranchPatch {
    double theta_x = 0.0;
    double theta_y = 0.0;
    double h = 1e-4;
    double t0 = 0.0;
    double t_xm = 0.0, t_xp = 0.0;  ///< x0 moved by -h / +h
    double t_ym = 0.0, t_yp = 0.0;  ///< y0 moved by -h / +h
    long branch_id = -1;
};

/// Oracle patch: stencil values by continuation of a known geodesic. Throws BranchBroken
/// when the branch does not survive the stencil.
BranchPatch make_patch(const Scene& scene, const Geodesic& g, double h);

/// Measured patch: stencil values chosen from the time sets of the stencil cells by the
/// Lipschitz gate |dt| <= factor * h * a and the smallest second difference.
BranchPatch make_patch(const TimeSource& source, const BoundingSphere& s0, double theta_x,
                       double theta_y, double t0, double h, double factor = 5.0);

struct Directions {
    Vec u = Vec::Zero();  ///< direction of travel at x0 (into the ball)
    Vec v = Vec::Zero();  ///< direction of travel at y0 (out of the ball)
};

/// Entry and exit directions from the first derivatives of the travelling time.
Directions recover_directions(const BoundingSphere& s0, const BranchPatch& patch);

/// Direction of arrival at x of a reflexive return with diagonal slope dS/dtheta.
/// Points out of the ball; tangential part is half the arc-length slope.
Vec recover_reflexive_direction(const BoundingSphere& s0, double theta, double slope);

struct ConvexCloudPoint {
    double theta = 0.0;
    Vec z = Vec::Zero();
    Vec normal = Vec::Zero();
};

/// Boundary of a single convex body from the minimum diagonal time at every cell.
/// Throws EmptyDiagonal when no cell carries a usable return.
std::vector<ConvexCloudPoint> single_convex_reconstruct(const BoundingSphere& s0,
                                                        const DiagData& data,
                                                        double lipschitz_factor = 5.0);

/// True iff the straight chord length is among the travelling times of the pair.
bool vacuous_line_test(const ChordProbe& probe, double theta_x, double theta_y,
                       double tol);

/// Chord of S0 cut by the line {q : <q - c, e(phi)> = p}. Returns false if |p| >= a.
bool line_chord(const BoundingSphere& s0, double phi, double p, double& theta_x,
                double& theta_y);

struct HullOptions {
    int directions = 360;
    int offset_steps = 2048;
    double tol_factor = 1e-6;  ///< vacuous tolerance relative to the S0 radius
    int threads = 0;
};

struct HullResult {
    std::vector<double> phi;
    /// Support value relative to the S0 center along e(phi); NaN when every chord
    /// in that direction was vacuous.
    std::vector<double> support;
    std::vector<Vec> polyline;  ///< vertices of the intersection of supporting half-planes
};

HullResult convex_hull_recover(const BoundingSphere& s0, const ChordProbe& probe,
                               const HullOptions& opts = {});

struct SeparatingLine {
    Vec point = Vec::Zero();
    Vec normal = Vec::UnitX();
    double phi = 0.0;
    double p = 0.0;
};

struct VacuousComponent {
    int id = 0;
    long cells = 0;
    bool trivial = false;  ///< touches the lines that barely cut S0
};

struct VacuousReport {
    int n_phi = 0;
    int n_p = 0;
    std::vector<VacuousComponent> components;
    std::optional<SeparatingLine> separating;
};

struct VacuousOptions {
    int n_phi = 180;  ///< line directions over [0, pi)
    int n_p = 4096;   ///< offsets over (-a, a)
    double tol_factor = 1e-6;
    int threads = 0;
};

/// Labels the path components of the vacuous-line set on an (angle, offset) grid, with
/// (phi + pi, p) identified with (phi, -p). A line from a non-trivial component
/// separates the obstacle; the one deepest inside the largest such component is returned.
VacuousReport vacuous_components(const BoundingSphere& s0, const ChordProbe& probe,
                                 const VacuousOptions& opts = {});

std::string hull_to_csv(const HullResult& hull);
std::string vacuous_report_json(const VacuousReport& rep);

}  // namespace bscatter
