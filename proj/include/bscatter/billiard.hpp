#pragma once

#include "bscatter/scene.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace bscatter {

/// A point of S0 together with a unit direction.
struct PhasePoint {
    Vec x = Vec::Zero();
    Vec u = Vec::UnitX();
};

struct Reflection {
    int body_id = -1;
    Vec point = Vec::Zero();
    Vec incoming = Vec::Zero();
    Vec outgoing = Vec::Zero();
    Vec normal = Vec::Zero();  ///< outward normal of the body at point
};

enum class TraceStatus { Exited, BudgetTrapped, TangencyDetected };

const char* to_string(TraceStatus s);

struct Trajectory {
    PhasePoint entry;
    std::vector<Reflection> reflections;
    std::optional<PhasePoint> exit;
    std::vector<double> segment_lengths;
    double total_time = 0.0;
    TraceStatus status = TraceStatus::Exited;
    /// Smallest |<incoming, normal>| over all reflections (1 when there are none).
    double min_incidence = 1.0;

    std::vector<int> body_sequence() const;
    std::size_t reflection_count() const { return reflections.size(); }
    /// Entry, reflection points and exit (when present) in order.
    std::vector<Vec> vertices() const;
};

struct TraceLimits {
    int max_reflections = 200;
    /// Defaults to 100 times the S0 radius when unset.
    std::optional<double> max_time;
    double tangency_threshold = 1e-7;

    double time_budget(const Scene& scene) const
    {
        return max_time ? *max_time : 100.0 * scene.scale();
    }
};

struct Hit {
    enum class Kind { Body, ExitS0, None };
    Kind kind = Kind::None;
    int body_id = -1;
    Vec point = Vec::Zero();
    double length = 0.0;
};

/// Nearest forward intersection with a body boundary, else the forward exit through S0.
/// Bodies whose boundary contains the origin and which the ray leaves are skipped via
/// skip_body. Throws NumericalFailure when bracketing of a generic body fails.
Hit first_intersection(const Scene& scene, const Vec& origin, const Vec& direction,
                       int skip_body = -1);

/// Specular reflection out = in - 2<in,n>n. Throws TangentIncidence when
/// |<in,n>| < tangency_threshold.
Vec reflect(const Vec& incoming, const Vec& normal, double tangency_threshold = 1e-7);

/// Traces the simply reflecting ray entering the ball at entry.x with direction entry.u.
Trajectory trace(const Scene& scene, const PhasePoint& entry, const TraceLimits& limits = {});

/// Same tracer started at an interior point of the exterior domain (possibly on a body
/// boundary, in which case that body is skipped for the first segment).
Trajectory trace_from_interior(const Scene& scene, const Vec& origin, const Vec& direction,
                               const TraceLimits& limits = {});

struct CrossSectionResult {
    PhasePoint exit;
    Trajectory trajectory;
};

/// The cross-section map: entry phase point to exit phase point. Throws Trapped or
/// Tangency when the ray does not exit cleanly.
CrossSectionResult cross_section_map(const Scene& scene, const PhasePoint& entry,
                                     const TraceLimits& limits = {});

/// Orthonormal basis of the tangent space of the unit sphere (or circle) at n.
/// Planar: the counterclockwise perpendicular. 3D: Gram-Schmidt on the two axes where
/// n has its smallest components.
std::vector<Vec> tangent_basis(const Vec& n, int dim);

struct RegularityResult {
    Eigen::MatrixXd jacobian;  ///< (n-1)x(n-1), exit displacement per unit direction change
    double det = 0.0;
    bool regular = false;
};

/// Central finite-difference Jacobian of omega -> exit point of the ray from x0.
RegularityResult regularity_jacobian(const Scene& scene, const Vec& x0, const Vec& omega0,
                                     double h = 1e-6, const TraceLimits& limits = {});

/// Continues a regular simply reflecting (x,y)-geodesic to nearby endpoints by damped
/// Newton iteration on the entry direction. Keeps the body sequence of the seed.
/// Throws NoConvergence or CombinatoricsChanged.
Trajectory two_point_continuation(const Scene& scene, const Trajectory& seed,
                                  const Vec& target_x, const Vec& target_y,
                                  const TraceLimits& limits = {});

/// Planar (x, y)-geodesic with a prescribed body sequence, found as the stationary
/// point of the path length over the reflection-point parameters (Newton on the
/// tridiagonal length Hessian). `initial` holds one starting point per reflection.
/// The result is checked to be a genuine simply reflecting ray; nothing is returned
/// when Newton fails or the stationary path is obstructed or not reflecting.
std::optional<Trajectory> fermat_geodesic(const Scene& scene, const std::vector<int>& sequence,
                                          const Vec& x, const Vec& y,
                                          const std::vector<Vec>& initial,
                                          double tangency_threshold = 1e-7);

}  // namespace bscatter
