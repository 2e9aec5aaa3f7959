#pragma once

#include "bscatter/directions.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bscatter {

struct Seeds {
    double rho_K = 0.0;
    double theta_K = 0.0;
    Vec x_K = Vec::Zero();
    Vec z_K = Vec::Zero();
    bool has_second = false;
    double tau2 = 0.0;
    double theta2 = 0.0;
    Vec x2 = Vec::Zero();
    Vec z2 = Vec::Zero();
    std::optional<SeparatingLine> H;
};

/// Global minimum of the diagonal times with three-point parabolic refinement.
/// Throws NonUniqueMinimum when a grid-separated local minimum ties within 1e-9, and
/// EmptyDiagonal when there is no data.
Seeds seed_first_body(const BoundingSphere& s0, const DiagData& diag);

/// Minimum restricted to the S0 points beyond the separating line (the side away from
/// z_K). Ties within 1e-9 go to the lowest cell index. Throws NoSeparatingLine.
void seed_second_body(const BoundingSphere& s0, const DiagData& diag,
                      const std::optional<SeparatingLine>& line, Seeds& seeds);

enum class Side { Both, Left, Right };
const char* to_string(Side s);

/// A maximal x-monotone run of reflexive echograph points with continuous (t, dS/dtheta).
struct EchoArc {
    int id = 0;
    std::vector<int> points;  ///< indices into the echo point list, by increasing angle
    std::vector<double> angles;  ///< unwrapped x angles of the points
    int body = 0;   ///< 1 or 2 once labelled, 0 otherwise
    int level = 0;  ///< 0 when unlabelled
    Side side = Side::Both;
    int link[2] = {-1, -1};      ///< arc joined at the first / last end through a cusp
    int link_end[2] = {-1, -1};  ///< which end of the linked arc
    bool consumed = false;
};

struct SegmentOptions {
    int max_gap_cells = 3;
    double t_tol = 2e-4;      ///< relative to the S0 radius, per cell of gap
    double slope_tol = 0.25;  ///< relative to the S0 radius
    double cusp_t_tol = 2e-3;
    double cusp_slope_tol = 0.4;
    int cusp_cells = 3;
    int min_points = 3;
};

struct Segmentation {
    std::vector<EchoPoint> echo;
    std::vector<EchoArc> arcs;
    std::vector<std::string> log;
};

/// Clusters the reflexive echo points into arcs, joins arcs that meet at cusps, and
/// labels body / level / side by walking from the two level-1 arcs through the cusp
/// chain. Throws AmbiguousAdjacency when a needed cusp has two candidate partners.
Segmentation segment_echograph(const BoundingSphere& s0, std::vector<EchoPoint> echo,
                               const Seeds& seeds, int k_max,
                               const SegmentOptions& opts = {});

struct BacktraceReflection {
    int body = 0;
    Vec point = Vec::Zero();
};

struct ReconPoint {
    Vec z = Vec::Zero();
    Vec tangent = Vec::Zero();
    Vec normal = Vec::Zero();
    int echo_index = -1;
    int arc_pos = -1;  ///< position of the echo point within its echo arc
    double x_angle = 0.0;
    double t = 0.0;
    double error = 0.0;  ///< propagated estimate of the normal error (radians)
    std::vector<BacktraceReflection> reflections;
};

struct BoundaryArc {
    int echo_arc = -1;
    int body = 0;
    Side side = Side::Both;
    int level = 0;
    std::vector<ReconPoint> points;
    std::optional<Vec> end_first;  ///< endpoint marker at the first / last end
    std::optional<Vec> end_last;
};

/// Level-1 arcs: z = x - (S/2) u with u from the reflexive slope.
std::vector<BoundaryArc> trace_Z1_arcs(const BoundingSphere& s0, const Segmentation& seg);

/// Oriented point cloud of part of a body boundary.
struct CurveCloud {
    std::vector<Vec> points;
    std::vector<Vec> normals;
};

struct LocalFit {
    Vec foot = Vec::Zero();
    Vec tangent = Vec::Zero();
    Vec normal = Vec::Zero();
    double curvature = 0.0;
    bool non_convex = false;
    int support = 0;
};

/// Moving-least-squares quadratic through the cloud near q (tricube weights over ten
/// median spacings). Throws InsufficientSupport with fewer than five points in range.
LocalFit fit_local_curve(const CurveCloud& cloud, const Vec& q);

/// Determined part of the boundary: polylines of reconstructed points with normals,
/// refined by cubic Hermite interpolation when a ray crosses them.
class KnownBoundary {
public:
    /// Polyline through the arc points. Points more than four arc positions apart, or
    /// further apart than five median spacings, are not connected.
    void add_arc(const BoundaryArc& arc);
    void add_segment(int body, const ReconPoint& a, const ReconPoint& b);

    struct Crossing {
        int body = 0;
        double s = 0.0;
        Vec point = Vec::Zero();
        Vec normal = Vec::Zero();
        bool entering = true;  ///< false when the ray leaves the body here
        double error = 0.0;    ///< larger of the endpoint error estimates
    };
    /// First crossing of the ray with the determined boundary in (s_min, s_max).
    std::optional<Crossing> intersect(const Vec& origin, const Vec& dir, double s_min,
                                      double s_max) const;

    std::size_t segment_count() const { return segs_.size(); }

private:
    struct Segment {
        int body;
        Vec a, b, na, nb;
        double err;
    };
    struct Chunk {
        Vec lo, hi;
        std::size_t begin, end;
    };
    void rebuild_chunks(std::size_t from);

    std::vector<Segment> segs_;
    std::vector<Chunk> chunks_;
};

struct BacktraceStats {
    long points = 0;
    long skipped_unknown = 0;  ///< ray left the determined boundary or missed a reflection
    long skipped_count = 0;    ///< surplus reflections or a reflection sequence that
                               ///< does not alternate between the bodies
    long ill_conditioned = 0;  ///< error estimate above the limit
    int rounds = 0;
};

enum class BacktraceOutcome { Ok, UnknownRegion, WrongCount, IllConditioned };

struct BacktraceOptions {
    /// Assumed error of a direction recovered from the diagonal stencil (radians).
    double direction_error = 1e-7;
    /// Points whose propagated normal error estimate exceeds this are rejected.
    double max_error = 1e-3;
    /// Angular perturbation used to measure how errors grow along the reversed ray.
    double probe = 1e-6;
};

/// Traces the reversed ray of one echo point of a level-k arc of the given body.
/// Succeeds with exactly k - 1 reflections, all entering the determined boundary from
/// outside and alternating between the bodies, the last one on the other body. The
/// error estimate adds the recovered-direction error and twice the normal error at each
/// reflection, each multiplied by the measured growth of a direction perturbation from
/// that point to z.
BacktraceOutcome backtrace_point(const BoundingSphere& s0, const EchoPoint& e, int level,
                                 int body, const KnownBoundary& known, ReconPoint& out,
                                 const BacktraceOptions& opts = {});

/// Backward tracing of one labelled echo arc through the determined boundary.
/// Points that fail are skipped and logged.
BoundaryArc backtrace_reconstruct_arc(const BoundingSphere& s0, const Segmentation& seg,
                                      int echo_arc, const KnownBoundary& known,
                                      BacktraceStats& stats, std::vector<std::string>& log,
                                      int threads = 0, const BacktraceOptions& opts = {});

struct ReconstructOptions {
    int k_max = 6;
    SegmentOptions segment;
    EchoOptions echo;
    BacktraceOptions backtrace;
    int threads = 0;
};

struct ReconstructionState {
    Seeds seeds;
    Segmentation segmentation;
    std::vector<BoundaryArc> arcs;
    std::optional<std::pair<Vec, Vec>> z_inf;
    int depth = 0;
    BacktraceStats stats;
    std::vector<std::string> log;

    /// All reconstructed points of one body, ordered by level then arc order.
    CurveCloud body_cloud(int body) const;
};

ReconstructionState reconstruct_all(const BoundingSphere& s0, const DiagData& measured,
                                    const std::optional<SeparatingLine>& line,
                                    const ReconstructOptions& opts = {});

// ---------------------------------------------------------------------------
// Validation against a known scene (never used by the reconstruction itself).
// ---------------------------------------------------------------------------

struct ValidationReport {
    double hausdorff = 0.0;  ///< max distance from a reconstructed point to the true body
    double coverage = 0.0;   ///< covered fraction of arc length outside the z_inf discs
    long audit_checked = 0;
    long audit_violations = 0;
    std::vector<std::string> details;
    Vec z_inf_true[2];
};

/// Level of a boundary point: 1 when its outward normal ray reaches S0 without meeting a
/// body, otherwise one more than the level of the first point it meets. Points whose
/// chain does not end within 1000 steps get INT_MAX.
int true_level(const Scene& scene, const ConvexBody& body, const Vec& q);

/// Compares a reconstruction with the true two-body scene. Labels are matched to bodies
/// by mean distance; coverage counts boundary length within cover_radius of a point.
ValidationReport validate_reconstruction(const Scene& scene, const ReconstructionState& st,
                                         double exclusion = 0.05, double cover_radius = 1e-2);

std::string reconstruction_to_csv(const ReconstructionState& st);
std::string reconstruction_manifest_json(const ReconstructionState& st,
                                         const ValidationReport* validation);

}  // namespace bscatter
