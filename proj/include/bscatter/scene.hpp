#pragma once

#include "bscatter/core.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace bscatter {

/// The reference circle (n = 2) or sphere (n = 3) on which rays enter and leave.
struct BoundingSphere {
    Vec center = Vec::Zero();
    double radius = 1.0;

    /// Unit normal pointing into the ball at a point of the sphere.
    Vec inward_normal(const Vec& x) const { return (center - x).normalized(); }

    /// Planar parametrisation, angle measured counterclockwise from the first axis.
    Vec point_at(double theta) const
    {
        return center + radius * planar(std::cos(theta), std::sin(theta));
    }

    /// Unit tangent (counterclockwise) at angle theta.
    static Vec tangent_at(double theta) { return planar(-std::sin(theta), std::cos(theta)); }

    double angle_of(const Vec& x) const
    {
        return std::atan2(x.y() - center.y(), x.x() - center.x());
    }
};

struct ImplicitValue {
    double value = 0.0;
    Vec gradient = Vec::Zero();
};

/// User-supplied smooth field for the generic body kind. F < 0 inside.
struct ImplicitField {
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> gradient;
    std::function<Mat(const Vec&)> hessian;
    Vec interior_point = Vec::Zero();  ///< any point strictly inside
    double bounding_radius = 1.0;      ///< body lies within this distance of interior_point
};

/// A strictly convex smooth body given as the zero set of F with F < 0 inside.
class ConvexBody {
public:
    enum class Kind { Ellipsoid, Implicit };

    static ConvexBody disc(int id, const Vec& center, double radius, int dim = 2);
    /// Ellipse (dim 2) or ellipsoid (dim 3); rotation is about the third axis.
    static ConvexBody ellipsoid(int id, const Vec& center, const Vec& semi_axes,
                                double rotation_deg, int dim = 2);
    static ConvexBody implicit(int id, ImplicitField field, int dim = 2);

    int id() const { return id_; }
    int dim() const { return dim_; }
    Kind kind() const { return kind_; }
    bool is_round() const;
    const Vec& center() const { return center_; }
    const Vec& semi_axes() const { return semi_axes_; }
    double rotation_deg() const { return rotation_deg_; }
    const Mat& rotation() const { return rot_; }

    ImplicitValue eval(const Vec& p) const;
    Mat hessian(const Vec& p) const;

    /// A point guaranteed to be inside the body.
    Vec interior_point() const;
    /// Radius of a ball around interior_point() containing the body.
    double bounding_radius() const;

    /// Map to body-local normalised coordinates where an ellipsoid is the unit ball.
    Vec to_unit(const Vec& p) const;
    Vec dir_to_unit(const Vec& d) const;

private:
    int id_ = 0;
    int dim_ = 2;
    Kind kind_ = Kind::Ellipsoid;
    Vec center_ = Vec::Zero();
    Vec semi_axes_ = Vec::Ones();
    double rotation_deg_ = 0.0;
    Mat rot_ = Mat::Identity();
    Mat shape_ = Mat::Identity();  // R S^-2 R^T
    ImplicitField field_;
};

struct Scene {
    BoundingSphere s0;
    std::vector<ConvexBody> bodies;
    int dim = 2;

    const ConvexBody& body(int id) const;
    /// Length scale used for all relative tolerances (the radius of S0).
    double scale() const { return s0.radius; }
};

/// Outward unit normal; throws DegenerateGradient when the gradient vanishes.
Vec outward_normal(const ConvexBody& body, const Vec& p);

/// Curvature of the boundary with respect to the outward normal. In three dimensions
/// the smaller principal curvature is returned. Throws NonConvexPoint if it is not
/// strictly positive.
double boundary_curvature(const ConvexBody& body, const Vec& p);

/// Signed distance estimate |F| / |grad F| used for the on-boundary test.
double boundary_residual(const ConvexBody& body, const Vec& p);
bool on_boundary(const Scene& scene, const ConvexBody& body, const Vec& p);

/// Nearest point of the body boundary to p (p may be inside or outside).
Vec nearest_boundary_point(const ConvexBody& body, const Vec& p);
/// Euclidean distance from p to the body (zero inside).
double distance_to_body(const ConvexBody& body, const Vec& p);

struct ClosestPair {
    Vec on_a = Vec::Zero();
    Vec on_b = Vec::Zero();
    double distance = 0.0;
};
/// Closest points between two disjoint convex bodies. Distance 0 means they meet.
ClosestPair closest_points(const ConvexBody& a, const ConvexBody& b);

/// Deterministic boundary sample. Planar bodies: n points by polar angle about the
/// interior point. 3D: a latitude-longitude grid with about n points.
std::vector<Vec> boundary_samples(const ConvexBody& body, int dim, int n);

/// Exact boundary point along the ray from the interior point in direction dir.
Vec boundary_along(const ConvexBody& body, const Vec& dir);

/// Planar boundary parametrisation with first and second derivatives. Ellipses use the
/// eccentric angle; generic bodies use the polar angle about the interior point.
struct BoundaryParam {
    Vec p = Vec::Zero();
    Vec dp = Vec::Zero();
    Vec ddp = Vec::Zero();
};
BoundaryParam boundary_param(const ConvexBody& body, double s);
/// Parameter of a boundary point (inverse of boundary_param).
double boundary_param_of(const ConvexBody& body, const Vec& p);

struct SceneViolation {
    std::string kind;  // "overlap", "containment", "convexity", "radius", "dimension"
    std::string detail;
};

std::vector<SceneViolation> validate_scene(const Scene& scene);

Scene load_scene_json(const std::string& path);
Scene parse_scene_json(const std::string& text);
std::string scene_to_json(const Scene& scene);
/// Stable hash of the scene description (FNV-1a over its canonical JSON).
std::string scene_hash(const Scene& scene);

}  // namespace bscatter
