#include "bscatter/scene.hpp"

#include "bscatter/io.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bscatter {

const char* to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidScene: return "InvalidScene";
    case ErrorCode::DegenerateGradient: return "DegenerateGradient";
    case ErrorCode::NonConvexPoint: return "NonConvexPoint";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::TangentIncidence: return "TangentIncidence";
    case ErrorCode::Trapped: return "Trapped";
    case ErrorCode::Tangency: return "Tangency";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::CombinatoricsChanged: return "CombinatoricsChanged";
    case ErrorCode::NearNormalAmbiguity: return "NearNormalAmbiguity";
    case ErrorCode::BranchBroken: return "BranchBroken";
    case ErrorCode::EmptyDiagonal: return "EmptyDiagonal";
    case ErrorCode::MissingCell: return "MissingCell";
    case ErrorCode::NonUniqueMinimum: return "NonUniqueMinimum";
    case ErrorCode::NoSeparatingLine: return "NoSeparatingLine";
    case ErrorCode::BranchLost: return "BranchLost";
    case ErrorCode::AmbiguousAdjacency: return "AmbiguousAdjacency";
    case ErrorCode::BacktraceHitUnknownRegion: return "BacktraceHitUnknownRegion";
    case ErrorCode::NegativeResidualLength: return "NegativeResidualLength";
    case ErrorCode::InsufficientSupport: return "InsufficientSupport";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

namespace {

Mat rotation_about_z(double deg)
{
    const double r = deg * kPi / 180.0;
    Mat m = Mat::Identity();
    m(0, 0) = std::cos(r);
    m(0, 1) = -std::sin(r);
    m(1, 0) = std::sin(r);
    m(1, 1) = std::cos(r);
    return m;
}

}  // namespace

ConvexBody ConvexBody::disc(int id, const Vec& center, double radius, int dim)
{
    return ellipsoid(id, center, Vec::Constant(radius), 0.0, dim);
}

ConvexBody ConvexBody::ellipsoid(int id, const Vec& center, const Vec& semi_axes,
                                 double rotation_deg, int dim)
{
    if ((semi_axes.array() <= 0.0).any())
        throw Error(ErrorCode::InvalidScene, "semi-axes must be positive");
    ConvexBody b;
    b.id_ = id;
    b.dim_ = dim;
    b.kind_ = Kind::Ellipsoid;
    b.center_ = center;
    b.semi_axes_ = semi_axes;
    b.rotation_deg_ = rotation_deg;
    b.rot_ = rotation_about_z(rotation_deg);
    Mat inv_sq = Mat::Zero();
    for (int i = 0; i < 3; ++i)
        inv_sq(i, i) = 1.0 / (semi_axes[i] * semi_axes[i]);
    b.shape_ = b.rot_ * inv_sq * b.rot_.transpose();
    return b;
}

ConvexBody ConvexBody::implicit(int id, ImplicitField field, int dim)
{
    if (!field.value || !field.gradient || !field.hessian)
        throw Error(ErrorCode::InvalidScene, "implicit body needs value, gradient and hessian");
    ConvexBody b;
    b.id_ = id;
    b.dim_ = dim;
    b.kind_ = Kind::Implicit;
    b.center_ = field.interior_point;
    b.field_ = std::move(field);
    return b;
}

bool ConvexBody::is_round() const
{
    return kind_ == Kind::Ellipsoid && semi_axes_[0] == semi_axes_[1]
           && semi_axes_[1] == semi_axes_[2];
}

ImplicitValue ConvexBody::eval(const Vec& p) const
{
    if (kind_ == Kind::Implicit)
        return {field_.value(p), field_.gradient(p)};
    const Vec d = p - center_;
    const Vec g = shape_ * d;
    return {d.dot(g) - 1.0, 2.0 * g};
}

Mat ConvexBody::hessian(const Vec& p) const
{
    if (kind_ == Kind::Implicit)
        return field_.hessian(p);
    return 2.0 * shape_;
}

Vec ConvexBody::interior_point() const
{
    return kind_ == Kind::Implicit ? field_.interior_point : center_;
}

double ConvexBody::bounding_radius() const
{
    return kind_ == Kind::Implicit ? field_.bounding_radius : semi_axes_.maxCoeff();
}

Vec ConvexBody::to_unit(const Vec& p) const
{
    return (rot_.transpose() * (p - center_)).cwiseQuotient(semi_axes_);
}

Vec ConvexBody::dir_to_unit(const Vec& d) const
{
    return (rot_.transpose() * d).cwiseQuotient(semi_axes_);
}

const ConvexBody& Scene::body(int id) const
{
    for (const auto& b : bodies)
        if (b.id() == id)
            return b;
    throw Error(ErrorCode::InvalidArgument, "no body with id " + std::to_string(id));
}

Vec outward_normal(const ConvexBody& body, const Vec& p)
{
    const Vec g = body.eval(p).gradient;
    const double n = g.norm();
    if (!(n > 1e-12))
        throw Error(ErrorCode::DegenerateGradient, "gradient norm below tolerance");
    return g / n;
}

double boundary_curvature(const ConvexBody& body, const Vec& p)
{
    const Vec g = body.eval(p).gradient;
    const double gn = g.norm();
    if (!(gn > 1e-12))
        throw Error(ErrorCode::DegenerateGradient, "gradient norm below tolerance");
    const Mat h = body.hessian(p);
    double kappa = 0.0;
    if (body.dim() == 2) {
        const double fx = g.x(), fy = g.y();
        kappa = (h(1, 1) * fx * fx - 2.0 * h(0, 1) * fx * fy + h(0, 0) * fy * fy)
                / (gn * gn * gn);
    }
    else {
        const Vec n = g / gn;
        const Vec a = std::abs(n.x()) > 0.9 ? Vec::UnitY() : Vec::UnitX();
        const Vec e1 = (a - a.dot(n) * n).normalized();
        const Vec e2 = n.cross(e1);
        Eigen::Matrix2d ii;
        ii(0, 0) = e1.dot(h * e1);
        ii(0, 1) = e1.dot(h * e2);
        ii(1, 0) = ii(0, 1);
        ii(1, 1) = e2.dot(h * e2);
        ii /= gn;
        kappa = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(ii).eigenvalues().minCoeff();
    }
    if (!(kappa > 0.0))
        throw Error(ErrorCode::NonConvexPoint, "boundary curvature is not positive");
    return kappa;
}

double boundary_residual(const ConvexBody& body, const Vec& p)
{
    const auto v = body.eval(p);
    const double gn = v.gradient.norm();
    if (!(gn > 0.0))
        return std::abs(v.value);
    return std::abs(v.value) / gn;
}

bool on_boundary(const Scene& scene, const ConvexBody& body, const Vec& p)
{
    return boundary_residual(body, p) <= 1e-9 * scene.scale();
}

Vec boundary_along(const ConvexBody& body, const Vec& dir)
{
    const Vec o = body.interior_point();
    const Vec d = dir.normalized();
    if (body.kind() == ConvexBody::Kind::Ellipsoid) {
        const Vec du = body.dir_to_unit(d);
        return o + d / du.norm();
    }
    double lo = 0.0, hi = body.bounding_radius() * 1.01 + 1e-12;
    if (body.eval(o + hi * d).value <= 0.0)
        throw Error(ErrorCode::NumericalFailure, "bounding radius does not contain the body");
    for (int i = 0; i < 200 && hi - lo > 1e-15 * (1.0 + hi); ++i) {
        const double mid = 0.5 * (lo + hi);
        (body.eval(o + mid * d).value < 0.0 ? lo : hi) = mid;
    }
    double s = 0.5 * (lo + hi);
    const auto v = body.eval(o + s * d);
    const double slope = v.gradient.dot(d);
    if (std::abs(slope) > 1e-300)
        s -= v.value / slope;
    return o + s * d;
}

BoundaryParam boundary_param(const ConvexBody& body, double s)
{
    BoundaryParam out;
    const double c = std::cos(s), sn = std::sin(s);
    if (body.kind() == ConvexBody::Kind::Ellipsoid) {
        const Mat& r = body.rotation();
        const Vec& ax = body.semi_axes();
        out.p = body.center() + r * planar(ax.x() * c, ax.y() * sn);
        out.dp = r * planar(-ax.x() * sn, ax.y() * c);
        out.ddp = r * planar(-ax.x() * c, -ax.y() * sn);
        return out;
    }
    const double h = 1e-4;
    auto at = [&](double q) { return boundary_along(body, planar(std::cos(q), std::sin(q))); };
    const Vec pm2 = at(s - 2 * h), pm1 = at(s - h), p1 = at(s + h), p2 = at(s + 2 * h);
    out.p = at(s);
    out.dp = (pm2 - 8.0 * pm1 + 8.0 * p1 - p2) / (12.0 * h);
    out.ddp = (-pm2 + 16.0 * pm1 - 30.0 * out.p + 16.0 * p1 - p2) / (12.0 * h * h);
    return out;
}

double boundary_param_of(const ConvexBody& body, const Vec& p)
{
    if (body.kind() == ConvexBody::Kind::Ellipsoid) {
        const Vec q = body.rotation().transpose() * (p - body.center());
        return std::atan2(q.y() / body.semi_axes().y(), q.x() / body.semi_axes().x());
    }
    const Vec d = p - body.interior_point();
    return std::atan2(d.y(), d.x());
}

namespace {

// Closest point on an ellipsoid boundary to an outside point, in the body frame.
Vec ellipsoid_project_outside(const Vec& q, const Vec& s)
{
    auto g = [&](double t) {
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double r = s[i] * q[i] / (t + s[i] * s[i]);
            acc += r * r;
        }
        return acc - 1.0;
    };
    double lo = 0.0;
    double hi = std::sqrt((s.array() * s.array() * q.array() * q.array()).sum()) + 1e-300;
    for (int i = 0; i < 400 && hi - lo > 0.0; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi)
            break;
        (g(mid) > 0.0 ? lo : hi) = mid;
    }
    const double t = 0.5 * (lo + hi);
    Vec r;
    for (int i = 0; i < 3; ++i)
        r[i] = s[i] * s[i] * q[i] / (t + s[i] * s[i]);
    return r;
}

}  // namespace

Vec nearest_boundary_point(const ConvexBody& body, const Vec& p)
{
    const auto v = body.eval(p);
    if (body.kind() == ConvexBody::Kind::Ellipsoid && v.value > 0.0) {
        const Vec q = body.rotation().transpose() * (p - body.center());
        const Vec r = ellipsoid_project_outside(q, body.semi_axes());
        return body.center() + body.rotation() * r;
    }
    // Foot-point iteration: project onto the tangent plane, then pull back along the normal.
    Vec dir = p - body.interior_point();
    if (dir.norm() < 1e-14)
        dir = Vec::UnitX();
    Vec q = boundary_along(body, dir);
    for (int it = 0; it < 500; ++it) {
        const Vec n = outward_normal(body, q);
        Vec r = p - (p - q).dot(n) * n;
        for (int k = 0; k < 50; ++k) {
            const auto e = body.eval(r);
            const double slope = e.gradient.dot(n);
            if (std::abs(slope) < 1e-300)
                break;
            const double step = e.value / slope;
            r -= step * n;
            if (std::abs(step) < 1e-16)
                break;
        }
        const double change = (r - q).norm();
        q = r;
        if (change < 1e-15)
            break;
    }
    return q;
}

double distance_to_body(const ConvexBody& body, const Vec& p)
{
    if (body.eval(p).value <= 0.0)
        return 0.0;
    return (nearest_boundary_point(body, p) - p).norm();
}

ClosestPair closest_points(const ConvexBody& a, const ConvexBody& b)
{
    auto project = [](const ConvexBody& body, const Vec& p) {
        return body.eval(p).value <= 0.0 ? p : nearest_boundary_point(body, p);
    };
    Vec q = project(b, a.interior_point());
    Vec p = project(a, q);
    for (int it = 0; it < 20000; ++it) {
        const Vec q2 = project(b, p);
        const Vec p2 = project(a, q2);
        const double change = (p2 - p).norm() + (q2 - q).norm();
        p = p2;
        q = q2;
        if (change < 1e-15)
            break;
    }
    return {p, q, (p - q).norm()};
}

std::vector<Vec> boundary_samples(const ConvexBody& body, int dim, int n)
{
    std::vector<Vec> out;
    if (dim == 2) {
        out.reserve(n);
        for (int i = 0; i < n; ++i) {
            const double th = kTwoPi * i / n;
            out.push_back(boundary_along(body, planar(std::cos(th), std::sin(th))));
        }
        return out;
    }
    const int nlat = std::max(4, static_cast<int>(std::sqrt(n / 2.0)));
    const int nlon = 2 * nlat;
    for (int i = 0; i < nlat; ++i) {
        const double phi = kPi * (i + 0.5) / nlat;
        for (int j = 0; j < nlon; ++j) {
            const double th = kTwoPi * j / nlon;
            out.push_back(boundary_along(body, Vec(std::sin(phi) * std::cos(th),
                                                   std::sin(phi) * std::sin(th), std::cos(phi))));
        }
    }
    return out;
}

std::vector<SceneViolation> validate_scene(const Scene& scene)
{
    std::vector<SceneViolation> out;
    const double a = scene.s0.radius;
    const double clearance = 1e-6 * a;
    if (!(a > 0.0))
        out.push_back({"radius", "S0 radius must be positive"});
    if (scene.dim != 2 && scene.dim != 3)
        out.push_back({"dimension", "dimension must be 2 or 3"});
    if (!out.empty())
        return out;
    const int nsamp = scene.dim == 2 ? 2048 : 4096;
    for (const auto& body : scene.bodies) {
        const auto pts = boundary_samples(body, scene.dim, nsamp);
        double far = 0.0;
        for (const auto& p : pts)
            far = std::max(far, (p - scene.s0.center).norm());
        if (far >= a - clearance)
            out.push_back({"containment", "body " + std::to_string(body.id())
                                              + " is not strictly inside S0"});
        for (const auto& p : pts) {
            try {
                boundary_curvature(body, p);
            }
            catch (const Error&) {
                out.push_back({"convexity", "body " + std::to_string(body.id())
                                                + " is not strictly convex at a sample"});
                break;
            }
        }
    }
    for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
        for (std::size_t j = i + 1; j < scene.bodies.size(); ++j) {
            const auto& bi = scene.bodies[i];
            const auto& bj = scene.bodies[j];
            bool overlap = bi.eval(bj.interior_point()).value <= 0.0
                           || bj.eval(bi.interior_point()).value <= 0.0;
            double dist = 0.0;
            if (!overlap) {
                dist = closest_points(bi, bj).distance;
                overlap = dist <= clearance;
            }
            if (overlap)
                out.push_back({"overlap", "bodies " + std::to_string(bi.id()) + " and "
                                              + std::to_string(bj.id())
                                              + " overlap or touch"});
        }
    }
    return out;
}

namespace {

Vec vec_from_json(const nlohmann::json& j, int dim)
{
    if (!j.is_array() || static_cast<int>(j.size()) != dim)
        throw Error(ErrorCode::InvalidScene, "expected a coordinate array of length "
                                                 + std::to_string(dim));
    Vec v = Vec::Zero();
    for (int i = 0; i < dim; ++i)
        v[i] = j[i].get<double>();
    return v;
}

nlohmann::json vec_to_json(const Vec& v, int dim)
{
    auto arr = nlohmann::json::array();
    for (int i = 0; i < dim; ++i)
        arr.push_back(v[i]);
    return arr;
}

}  // namespace

Scene parse_scene_json(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    }
    catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidScene, std::string("malformed JSON: ") + e.what());
    }
    try {
        Scene s;
        const auto& s0 = j.at("s0");
        s.dim = static_cast<int>(s0.at("center").size());
        if (s.dim != 2 && s.dim != 3)
            throw Error(ErrorCode::InvalidScene, "S0 center must have 2 or 3 coordinates");
        s.s0.center = vec_from_json(s0.at("center"), s.dim);
        s.s0.radius = s0.at("radius").get<double>();
        int next_id = 1;
        for (const auto& b : j.value("bodies", nlohmann::json::array())) {
            const std::string type = b.at("type").get<std::string>();
            const int id = b.value("id", next_id);
            next_id = id + 1;
            const Vec c = vec_from_json(b.at("center"), s.dim);
            if (type == "disc" || type == "sphere") {
                s.bodies.push_back(
                    ConvexBody::disc(id, c, b.at("radius").get<double>(), s.dim));
            }
            else if (type == "ellipse" || type == "ellipsoid") {
                Vec ax = vec_from_json(b.at("semi_axes"), s.dim);
                if (s.dim == 2)
                    ax.z() = 1.0;
                s.bodies.push_back(
                    ConvexBody::ellipsoid(id, c, ax, b.value("rotation_deg", 0.0), s.dim));
            }
            else {
                throw Error(ErrorCode::InvalidScene, "unknown body type '" + type + "'");
            }
        }
        return s;
    }
    catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidScene, std::string("bad scene field: ") + e.what());
    }
}

Scene load_scene_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::InvalidScene, "cannot open scene file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scene_json(ss.str());
}

std::string scene_to_json(const Scene& scene)
{
    nlohmann::ordered_json j;
    j["s0"]["center"] = vec_to_json(scene.s0.center, scene.dim);
    j["s0"]["radius"] = scene.s0.radius;
    j["bodies"] = nlohmann::ordered_json::array();
    for (const auto& b : scene.bodies) {
        nlohmann::ordered_json jb;
        jb["id"] = b.id();
        if (b.kind() == ConvexBody::Kind::Implicit) {
            jb["type"] = "implicit";
            jb["center"] = vec_to_json(b.interior_point(), scene.dim);
        }
        else if (b.is_round() || (scene.dim == 2 && b.semi_axes().x() == b.semi_axes().y())) {
            jb["type"] = scene.dim == 2 ? "disc" : "sphere";
            jb["center"] = vec_to_json(b.center(), scene.dim);
            jb["radius"] = b.semi_axes().x();
        }
        else {
            jb["type"] = scene.dim == 2 ? "ellipse" : "ellipsoid";
            jb["center"] = vec_to_json(b.center(), scene.dim);
            jb["semi_axes"] = vec_to_json(b.semi_axes(), scene.dim);
            jb["rotation_deg"] = b.rotation_deg();
        }
        j["bodies"].push_back(jb);
    }
    return j.dump();
}

std::string scene_hash(const Scene& scene)
{
    return fnv1a_hex(scene_to_json(scene));
}

}  // namespace bscatter
