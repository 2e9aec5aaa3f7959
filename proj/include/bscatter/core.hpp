#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace bscatter {

// Points and directions live in R^3; planar scenes keep the third component at zero.
using Vec = Eigen::Vector3d;
using Mat = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class ErrorCode {
    InvalidArgument,
    InvalidScene,
    DegenerateGradient,
    NonConvexPoint,
    NumericalFailure,
    TangentIncidence,
    Trapped,
    Tangency,
    NoConvergence,
    CombinatoricsChanged,
    NearNormalAmbiguity,
    BranchBroken,
    EmptyDiagonal,
    MissingCell,
    NonUniqueMinimum,
    NoSeparatingLine,
    BranchLost,
    AmbiguousAdjacency,
    BacktraceHitUnknownRegion,
    NegativeResidualLength,
    InsufficientSupport,
    Io,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a)
{
    a = std::remainder(a, kTwoPi);
    if (a <= -kPi)
        a += kTwoPi;
    return a;
}

/// Wrap an angle into [0, 2pi).
inline double wrap_positive(double a)
{
    a = std::fmod(a, kTwoPi);
    if (a < 0.0)
        a += kTwoPi;
    if (a >= kTwoPi)
        a -= kTwoPi;
    return a;
}

inline Vec planar(double x, double y) { return Vec(x, y, 0.0); }

/// Counterclockwise rotation by 90 degrees in the plane.
inline Vec perp(const Vec& v) { return Vec(-v.y(), v.x(), 0.0); }

inline double cross2(const Vec& a, const Vec& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace bscatter
