#pragma once

#include "bscatter/billiard.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bscatter {

// ---------------------------------------------------------------------------
// Planar parametrisation of S0 and of inward directions.
//
// A point of S0 is given by its polar angle theta about the S0 center. An inward
// direction at theta is given by its offset alpha in (-pi/2, pi/2) from the inward
// normal, positive alpha rotating counterclockwise.
// ---------------------------------------------------------------------------

Vec inward_direction(const Scene& scene, double theta, double alpha);
double direction_offset(const Scene& scene, double theta, const Vec& dir);

/// One (x, y)-geodesic found by the planar direction sweep.
struct Geodesic {
    double theta_x = 0.0;
    double theta_y = 0.0;
    double alpha = 0.0;  ///< entry direction offset at x
    double t = 0.0;      ///< travelling time, first-order corrected onto the target y
    Trajectory trajectory;
    std::vector<int> sequence;

    Vec u() const { return trajectory.entry.u; }
    Vec v() const { return trajectory.exit->u; }
};

struct SweepOptions {
    int directions = 2048;  ///< base samples over the open half circle of directions
    /// Direction intervals are not refined once both ends exceed this reflection count.
    int max_reflections = 16;
    double min_window = 1e-13;  ///< smallest refined direction interval (rad)
    double max_turn = 0.05;     ///< refine while a segment direction turns more than this
    TraceLimits limits;
};

/// All simply reflecting (x, y)-geodesics found by sweeping the entry direction at x,
/// refining across changes of reflection combinatorics, and solving exit(alpha) = y
/// inside every window of constant combinatorics. Sorted by alpha.
std::vector<Geodesic> find_geodesics(const Scene& scene, double theta_x, double theta_y,
                                     const SweepOptions& opts = {});

/// Continues a geodesic to new endpoints keeping its reflection sequence. Returns
/// nothing when the branch is lost.
std::optional<Geodesic> continue_geodesic(const Scene& scene, const Geodesic& g,
                                          double theta_x, double theta_y,
                                          const TraceLimits& limits = {});

// ---------------------------------------------------------------------------
// Datasets.
// ---------------------------------------------------------------------------

enum class DataMode { Oracle, Measured };
const char* to_string(DataMode m);

struct SpectrumSample {
    double x_angle = 0.0;
    double y_angle = 0.0;
    double t = 0.0;
    int k = -1;          ///< reflection count; -1 when withheld
    long branch_id = -1;  ///< hash of the reflection sequence; -1 when withheld
    /// Oracle-only data, hidden from reconstruction consumers.
    std::optional<Vec> u;
    std::optional<Vec> v;
};

struct GridInfo {
    int x_res = 0;
    int dir_res = 0;
    int diag_res = 0;
    double stencil_h = 0.0;
};

struct SpectrumDataset {
    std::string scene_hash;
    GridInfo grid;
    DataMode mode = DataMode::Oracle;
    std::vector<SpectrumSample> samples;
    long failed_rays = 0;
};

long branch_hash(const std::vector<int>& sequence);

/// Traces the full (x, omega) grid; one sample per cleanly exiting ray.
SpectrumDataset sample_spectrum(const Scene& scene, int x_res, int dir_res,
                                const TraceLimits& limits = {}, int threads = 0);

/// Strips reflection counts, branch ids and directions.
SpectrumDataset to_measured(const SpectrumDataset& data);

/// Oracle record for one diagonal geodesic.
struct DiagRoot {
    double t = 0.0;
    int k = 0;
    long branch_id = 0;
    Vec u = Vec::Zero();
    Vec v = Vec::Zero();
    bool reflexive = false;
};

/// Travelling times at one diagonal grid point and at its stencil neighbours:
/// (x-h, x-h), (x+h, x+h), (x, x-h), (x, x+h).
struct DiagCell {
    int index = 0;
    double theta = 0.0;
    std::vector<double> t0;
    std::vector<double> mm;
    std::vector<double> pp;
    std::vector<double> zm;
    std::vector<double> zp;
    std::vector<DiagRoot> oracle;  ///< parallel to t0 in Oracle mode, else empty
};

struct DiagOptions {
    int resolution = 4096;
    double stencil_h = 1e-4;
    SweepOptions sweep;
    int threads = 0;
};

struct DiagData {
    std::string scene_hash;
    DataMode mode = DataMode::Oracle;
    int resolution = 0;
    double stencil_h = 0.0;
    std::vector<DiagCell> cells;
    long lost_branches = 0;  ///< stencil continuations that failed (root dropped)
};

DiagData diag_spectrum(const Scene& scene, const DiagOptions& opts = {});
DiagData to_measured(const DiagData& data);

/// Flattens diagonal data into (x, y, t) samples, stencil cells included.
SpectrumDataset diag_to_dataset(const DiagData& data);
/// Inverse of diag_to_dataset; oracle details are restored only partially (k, branch).
DiagData dataset_to_diag(const SpectrumDataset& data);

struct EchoPoint {
    int cell = 0;
    double x_angle = 0.0;
    Vec x = Vec::Zero();
    double t = 0.0;  ///< round-trip time
    Vec w = Vec::Zero();
    bool reflexive = false;
    int order = -1;  ///< -1 when unknown
    double slope = 0.0;  ///< dS/dtheta from the diagonal stencil
    bool stencil_ok = false;
};

/// Echograph point for a diagonal return: w = x + (t/2) nu0(x), nu0 the inward normal.
Vec echo_point(const Scene& scene, double theta, double t);

struct EchoOptions {
    /// Reflexive when the off-diagonal slope equals half the diagonal slope to within
    /// this (dimensionless, slopes divided by the S0 radius).
    double reflexive_tol = 1e-5;
    /// Branch association across the stencil: |dt| <= lipschitz_factor * h * a.
    double lipschitz_factor = 5.0;
};

/// Maps every diagonal return to its echograph point. In Oracle mode reflexivity and
/// order come from the hidden directions; in Measured mode reflexivity is decided from
/// the stencil times alone and the order is unknown.
std::vector<EchoPoint> echograph(const Scene& scene, const DiagData& data,
                                 const EchoOptions& opts = {});

/// Picks the stencil time belonging to the same branch as t0 (slope-consistent pair
/// with the smallest second difference). Returns false when no consistent pair exists.
bool stencil_pair(const std::vector<double>& minus, const std::vector<double>& plus,
                  double t0, double h, double a, double factor, double& tm, double& tp);

struct DistinctReport {
    long cells = 0;
    long cells_with_pairs = 0;
    long pairs = 0;
    long coincidences = 0;
    double fraction = 0.0;
    double min_gap = 0.0;  ///< smallest time gap between distinct branches seen
};

/// Counts distinct-branch pairs in the same (x, y) cell with |t - t'| < tol. Cells are
/// formed by snapping exit angles to the x grid.
DistinctReport distinct_times_check(const SpectrumDataset& data, double coincidence_tol);

// ---------------------------------------------------------------------------
// Measurement probes used by consumers that may only see travelling times.
// ---------------------------------------------------------------------------

/// Answers whether the straight chord length between two S0 points belongs to the
/// travelling-time set of the pair.
class ChordProbe {
public:
    virtual ~ChordProbe() = default;
    virtual bool straight_time_present(double theta_x, double theta_y, double tol) const = 0;
};

/// Live measurement: emits the travelling time of the ray launched along the chord and
/// compares it to the chord length.
class LiveChordProbe : public ChordProbe {
public:
    explicit LiveChordProbe(const Scene& scene, TraceLimits limits = {});
    bool straight_time_present(double theta_x, double theta_y, double tol) const override;

private:
    const Scene& scene_;
    TraceLimits limits_;
};

/// Dataset lookup: nearest stored x cell, then samples whose exit angle lies within the
/// snap distance of theta_y. Throws MissingCell when no sample is close enough.
class DatasetChordProbe : public ChordProbe {
public:
    DatasetChordProbe(const Scene& scene, const SpectrumDataset& data, double snap);
    bool straight_time_present(double theta_x, double theta_y, double tol) const override;

private:
    BoundingSphere s0_;
    double snap_;
    int x_res_;
    std::vector<std::vector<std::pair<double, double>>> by_x_;  // (y_angle, t)
};

/// All travelling times between two S0 points, produced by simulation and reported
/// without any direction data.
class TimeSource {
public:
    virtual ~TimeSource() = default;
    virtual std::vector<double> times(double theta_x, double theta_y) const = 0;
};

class LiveTimeSource : public TimeSource {
public:
    LiveTimeSource(const Scene& scene, SweepOptions opts = {});
    std::vector<double> times(double theta_x, double theta_y) const override;

private:
    const Scene& scene_;
    SweepOptions opts_;
};

// ---------------------------------------------------------------------------
// CSV persistence.
// ---------------------------------------------------------------------------

std::string dataset_to_csv(const SpectrumDataset& data);
SpectrumDataset dataset_from_csv(const std::string& text);
std::string dataset_manifest_json(const SpectrumDataset& data);
/// Restores grid and scene hash from a manifest written by dataset_manifest_json.
void apply_dataset_manifest(SpectrumDataset& data, const std::string& json_text);
std::string echograph_to_csv(const std::vector<EchoPoint>& points);

}  // namespace bscatter
