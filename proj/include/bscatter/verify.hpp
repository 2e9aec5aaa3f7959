#pragma once

#include "bscatter/reconstruct.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace bscatter {

/// One measured quantity of a property check, compared against its limit.
struct Measure {
    std::string name;
    double value = 0.0;
    double limit = 0.0;
    bool upper = true;  ///< value must be <= limit (else >= limit)
    bool pass() const { return upper ? value <= limit : value >= limit; }
};

struct CheckResult {
    std::string name;
    std::vector<Measure> measures;
    std::vector<std::string> notes;
    bool failed = false;  ///< set when the check could not run to completion

    bool pass() const;
    void add(std::string n, double value, double limit, bool upper = true)
    {
        measures.push_back({std::move(n), value, limit, upper});
    }
    /// "name: value <= limit, ..." on one line.
    std::string summary() const;
};

/// Random entry phase points: angle uniform on S0, offset uniform in (-pi/2, pi/2).
class EntrySampler {
public:
    EntrySampler(const Scene& scene, std::uint64_t seed);
    PhasePoint next();
    double uniform(double lo, double hi);

private:
    const Scene& scene_;
    std::mt19937_64 rng_;
};

// Oracle property checks on a known scene. Each returns its measurements; none throws
// for a failing property.

/// Implicit-field invariants at boundary samples and random points: sign of F across
/// the boundary, normal agreement, positive curvature, finite-difference gradient.
CheckResult check_scene_geometry(const Scene& scene, int points, std::uint64_t seed);

/// Specular law, unit speed, time additivity and time reversal on `rays` random
/// exiting rays.
CheckResult check_reflection_suite(const Scene& scene, int rays, std::uint64_t seed,
                                   const TraceLimits& limits = {});

/// Finite-difference directional derivative of T against <v,b> - <u,a> on random
/// regular branches, at h and h/5.
CheckResult check_travel_time_derivative(const Scene& scene, int branches, double h,
                                         std::uint64_t seed);

/// Recovered entry/exit directions against the simulator on random regular branches.
CheckResult check_direction_recovery(const Scene& scene, int branches, double h,
                                     std::uint64_t seed);

/// Chord lower bound, reflection-count consistency and echograph distance identity.
CheckResult check_spectrum_invariants(const Scene& scene, const SpectrumDataset& data,
                                      const std::vector<EchoPoint>& echo);

/// Distinct-branch coincidences within tol over the cells of an oracle dataset.
CheckResult check_distinct_times(const SpectrumDataset& data, double tol, long min_cells);

/// The period-2 orbit along the shortest segment between the first two bodies is
/// reported BudgetTrapped, and no random S0 entry is.
CheckResult check_trapped(const Scene& scene, int entries, std::uint64_t seed,
                          const TraceLimits& limits = {});

/// Single-body reconstruction from measured diagonal data against the true body.
CheckResult check_single_convex(const Scene& scene, const DiagData& oracle_diag,
                                double max_hausdorff);

/// Support function of the hull against the closed-form support of the bodies.
CheckResult check_hull(const Scene& scene, int directions, double tol, int threads);

/// A separating vacuous line exists and strictly separates the first two bodies.
CheckResult check_separating_line(const Scene& scene, const VacuousOptions& opts);

/// Seed identities: z_K on the true boundary, w(x_K) = z_K, and the second seed.
CheckResult check_seeds(const Scene& scene, const DiagData& measured_diag,
                        const std::optional<SeparatingLine>& line, double tol);

/// Hausdorff, coverage and audit of a reconstruction against the true scene.
CheckResult check_reconstruction(const Scene& scene, const ReconstructionState& st,
                                 double max_hausdorff, double min_coverage);

/// Closed-form support value of a disc or ellipse in direction e (unit, planar).
double support_value(const ConvexBody& body, const Vec& e);

/// Pretty JSON report of a list of checks, with an overall "pass".
std::string checks_to_json(const std::vector<CheckResult>& checks, const std::string& scene_hash,
                           const std::string& config_hash);

}  // namespace bscatter
