#pragma once

#include "bscatter/reconstruct.hpp"

#include <cstdint>
#include <ostream>
#include <string>

namespace bscatter {

/// Everything a command needs. JSON config files use the same snake_case keys as the
/// command-line flags.
struct RunConfig {
    std::string scene;
    std::string out = "out";

    int x_grid = 512;
    int dir_grid = 1024;
    int diag_grid = 4096;

    int max_reflections = 200;
    double max_time = 0.0;  ///< 0 selects 100 times the S0 radius
    double tangency_threshold = 1e-7;

    int k_max = 6;
    double stencil_h = 1e-4;
    double reflexive_tol = 1e-5;
    double lipschitz_factor = 5.0;
    double vacuous_tol = 1e-6;
    double coincidence_tol = 1e-9;
    double direction_error = 1e-7;
    double max_error = 1e-3;
    int separating_phi = 90;
    int separating_offsets = 512;
    int hull_directions = 360;

    double entry_angle_deg = 180.0;
    int fan = 16;
    double fan_spread_deg = 80.0;

    int verify_rays = 10000;
    int verify_branches = 1000;

    std::uint64_t seed = 20240601;
    int threads = 0;

    TraceLimits limits() const;
    SweepOptions sweep() const;
    ReconstructOptions reconstruct_options() const;
    VacuousOptions separating_options() const;
};

/// Overlays the keys of a JSON object onto `base`. Throws InvalidArgument on unknown
/// keys or wrongly typed values.
RunConfig config_from_json(const std::string& text, RunConfig base = {});
/// Canonical JSON of every field.
std::string config_to_json(const RunConfig& cfg);
/// Hash of the settings that affect outputs. The scene path, output directory and thread
/// count are excluded; figures carry the scene hash next to it.
std::string config_hash(const RunConfig& cfg);
/// Throws InvalidArgument unless resolutions are powers of two in [256, 65536] and all
/// tolerances and counts are positive.
void validate_config(const RunConfig& cfg);

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitInvalidScene = 2,
    kExitNumerical = 3,
    kExitReconstructionAbort = 4,
};

// Subcommands. Each writes its files into cfg.out, reports progress on `log`, and
// returns an exit code.

/// Fan of cfg.fan rays from the entry angle: trajectories.csv and simulate.svg.
int cmd_simulate(const RunConfig& cfg, std::ostream& log);
/// Full grid spectrum.csv/.json and diagonal diag.csv/.json (oracle mode).
int cmd_spectrum(const RunConfig& cfg, std::ostream& log);
/// echograph.csv and echograph.svg from diag.csv.
int cmd_echograph(const RunConfig& cfg, std::ostream& log);
/// reconstruction.csv/.json/.svg, hull.csv and vacuous.json from diag.csv.
int cmd_reconstruct(const RunConfig& cfg, std::ostream& log);
/// verify.json with every property check that applies to the scene; exit 1 on failure.
int cmd_verify(const RunConfig& cfg, std::ostream& log);

}  // namespace bscatter
