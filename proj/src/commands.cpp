#include "bscatter/config.hpp"
#include "bscatter/figures.hpp"
#include "bscatter/io.hpp"
#include "bscatter/verify.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace bscatter {

namespace {

namespace fs = std::filesystem;

std::string out_path(const RunConfig& cfg, const std::string& name)
{
    return (fs::path(cfg.out) / name).string();
}

void prepare(const RunConfig& cfg)
{
    validate_config(cfg);
    fs::create_directories(cfg.out);
}

/// Loads and validates the scene; logs and returns nothing when it is unusable.
std::optional<Scene> load_checked_scene(const RunConfig& cfg, std::ostream& log)
{
    Scene scene;
    try {
        scene = load_scene_json(cfg.scene);
    }
    catch (const std::exception& e) {
        log << "invalid scene: " << e.what() << '\n';
        return std::nullopt;
    }
    const auto violations = validate_scene(scene);
    if (!violations.empty()) {
        for (const auto& v : violations)
            log << "invalid scene: " << v.kind << ": " << v.detail << '\n';
        return std::nullopt;
    }
    return scene;
}

std::string provenance(const RunConfig& cfg, const Scene& scene)
{
    return config_hash(cfg) + " scene " + scene_hash(scene);
}

void write_dataset(const RunConfig& cfg, const std::string& stem, const SpectrumDataset& data)
{
    write_file_atomic(out_path(cfg, stem + ".csv"), dataset_to_csv(data));
    write_file_atomic(out_path(cfg, stem + ".json"), dataset_manifest_json(data));
}

/// Reads <stem>.csv and its manifest. Throws Io when missing or written for another scene.
SpectrumDataset read_dataset(const RunConfig& cfg, const std::string& stem, const Scene& scene)
{
    const std::string csv = out_path(cfg, stem + ".csv");
    if (!fs::exists(csv))
        throw Error(ErrorCode::Io, csv + " not found; run the spectrum command first");
    SpectrumDataset data = dataset_from_csv(read_file(csv));
    apply_dataset_manifest(data, read_file(out_path(cfg, stem + ".json")));
    if (data.scene_hash != scene_hash(scene))
        throw Error(ErrorCode::Io, csv + " was generated for a different scene");
    return data;
}

DiagData compute_diag(const Scene& scene, const RunConfig& cfg, int resolution, int threads)
{
    DiagOptions o;
    o.resolution = resolution;
    o.stencil_h = cfg.stencil_h;
    o.sweep = cfg.sweep();
    o.threads = threads;
    return diag_spectrum(scene, o);
}

/// Diagonal data from diag.csv when it matches the configuration, else recomputed.
DiagData diag_for(const Scene& scene, const RunConfig& cfg, std::ostream& log)
{
    try {
        const SpectrumDataset ds = read_dataset(cfg, "diag", scene);
        if (ds.grid.diag_res == cfg.diag_grid && ds.grid.stencil_h == cfg.stencil_h)
            return dataset_to_diag(ds);
    }
    catch (const Error&) {
    }
    log << "computing diagonal spectrum at " << cfg.diag_grid << " points\n";
    return compute_diag(scene, cfg, cfg.diag_grid, cfg.threads);
}

int numerical_failure(std::ostream& log, const std::exception& e)
{
    log << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
}

}  // namespace

int cmd_simulate(const RunConfig& cfg, std::ostream& log)
{
    prepare(cfg);
    const auto scene = load_checked_scene(cfg, log);
    if (!scene)
        return kExitInvalidScene;
    std::vector<Trajectory> rays;
    try {
        const double theta = cfg.entry_angle_deg * kPi / 180.0;
        const double spread = std::min(cfg.fan_spread_deg, 89.9) * kPi / 180.0;
        const Vec x = scene->s0.point_at(theta);
        for (int i = 0; i < cfg.fan; ++i) {
            const double alpha = cfg.fan == 1 ? 0.0 : spread * (2.0 * i / cfg.fan - 1.0);
            rays.push_back(trace(*scene, {x, inward_direction(*scene, theta, alpha)}, cfg.limits()));
        }
    }
    catch (const Error& e) {
        return numerical_failure(log, e);
    }
    write_file_atomic(out_path(cfg, "trajectories.csv"), trajectories_to_csv(rays, scene->dim));
    write_file_atomic(out_path(cfg, "simulate.svg"),
                      simulation_svg(*scene, rays, provenance(cfg, *scene)));
    long exited = 0;
    for (const auto& r : rays)
        exited += r.status == TraceStatus::Exited;
    log << rays.size() << " rays traced, " << exited << " exited\n";
    return kExitOk;
}

int cmd_spectrum(const RunConfig& cfg, std::ostream& log)
{
    prepare(cfg);
    const auto scene = load_checked_scene(cfg, log);
    if (!scene)
        return kExitInvalidScene;
    try {
        const SpectrumDataset grid =
            sample_spectrum(*scene, cfg.x_grid, cfg.dir_grid, cfg.limits(), cfg.threads);
        write_dataset(cfg, "spectrum", grid);
        log << "spectrum: " << grid.samples.size() << " samples, " << grid.failed_rays
            << " rays did not exit cleanly\n";
        const DiagData diag = compute_diag(*scene, cfg, cfg.diag_grid, cfg.threads);
        write_dataset(cfg, "diag", diag_to_dataset(diag));
        log << "diagonal: " << diag.resolution << " points, " << diag.lost_branches
            << " stencil continuations lost\n";
    }
    catch (const Error& e) {
        return numerical_failure(log, e);
    }
    return kExitOk;
}

int cmd_echograph(const RunConfig& cfg, std::ostream& log)
{
    prepare(cfg);
    const auto scene = load_checked_scene(cfg, log);
    if (!scene)
        return kExitInvalidScene;
    const DiagData diag = dataset_to_diag(read_dataset(cfg, "diag", *scene));
    EchoOptions eo;
    eo.reflexive_tol = cfg.reflexive_tol;
    eo.lipschitz_factor = cfg.lipschitz_factor;
    const auto echo = echograph(*scene, diag, eo);
    write_file_atomic(out_path(cfg, "echograph.csv"), echograph_to_csv(echo));

    // Arc labels for the figure come from the measured pipeline; the plain point cloud
    // is drawn when labelling is not possible.
    std::optional<Seeds> seeds;
    std::optional<Segmentation> seg;
    try {
        const DiagData measured = to_measured(diag);
        Seeds s = seed_first_body(scene->s0, measured);
        if (scene->bodies.size() >= 2) {
            const LiveChordProbe probe(*scene);
            const auto sep = vacuous_components(scene->s0, probe, cfg.separating_options());
            seed_second_body(scene->s0, measured, sep.separating, s);
        }
        seeds = s;
        if (s.has_second) {
            Scene sphere_only;
            sphere_only.s0 = scene->s0;
            seg = segment_echograph(scene->s0, echograph(sphere_only, measured, eo), s,
                                    cfg.k_max);
        }
    }
    catch (const Error& e) {
        log << "echograph labels unavailable: " << e.what() << '\n';
    }
    write_file_atomic(out_path(cfg, "echograph.svg"),
                      echograph_svg(scene->s0, echo, seg ? &*seg : nullptr,
                                    seeds ? &*seeds : nullptr, provenance(cfg, *scene)));
    long reflexive = 0;
    for (const auto& e : echo)
        reflexive += e.reflexive;
    log << echo.size() << " echo points, " << reflexive << " reflexive\n";
    return kExitOk;
}

int cmd_reconstruct(const RunConfig& cfg, std::ostream& log)
{
    prepare(cfg);
    const auto scene = load_checked_scene(cfg, log);
    if (!scene)
        return kExitInvalidScene;
    const DiagData measured = to_measured(dataset_to_diag(read_dataset(cfg, "diag", *scene)));
    const LiveChordProbe probe(*scene);

    HullOptions ho;
    ho.directions = cfg.hull_directions;
    ho.tol_factor = cfg.vacuous_tol;
    ho.threads = cfg.threads;
    write_file_atomic(out_path(cfg, "hull.csv"),
                      hull_to_csv(convex_hull_recover(scene->s0, probe, ho)));
    const VacuousReport vac = vacuous_components(scene->s0, probe, cfg.separating_options());
    write_file_atomic(out_path(cfg, "vacuous.json"), vacuous_report_json(vac));

    ReconstructionState st;
    try {
        st = reconstruct_all(scene->s0, measured, vac.separating, cfg.reconstruct_options());
    }
    catch (const Error& e) {
        nlohmann::ordered_json j;
        j["status"] = "aborted";
        j["error"] = to_string(e.code());
        j["message"] = e.what();
        write_file_atomic(out_path(cfg, "reconstruction.json"), j.dump(2) + "\n");
        log << "reconstruction aborted: " << e.what() << '\n';
        return kExitReconstructionAbort;
    }
    std::optional<ValidationReport> validation;
    if (scene->bodies.size() == 2)
        validation = validate_reconstruction(*scene, st);
    write_file_atomic(out_path(cfg, "reconstruction.csv"), reconstruction_to_csv(st));
    write_file_atomic(out_path(cfg, "reconstruction.json"),
                      reconstruction_manifest_json(st, validation ? &*validation : nullptr));
    write_file_atomic(out_path(cfg, "reconstruction.svg"),
                      reconstruction_svg(scene->s0, st, &*scene, provenance(cfg, *scene)));
    log << "reconstructed " << st.stats.points << " points to depth " << st.depth << '\n';
    if (validation)
        log << "hausdorff " << validation->hausdorff << ", coverage " << validation->coverage
            << ", audit violations " << validation->audit_violations << '\n';
    return kExitOk;
}

int cmd_verify(const RunConfig& cfg, std::ostream& log)
{
    prepare(cfg);
    const auto scene = load_checked_scene(cfg, log);
    if (!scene)
        return kExitInvalidScene;
    const Scene& s = *scene;
    std::vector<CheckResult> checks;
    auto run = [&](CheckResult r) {
        log << (r.pass() ? "PASS " : "FAIL ") << r.name << ": " << r.summary() << '\n';
        checks.push_back(std::move(r));
    };
    auto guarded = [&](const char* name, auto&& fn) {
        try {
            run(fn());
        }
        catch (const std::exception& e) {
            CheckResult r;
            r.name = name;
            r.failed = true;
            r.notes.push_back(e.what());
            run(std::move(r));
        }
    };
    const std::uint64_t seed = cfg.seed;
    guarded("scene_geometry", [&] { return check_scene_geometry(s, 1000, seed); });
    guarded("reflection_suite",
            [&] { return check_reflection_suite(s, cfg.verify_rays, seed + 1, cfg.limits()); });
    guarded("trapped_detection",
            [&] { return check_trapped(s, cfg.verify_rays, seed + 2, cfg.limits()); });
    if (s.dim == 2 && !s.bodies.empty()) {
        guarded("travel_time_derivative", [&] {
            return check_travel_time_derivative(s, cfg.verify_branches, cfg.stencil_h, seed + 3);
        });
        guarded("direction_recovery", [&] {
            return check_direction_recovery(s, std::min(cfg.verify_branches, 100),
                                            cfg.stencil_h, seed + 4);
        });
    }
    if (s.dim == 2) {
        guarded("spectrum", [&] {
            SpectrumDataset grid;
            try {
                grid = read_dataset(cfg, "spectrum", s);
            }
            catch (const Error&) {
                grid = sample_spectrum(s, cfg.x_grid, cfg.dir_grid, cfg.limits(), cfg.threads);
            }
            const DiagData diag = diag_for(s, cfg, log);
            run(check_distinct_times(grid, cfg.coincidence_tol, 10000));
            return check_spectrum_invariants(s, grid, echograph(s, diag));
        });
        guarded("determinism", [&] {
            CheckResult r;
            r.name = "determinism";
            const auto a = dataset_to_csv(sample_spectrum(s, 256, 256, cfg.limits(), 1));
            const auto b = dataset_to_csv(sample_spectrum(s, 256, 256, cfg.limits(), 4));
            const auto c = dataset_to_csv(diag_to_dataset(compute_diag(s, cfg, 256, 1)));
            const auto d = dataset_to_csv(diag_to_dataset(compute_diag(s, cfg, 256, 4)));
            r.add("spectrum_bytes_differ", a == b ? 0.0 : 1.0, 0.0);
            r.add("diagonal_bytes_differ", c == d ? 0.0 : 1.0, 0.0);
            return r;
        });
    }
    if (s.dim == 2 && s.bodies.size() == 1) {
        guarded("single_convex_reconstruct",
                [&] { return check_single_convex(s, diag_for(s, cfg, log), 1e-3); });
    }
    if (s.dim == 2 && s.bodies.size() >= 2) {
        guarded("hull_support",
                [&] { return check_hull(s, cfg.hull_directions, 1e-3, cfg.threads); });
        guarded("separating_line", [&] { return check_separating_line(s, cfg.separating_options()); });
    }
    if (s.dim == 2 && s.bodies.size() == 2) {
        guarded("reconstruction", [&] {
            const DiagData measured = to_measured(diag_for(s, cfg, log));
            const LiveChordProbe probe(s);
            const auto sep = vacuous_components(s.s0, probe, cfg.separating_options());
            run(check_seeds(s, measured, sep.separating, 1e-4));
            const auto st =
                reconstruct_all(s.s0, measured, sep.separating, cfg.reconstruct_options());
            return check_reconstruction(s, st, 5e-3, 0.95);
        });
    }
    write_file_atomic(out_path(cfg, "verify.json"),
                      checks_to_json(checks, scene_hash(s), config_hash(cfg)));
    const bool ok = std::all_of(checks.begin(), checks.end(),
                                [](const CheckResult& c) { return c.pass(); });
    log << (ok ? "all checks passed" : "some checks failed") << '\n';
    return ok ? kExitOk : kExitFailure;
}

}  // namespace bscatter
