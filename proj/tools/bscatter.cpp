#include "bscatter/config.hpp"
#include "bscatter/io.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>

using namespace bscatter;

namespace {

/// Registers one flag bound to a shadow config; `overrides` copies the parsed value
/// over the loaded configuration when the flag was given.
class FlagTable {
public:
    FlagTable(CLI::App& app, RunConfig& shadow) : app_(app), shadow_(shadow) {}

    template <class T>
    void add(const std::string& name, T RunConfig::*member, const std::string& help)
    {
        CLI::Option* opt = app_.add_option("--" + name, shadow_.*member, help);
        overrides_.push_back([opt, member, this](RunConfig& cfg) {
            if (opt->count() > 0)
                cfg.*member = shadow_.*member;
        });
    }

    void apply(RunConfig& cfg) const
    {
        for (const auto& f : overrides_)
            f(cfg);
    }

private:
    CLI::App& app_;
    RunConfig& shadow_;
    std::vector<std::function<void(RunConfig&)>> overrides_;
};

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Billiard scattering: simulate rays, sample travelling-time spectra and "
                 "reconstruct two convex obstacles from them."};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_file;
    app.add_option("--config", config_file, "JSON config file; flags override its keys");
    RunConfig shadow;
    FlagTable flags(app, shadow);
    flags.add("scene", &RunConfig::scene, "scene JSON file");
    flags.add("out", &RunConfig::out, "output directory");
    flags.add("x-grid", &RunConfig::x_grid, "entry points on S0 (power of two)");
    flags.add("dir-grid", &RunConfig::dir_grid, "entry directions per point (power of two)");
    flags.add("diag-grid", &RunConfig::diag_grid, "diagonal grid points (power of two)");
    flags.add("max-reflections", &RunConfig::max_reflections, "trace budget in reflections");
    flags.add("max-time", &RunConfig::max_time, "trace budget in length (0: 100 a)");
    flags.add("tangency-threshold", &RunConfig::tangency_threshold, "smallest |<in,n>|");
    flags.add("k-max", &RunConfig::k_max, "deepest reconstruction level");
    flags.add("stencil-h", &RunConfig::stencil_h, "finite-difference step (rad)");
    flags.add("reflexive-tol", &RunConfig::reflexive_tol, "reflexivity test tolerance");
    flags.add("lipschitz-factor", &RunConfig::lipschitz_factor, "stencil branch gate");
    flags.add("vacuous-tol", &RunConfig::vacuous_tol, "vacuous chord tolerance / a");
    flags.add("coincidence-tol", &RunConfig::coincidence_tol, "distinct-time tolerance");
    flags.add("direction-error", &RunConfig::direction_error, "recovered direction error");
    flags.add("max-error", &RunConfig::max_error, "largest accepted normal error (rad)");
    flags.add("separating-phi", &RunConfig::separating_phi, "line directions for V");
    flags.add("separating-offsets", &RunConfig::separating_offsets, "line offsets for V");
    flags.add("hull-directions", &RunConfig::hull_directions, "support directions");
    flags.add("entry-angle-deg", &RunConfig::entry_angle_deg, "fan entry point angle");
    flags.add("fan", &RunConfig::fan, "rays in the simulated fan");
    flags.add("fan-spread-deg", &RunConfig::fan_spread_deg, "fan half-width");
    flags.add("verify-rays", &RunConfig::verify_rays, "random rays per verify check");
    flags.add("verify-branches", &RunConfig::verify_branches, "random branches in verify");
    flags.add("seed", &RunConfig::seed, "seed for random test points");
    flags.add("threads", &RunConfig::threads, "worker threads (0: all cores)");

    using Command = int (*)(const RunConfig&, std::ostream&);
    Command command = nullptr;
    const std::pair<const char*, Command> commands[] = {
        {"simulate", cmd_simulate},     {"spectrum", cmd_spectrum},
        {"echograph", cmd_echograph},   {"reconstruct", cmd_reconstruct},
        {"verify", cmd_verify},
    };
    const char* help[] = {
        "trace a fan of rays: trajectories.csv, simulate.svg",
        "sample the spectrum and the diagonal: spectrum.csv, diag.csv",
        "echograph of the diagonal data: echograph.csv, echograph.svg",
        "reconstruct the obstacle from the diagonal data",
        "run the oracle property checks: verify.json",
    };
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        auto* sub = app.add_subcommand(commands[i].first, help[i]);
        sub->callback([&command, c = commands[i].second] { command = c; });
    }

    CLI11_PARSE(app, argc, argv);

    RunConfig cfg;
    try {
        if (!config_file.empty())
            cfg = config_from_json(read_file(config_file));
        flags.apply(cfg);
        if (cfg.scene.empty())
            throw Error(ErrorCode::InvalidArgument, "no scene given (--scene or config key)");
        return command(cfg, std::cerr);
    }
    catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}
