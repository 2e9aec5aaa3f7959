#include "bscatter/config.hpp"

#include "bscatter/io.hpp"

#include <json.hpp>

namespace bscatter {

namespace {

/// Calls f(key, member) for every configurable field, in a fixed order.
template <class C, class F>
void for_each_field(C& c, F&& f)
{
    f("scene", c.scene);
    f("out", c.out);
    f("x_grid", c.x_grid);
    f("dir_grid", c.dir_grid);
    f("diag_grid", c.diag_grid);
    f("max_reflections", c.max_reflections);
    f("max_time", c.max_time);
    f("tangency_threshold", c.tangency_threshold);
    f("k_max", c.k_max);
    f("stencil_h", c.stencil_h);
    f("reflexive_tol", c.reflexive_tol);
    f("lipschitz_factor", c.lipschitz_factor);
    f("vacuous_tol", c.vacuous_tol);
    f("coincidence_tol", c.coincidence_tol);
    f("direction_error", c.direction_error);
    f("max_error", c.max_error);
    f("separating_phi", c.separating_phi);
    f("separating_offsets", c.separating_offsets);
    f("hull_directions", c.hull_directions);
    f("entry_angle_deg", c.entry_angle_deg);
    f("fan", c.fan);
    f("fan_spread_deg", c.fan_spread_deg);
    f("verify_rays", c.verify_rays);
    f("verify_branches", c.verify_branches);
    f("seed", c.seed);
    f("threads", c.threads);
}

bool power_of_two_in_range(int v) { return v >= 256 && v <= 65536 && (v & (v - 1)) == 0; }

}  // namespace

TraceLimits RunConfig::limits() const
{
    TraceLimits l;
    l.max_reflections = max_reflections;
    if (max_time > 0.0)
        l.max_time = max_time;
    l.tangency_threshold = tangency_threshold;
    return l;
}

SweepOptions RunConfig::sweep() const
{
    SweepOptions s;
    s.limits = limits();
    return s;
}

ReconstructOptions RunConfig::reconstruct_options() const
{
    ReconstructOptions o;
    o.k_max = k_max;
    o.echo.reflexive_tol = reflexive_tol;
    o.echo.lipschitz_factor = lipschitz_factor;
    o.backtrace.direction_error = direction_error;
    o.backtrace.max_error = max_error;
    o.threads = threads;
    return o;
}

VacuousOptions RunConfig::separating_options() const
{
    VacuousOptions o;
    o.n_phi = separating_phi;
    o.n_p = separating_offsets;
    o.tol_factor = vacuous_tol;
    o.threads = threads;
    return o;
}

RunConfig config_from_json(const std::string& text, RunConfig base)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    }
    catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("config is not JSON: ") + e.what());
    }
    if (!j.is_object())
        throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
    std::size_t matched = 0;
    for_each_field(base, [&](const char* key, auto& member) {
        if (!j.contains(key))
            return;
        ++matched;
        try {
            j.at(key).get_to(member);
        }
        catch (const nlohmann::json::exception&) {
            throw Error(ErrorCode::InvalidArgument, std::string("bad value for config key ") + key);
        }
    });
    if (matched != j.size()) {
        for (const auto& item : j.items()) {
            bool known = false;
            for_each_field(base, [&](const char* key, auto&) { known = known || item.key() == key; });
            if (!known)
                throw Error(ErrorCode::InvalidArgument, "unknown config key " + item.key());
        }
    }
    return base;
}

std::string config_to_json(const RunConfig& cfg)
{
    nlohmann::ordered_json j;
    for_each_field(cfg, [&](const char* key, const auto& member) { j[key] = member; });
    return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg)
{
    RunConfig c = cfg;
    c.scene.clear();
    c.out.clear();
    c.threads = 0;
    return fnv1a_hex(config_to_json(c));
}

void validate_config(const RunConfig& cfg)
{
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
    if (!power_of_two_in_range(cfg.x_grid) || !power_of_two_in_range(cfg.dir_grid)
        || !power_of_two_in_range(cfg.diag_grid))
        fail("grid resolutions must be powers of two between 256 and 65536");
    for (double tol : {cfg.tangency_threshold, cfg.stencil_h, cfg.reflexive_tol,
                       cfg.lipschitz_factor, cfg.vacuous_tol, cfg.coincidence_tol,
                       cfg.direction_error, cfg.max_error})
        if (!(tol > 0.0))
            fail("tolerances must be positive");
    if (cfg.max_time < 0.0)
        fail("max_time must be positive (or 0 for the default)");
    if (cfg.max_reflections <= 0 || cfg.k_max <= 0 || cfg.fan <= 0 || cfg.verify_rays <= 0
        || cfg.verify_branches <= 0 || cfg.separating_phi <= 0 || cfg.separating_offsets <= 0
        || cfg.hull_directions <= 0)
        fail("counts must be positive");
    if (cfg.threads < 0)
        fail("threads must be >= 0");
}

}  // namespace bscatter
