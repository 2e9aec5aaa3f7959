// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "bscatter/config.hpp"
#include "bscatter/figures.hpp"
#include "bscatter/io.hpp"
#include "bscatter/parallel.hpp"
#include "bscatter/verify.hpp"

#include <chrono>
#include <cstdio>
#include <map>
#include <regex>
#include <set>

using namespace bscatter;

namespace {

Scene scene(const std::string& name)
{
    return load_scene_json(std::string(BSCATTER_SCENE_DIR) + "/" + name + ".json");
}

struct Criterion {
    int number;
    std::string title;
    bool pass = true;
    std::vector<std::string> details;

    void take(const CheckResult& r)
    {
        pass = pass && r.pass();
        details.push_back(r.summary());
    }
    void expect(bool ok, const std::string& what)
    {
        pass = pass && ok;
        details.push_back(std::string(ok ? "" : "NOT ") + what);
    }
};

class Report {
public:
    Criterion& open(int number, std::string title)
    {
        started_ = std::chrono::steady_clock::now();
        current_ = Criterion{number, std::move(title)};
        return current_;
    }

    void close()
    {
        const double s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
        std::printf("%s %d %s (%.1f s)\n", current_.pass ? "PASS" : "FAIL", current_.number,
                    current_.title.c_str(), s);
        for (const auto& d : current_.details)
            std::printf("    %s\n", d.c_str());
        std::fflush(stdout);
        failed_ += current_.pass ? 0 : 1;
    }

    int failed() const { return failed_; }

private:
    Criterion current_{0, ""};
    std::chrono::steady_clock::time_point started_;
    int failed_ = 0;
};

template <class F>
void guarded(Criterion& c, F&& f)
{
    try {
        f();
    }
    catch (const std::exception& e) {
        c.expect(false, std::string("completed without error: ") + e.what());
    }
}

DiagData diag_of(const Scene& s, int resolution, int threads)
{
    DiagOptions o;
    o.resolution = resolution;
    o.threads = threads;
    return diag_spectrum(s, o);
}

}  // namespace

int main()
{
    const RunConfig cfg;  // defaults: diag grid 4096, K_max 6, seed, tolerances
    const int many = std::max(4, default_threads());
    const std::uint64_t seed = cfg.seed;
    Report report;

    const Scene ex11 = scene("ex11");
    const Scene two_discs = scene("two_discs");

    {
        auto& c = report.open(1, "reflection/reversal suite, 1e4 ex11 rays");
        guarded(c, [&] { c.take(check_reflection_suite(ex11, 10000, seed, cfg.limits())); });
        report.close();
    }
    {
        auto& c = report.open(2, "travel-time derivative identity, 1e3 regular branches");
        guarded(c, [&] { c.take(check_travel_time_derivative(ex11, 1000, 1e-4, seed)); });
        report.close();
    }
    {
        auto& c = report.open(3, "single-body reconstruction from measured diagonal data");
        guarded(c, [&] {
            const Scene disc = scene("disc");
            c.take(check_single_convex(disc, diag_of(disc, 1024, many), 1e-5));
            const Scene ellipse = scene("ellipse");
            c.take(check_single_convex(ellipse, diag_of(ellipse, 1024, many), 1e-3));
        });
        report.close();
    }
    {
        auto& c = report.open(4, "two-disc hull and ex11 separating vacuous line");
        guarded(c, [&] {
            c.take(check_hull(two_discs, 360, 1e-3, many));
            c.take(check_separating_line(ex11, cfg.separating_options()));
        });
        report.close();
    }

    // One ex11 diagonal dataset feeds criteria 5, 6 and 9.
    DiagData diag_n;
    std::optional<SeparatingLine> line;
    ReconstructionState state;
    bool have_state = false;
    {
        auto& c = report.open(5, "ex11 two-body reconstruction, diag 4096, K_max 6");
        guarded(c, [&] {
            diag_n = diag_of(ex11, cfg.diag_grid, many);
            line = vacuous_components(ex11.s0, LiveChordProbe(ex11), cfg.separating_options())
                       .separating;
            c.expect(line.has_value(), "separating line found");
            ReconstructOptions ro = cfg.reconstruct_options();
            ro.threads = many;
            state = reconstruct_all(ex11.s0, to_measured(diag_n), line, ro);
            have_state = true;
            c.take(check_reconstruction(ex11, state, 5e-3, 0.95));
        });
        report.close();
    }
    {
        auto& c = report.open(6, "ex11 echograph figure structure and seed identity");
        guarded(c, [&] {
            c.expect(have_state, "reconstruction state available");
            if (!have_state)
                return;
            const std::string hash = config_hash(cfg);
            const std::string svg = echograph_svg(ex11.s0, state.segmentation.echo,
                                                  &state.segmentation, &state.seeds, hash);
            write_file_atomic("acceptance_echograph.svg", svg);
            c.expect(svg.find("<!-- config " + hash) != std::string::npos,
                     "figure carries the config hash");
            c.expect(svg.find("id=\"seeds\"") != std::string::npos, "cusp marker at x_K drawn");
            std::map<std::pair<int, std::string>, std::set<int>> levels;
            const std::regex group("id=\"arc-b([12])-k([0-9]+)-([BLR])\"");
            for (auto it = std::sregex_iterator(svg.begin(), svg.end(), group);
                 it != std::sregex_iterator(); ++it)
                levels[{std::stoi((*it)[1]), (*it)[3]}].insert(std::stoi((*it)[2]));
            for (int body : {1, 2}) {
                const std::string b = std::to_string(body);
                c.expect(levels[{body, "B"}].count(1) == 1, "level-1 arc of body " + b);
                for (const char* side : {"L", "R"}) {
                    const auto& ks = levels[{body, side}];
                    bool nested = ks.size() >= 3;
                    for (int k = 2; nested && k <= 4; ++k)
                        nested = ks.count(k) == 1;
                    c.expect(nested, "nested arcs of levels 2..4 for body " + b + " side " + side
                                         + " (" + std::to_string(ks.size()) + " levels)");
                }
            }
            c.take(check_seeds(ex11, to_measured(diag_n), line, 1e-4));
        });
        report.close();
    }

    SpectrumDataset spectrum_n;
    {
        auto& c = report.open(7, "distinct travelling times over >= 1e4 ex11 cells");
        guarded(c, [&] {
            spectrum_n = sample_spectrum(ex11, 256, 1024, cfg.limits(), many);
            c.take(check_distinct_times(spectrum_n, 1e-9, 10000));
        });
        report.close();
    }
    {
        auto& c = report.open(8, "trapped detection, two discs, 1e4 entries");
        guarded(c, [&] { c.take(check_trapped(two_discs, 10000, seed, cfg.limits())); });
        report.close();
    }
    {
        auto& c = report.open(9, "byte-identical outputs across runs and thread counts");
        guarded(c, [&] {
            const std::string spec_n = dataset_to_csv(spectrum_n);
            const std::string spec_1 =
                dataset_to_csv(sample_spectrum(ex11, 256, 1024, cfg.limits(), 1));
            const std::string spec_again =
                dataset_to_csv(sample_spectrum(ex11, 256, 1024, cfg.limits(), many));
            c.expect(spec_n == spec_1, "spectrum.csv identical, 1 vs " + std::to_string(many)
                                           + " threads");
            c.expect(spec_n == spec_again, "spectrum.csv identical across two runs");

            const DiagData diag_1 = diag_of(ex11, cfg.diag_grid, 1);
            c.expect(dataset_to_csv(diag_to_dataset(diag_n)) == dataset_to_csv(diag_to_dataset(diag_1)),
                     "diag.csv identical, 1 vs " + std::to_string(many) + " threads");
            const std::string echo_n = echograph_to_csv(echograph(ex11, diag_n));
            c.expect(echo_n == echograph_to_csv(echograph(ex11, diag_1)),
                     "echograph.csv identical across thread counts");
            c.expect(echo_n == echograph_to_csv(echograph(ex11, diag_n)),
                     "echograph.csv identical across two runs");

            c.expect(have_state, "reconstruction state available");
            if (!have_state)
                return;
            ReconstructOptions ro = cfg.reconstruct_options();
            ro.threads = 1;
            const ReconstructionState st_1 = reconstruct_all(ex11.s0, to_measured(diag_1), line, ro);
            ro.threads = many;
            const ReconstructionState st_again =
                reconstruct_all(ex11.s0, to_measured(diag_n), line, ro);
            const std::string csv = reconstruction_to_csv(state);
            const std::string json = reconstruction_manifest_json(state, nullptr);
            c.expect(csv == reconstruction_to_csv(st_1) && json == reconstruction_manifest_json(st_1, nullptr),
                     "reconstruction.csv/.json identical across thread counts");
            c.expect(csv == reconstruction_to_csv(st_again)
                         && json == reconstruction_manifest_json(st_again, nullptr),
                     "reconstruction.csv/.json identical across two runs");
        });
        report.close();
    }

    std::printf("%s: %d of 9 criteria failed\n", report.failed() ? "FAIL" : "PASS", report.failed());
    return report.failed() ? 1 : 0;
}
