#include "support.hpp"

#include "bscatter/config.hpp"
#include "bscatter/figures.hpp"
#include "bscatter/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace bscatter;
using bscatter::testing::Gen;
using bscatter::testing::scene_path;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("bscatter_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(BSCATTER_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig small_config(const std::string& scene, const fs::path& out)
{
    RunConfig c;
    c.scene = scene_path(scene);
    c.out = out.string();
    c.x_grid = 256;
    c.dir_grid = 256;
    c.diag_grid = 256;
    return c;
}

std::size_t count(const std::string& text, const std::string& what)
{
    std::size_t n = 0;
    for (auto p = text.find(what); p != std::string::npos; p = text.find(what, p + 1))
        ++n;
    return n;
}

}  // namespace

TEST(Config, JsonRoundTrip)
{
    Gen gen(61);
    for (int i = 0; i < 50; ++i) {
        RunConfig c;
        c.scene = "s" + std::to_string(i) + ".json";
        c.x_grid = 1 << gen.integer(8, 16);
        c.k_max = gen.integer(1, 9);
        c.stencil_h = gen.uniform(1e-6, 1e-3);
        c.max_error = gen.uniform(1e-5, 1e-2);
        c.seed = static_cast<std::uint64_t>(gen.integer(0, 1 << 30)) << 20;
        const RunConfig back = config_from_json(config_to_json(c));
        EXPECT_EQ(config_to_json(back), config_to_json(c));
        EXPECT_EQ(back.stencil_h, c.stencil_h);
        EXPECT_EQ(back.seed, c.seed);
    }
}

TEST(Config, RejectsUnknownKeysAndWrongTypes)
{
    EXPECT_THROW(config_from_json(R"({"x_grd": 512})"), Error);
    EXPECT_THROW(config_from_json(R"({"x_grid": "many"})"), Error);
    EXPECT_THROW(config_from_json("[1, 2]"), Error);
    EXPECT_EQ(config_from_json(R"({"k_max": 3})").k_max, 3);
}

TEST(Config, Validation)
{
    RunConfig c;
    EXPECT_NO_THROW(validate_config(c));
    for (int bad : {100, 128, 131072, 768}) {
        RunConfig b;
        b.diag_grid = bad;
        EXPECT_THROW(validate_config(b), Error) << bad;
    }
    RunConfig neg;
    neg.reflexive_tol = 0.0;
    EXPECT_THROW(validate_config(neg), Error);
    RunConfig threads;
    threads.threads = -1;
    EXPECT_THROW(validate_config(threads), Error);
}

TEST(Config, HashIgnoresPathsAndThreads)
{
    RunConfig a, b;
    b.scene = "elsewhere.json";
    b.out = "other";
    b.threads = 7;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.k_max = 4;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Commands, SimulateDiscFan)
{
    const fs::path out = fresh_dir("sim_disc");
    RunConfig c = small_config("disc", out);
    std::ostringstream log;
    ASSERT_EQ(cmd_simulate(c, log), kExitOk) << log.str();
    const std::string svg = read_file((out / "simulate.svg").string());
    EXPECT_EQ(count(svg, "<polyline"), 16u);
    EXPECT_NE(svg.find(config_hash(c)), std::string::npos);

    const std::string csv = read_file((out / "trajectories.csv").string());
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line, "ray,seg_index,x1,x2,body_id,t_cumulative");
    // The head-on ray (alpha = 0) is the eighth of the fan: (-4,0) -> (-3,0) -> (-4,0).
    std::vector<std::vector<std::string>> head_on;
    while (std::getline(lines, line)) {
        auto f = split_csv_line(line);
        if (f[0] == "8")
            head_on.push_back(f);
    }
    ASSERT_EQ(head_on.size(), 3u);
    EXPECT_EQ(parse_double(head_on[1][2]), -3.0);
    EXPECT_EQ(head_on[1][4], "1");
    EXPECT_EQ(parse_double(head_on[2][2]), -4.0);
    EXPECT_EQ(parse_double(head_on[2][5]), 2.0);
}

TEST(Commands, SimulateEmptySceneHasStraightChords)
{
    const fs::path out = fresh_dir("sim_empty");
    std::ostringstream log;
    ASSERT_EQ(cmd_simulate(small_config("empty", out), log), kExitOk);
    const std::string csv = read_file((out / "trajectories.csv").string());
    EXPECT_EQ(count(csv, "\n"), 1u + 2u * 16u);
}

TEST(Commands, SpectrumIsByteIdenticalAcrossRunsAndThreads)
{
    const fs::path a = fresh_dir("spec_a"), b = fresh_dir("spec_b");
    std::ostringstream log;
    RunConfig ca = small_config("disc", a), cb = small_config("disc", b);
    ca.threads = 1;
    cb.threads = 4;
    ASSERT_EQ(cmd_spectrum(ca, log), kExitOk);
    ASSERT_EQ(cmd_spectrum(cb, log), kExitOk);
    for (const char* f : {"spectrum.csv", "diag.csv", "spectrum.json", "diag.json"})
        EXPECT_EQ(read_file((a / f).string()), read_file((b / f).string())) << f;
    ASSERT_EQ(cmd_spectrum(ca, log), kExitOk);
    EXPECT_EQ(read_file((a / "spectrum.csv").string()), read_file((b / "spectrum.csv").string()));
}

TEST(Commands, EchographWritesFigure)
{
    const fs::path out = fresh_dir("echo_disc");
    std::ostringstream log;
    const RunConfig c = small_config("disc", out);
    ASSERT_EQ(cmd_spectrum(c, log), kExitOk);
    ASSERT_EQ(cmd_echograph(c, log), kExitOk);
    const std::string svg = read_file((out / "echograph.svg").string());
    EXPECT_NE(svg.find("<svg"), std::string::npos);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_GT(count(read_file((out / "echograph.csv").string()), "\n"), 256u);
}

TEST(Commands, SymmetricTwoDiscsAbortWithNonUniqueMinimum)
{
    const fs::path out = fresh_dir("recon_sym");
    std::ostringstream log;
    RunConfig c = small_config("two_discs", out);
    c.separating_phi = 30;
    c.separating_offsets = 128;
    EXPECT_THROW(cmd_reconstruct(c, log), Error);
    ASSERT_EQ(cmd_spectrum(c, log), kExitOk);
    EXPECT_EQ(cmd_reconstruct(c, log), kExitReconstructionAbort);
    const std::string report = read_file((out / "reconstruction.json").string());
    EXPECT_NE(report.find("NonUniqueMinimum"), std::string::npos);
    EXPECT_NE(report.find("aborted"), std::string::npos);
}

TEST(Cli, ExitCodes)
{
    const fs::path dir = fresh_dir("cli");
    const std::string overlap = (dir / "overlap.json").string();
    write_file_atomic(overlap, R"({"s0": {"center": [0, 0], "radius": 4}, "bodies": [
        {"type": "disc", "center": [-0.5, 0], "radius": 1},
        {"type": "disc", "center": [0.5, 0], "radius": 1}]})");
    const std::string out = " --out " + (dir / "o").string();
    EXPECT_EQ(run_cli("simulate --scene " + overlap + out), kExitInvalidScene);
    EXPECT_EQ(run_cli("simulate --scene " + scene_path("disc") + out), kExitOk);
    EXPECT_NE(run_cli("simulate --scene " + scene_path("disc") + " --x-grid 100" + out), kExitOk);
    EXPECT_NE(run_cli("simulate" + out), kExitOk);
    EXPECT_NE(run_cli("transmogrify --scene " + scene_path("disc")), kExitOk);

    const std::string cfg = (dir / "cfg.json").string();
    write_file_atomic(cfg, R"({"fan": 4, "diag_grid": 256})");
    EXPECT_EQ(run_cli("--config " + cfg + " simulate --fan 5 --scene " + scene_path("empty") + out),
              kExitOk);
    EXPECT_EQ(count(read_file((dir / "o" / "trajectories.csv").string()), "\n"), 1u + 2u * 5u);
}

TEST(Figures, SvgCanvasIsWellFormed)
{
    SvgCanvas svg(BoundingSphere{Vec::Zero(), 4.0});
    svg.comment("a -- b");
    svg.begin_group("g1", "title");
    svg.circle(Vec::Zero(), 1.0, "#000", 0.01);
    svg.polyline({planar(0, 0), planar(1, 1), planar(2, 0)}, "red", 0.02, "0.1 0.1", true);
    svg.dots({planar(0.5, 0.5), planar(-0.5, 0.5)}, 0.01, "blue");
    svg.end_group();
    const std::string s = svg.str();
    EXPECT_EQ(count(s, "<g"), count(s, "</g>"));
    EXPECT_EQ(s.find("a -- b"), std::string::npos);
    EXPECT_NE(s.find("<polygon"), std::string::npos);
    EXPECT_NE(s.find("viewBox"), std::string::npos);
}
