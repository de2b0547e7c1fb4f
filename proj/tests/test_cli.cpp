#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pf/trace_io.hpp"
#include "support/generators.hpp"

// Binary and fixture locations come from the build system.
#ifndef PF_CLI_BIN
#error "PF_CLI_BIN must be defined"
#endif
#ifndef PF_FIXTURE_DIR
#error "PF_FIXTURE_DIR must be defined"
#endif

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("pf_cli_" + std::to_string(static_cast<unsigned>(std::rand())));
        fs::create_directories(path);
    }
    ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(PF_CLI_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string kFixtureDir = PF_FIXTURE_DIR;

}  // namespace

TEST_CASE("run is deterministic: identical flags give identical bytes") {
    TempDir dir;
    const std::string common =
        "run --kernels scalar --preset tiny --images 6 --image-tokens 8 --mode pulsefocus "
        "--lambda 2.0 --seed 7 --scripted " +
        kFixtureDir + "/case_counting_6img.txt --out-dir " + dir.path.string();

    CHECK(run_cli(common + " --trace " + dir.file("a.trace") + " --transcript " +
                  dir.file("a.txt")) == 0);
    CHECK(run_cli(common + " --trace " + dir.file("b.trace") + " --transcript " +
                  dir.file("b.txt")) == 0);
    CHECK(slurp(dir.file("a.trace")) == slurp(dir.file("b.trace")));
    CHECK(slurp(dir.file("a.txt")) == slurp(dir.file("b.txt")));
}

TEST_CASE("invalid run parameters exit with the usage-error code") {
    TempDir dir;
    CHECK(run_cli("run --lambda -1 --out-dir " + dir.path.string()) == 2);
    CHECK(run_cli("run --preset nosuch --out-dir " + dir.path.string()) == 2);
    CHECK(run_cli("run --plan-max 0 --out-dir " + dir.path.string()) == 2);
    CHECK(run_cli("run --no-such-flag") == 2);
    CHECK(run_cli("") == 2);  // a subcommand is required
}

TEST_CASE("analyze on the bundled fixture reproduces the golden CSVs") {
    TempDir dir;
    const std::string trace = kFixtureDir + "/fixture.trace";
    REQUIRE(fs::exists(trace));
    CHECK(run_cli("analyze " + trace + " --kernels scalar --pulse --colouring --alignment "
                  "--out-dir " + dir.path.string()) == 0);

    for (const char* name : {"fixture_pulse.csv", "fixture_colouring.csv",
                             "fixture_alignment.csv"})
        CHECK(slurp(dir.file(name)) == slurp(kFixtureDir + "/golden/" + name));
}

TEST_CASE("plot-data emits the golden long-format CSV") {
    TempDir dir;
    CHECK(run_cli("plot-data " + kFixtureDir + "/fixture.trace --kernels scalar --out " +
                  dir.file("fixture_plot.csv")) == 0);
    CHECK(slurp(dir.file("fixture_plot.csv")) ==
          slurp(kFixtureDir + "/golden/fixture_plot.csv"));
}

TEST_CASE("validate exit codes reflect findings") {
    TempDir dir;
    {
        std::ofstream out(dir.file("bad.txt"));
        out << "<focus:I9>out of range</focus>\n";
    }
    CHECK(run_cli("validate " + dir.file("bad.txt") + " -n 6") == 1);

    {
        std::ofstream out(dir.file("warn.txt"));
        out << "<plan>planned one thing. Next focus: I1</plan>\n<focus:I2>another</focus>\n";
    }
    // mismatch is a warning, not an error
    CHECK(run_cli("validate " + dir.file("warn.txt") + " -n 6") == 0);

    CHECK(run_cli("validate " + kFixtureDir + "/fixture_transcript.txt -n 6") == 0);
    CHECK(run_cli("validate " + dir.file("missing.txt") + " -n 6") == 2);
}

TEST_CASE("bias over planted traces recovers monotone means") {
    TempDir dir;
    pf::testgen::Rng rng(31);
    std::vector<std::string> paths;
    for (int t = 0; t < 24; ++t) {
        auto trace = pf::testgen::planted_bias_trace(rng, 5, 10, 0.7, 0.1);
        trace.meta.tag = "task" + std::to_string(t % 3);
        const std::string path = dir.file("t" + std::to_string(t) + ".trace");
        pf::write_trace(trace, path);
        paths.push_back(path);
    }
    std::string args = "bias --group-by tag --out " + dir.file("bias.csv");
    for (const auto& p : paths) args += " " + p;
    CHECK(run_cli(args) == 0);

    std::ifstream in(dir.file("bias.csv"));
    std::string header;
    std::getline(in, header);
    CHECK(header == "position,mean,std,n");
    double prev = 1e9;
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // position
        std::getline(ss, cell, ',');  // mean
        const double mean = std::strtod(cell.c_str(), nullptr);
        CHECK(mean < prev);
        prev = mean;
        ++rows;
    }
    CHECK(rows == 5);
}

TEST_CASE("grammar-error episodes exit with the dedicated code") {
    TempDir dir;
    {
        std::ofstream out(dir.file("broken.txt"));
        out << "<plan>fine start. Next focus: I1</plan>\n<wat>";
    }
    CHECK(run_cli("run --preset tiny --images 2 --image-tokens 8 --scripted " +
                  dir.file("broken.txt") + " --out-dir " + dir.path.string()) == 3);
}

TEST_CASE("free-cot traces replay pulse but refuse alignment") {
    TempDir dir;
    CHECK(run_cli("run --preset tiny --images 2 --image-tokens 8 --mode free-cot "
                  "--temperature 0.9 --sampling-seed 5 --total-cap 40 --out-dir " +
                  dir.path.string() + " --trace " + dir.file("free.trace")) == 0);
    CHECK(run_cli("analyze " + dir.file("free.trace") + " --pulse --out-dir " +
                  dir.path.string()) == 0);
    CHECK(fs::exists(dir.file("free_pulse.csv")));
    // no block annotations: alignment analysis is a defined error
    CHECK(run_cli("analyze " + dir.file("free.trace") + " --alignment --out-dir " +
                  dir.path.string()) == 2);
}

TEST_CASE("mass-only run feeds the analytics path") {
    TempDir dir;
    CHECK(run_cli("run --kernels scalar --preset tiny --images 6 --image-tokens 8 "
                  "--mass-only --scripted " + kFixtureDir + "/case_counting_6img.txt " +
                  "--out-dir " + dir.path.string() + " --trace " + dir.file("m.trace")) == 0);
    CHECK(run_cli("analyze " + dir.file("m.trace") + " --kernels scalar --pulse --alignment "
                  "--out-dir " + dir.path.string()) == 0);
    CHECK(fs::exists(dir.file("m_pulse.csv")));
    CHECK(fs::exists(dir.file("m_alignment.csv")));
}
