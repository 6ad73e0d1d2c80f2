// End-to-end exercises of the CLI surface: subcommands, exit codes, JSONL
// timing records. The binary path arrives via GMRA_CLI_BIN (set by ctest).

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gmra/shelf.hpp"
#include "test_util.hpp"

using nlohmann::json;
using testutil::TempDir;

namespace {

std::string cli_path() {
    const char* p = std::getenv("GMRA_CLI_BIN");
    return p ? p : "";
}

int run_cli(const std::string& args, const std::string& out_file) {
    const std::string cmd = cli_path() + " " + args + " > " + out_file + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json first_json_line(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    return json::parse(line);
}

} // namespace

TEST_CASE("cli: ingest/covertree/gmra/transform/validate pipeline", "[cli]") {
    if (cli_path().empty()) {
        WARN("GMRA_CLI_BIN not set; skipping CLI tests");
        return;
    }
    TempDir dir("cli_pipe");
    const std::string data = dir.file("data.shelf");
    const std::string tree = dir.file("tree.ctr");
    const std::string model = dir.file("model.shelf");
    const std::string out = dir.file("out.txt");

    REQUIRE(run_cli("ingest --format synth --synth swiss_roll_like --n 500 --D 4 --d 2 --seed 9"
                    " --shelf-path " + data, out) == 0);
    const json ingest = first_json_line(out);
    CHECK(ingest["n"] == 500);
    CHECK(ingest["D"] == 4);
    CHECK(ingest["dtype"] == "f64");

    REQUIRE(run_cli("covertree build --data " + data + " --out " + tree, out) == 0);
    REQUIRE(run_cli("covertree validate --data " + data + " --tree " + tree, out) == 0);
    CHECK(first_json_line(out)["violations"] == 0);

    REQUIRE(run_cli("gmra build --data " + data + " --tree " + tree + " --backend shelf" +
                    " --shelf-path " + model + " --min-cell-size 20", out) == 0);
    const json build = first_json_line(out);
    CHECK(build["stages"].size() == 4);
    CHECK(double(build["max_rel_error"]) <= 1e-9);

    const std::string csv = dir.file("coeffs.csv");
    REQUIRE(run_cli("transform --shelf-path " + model + " --roundtrip --csv " + csv, out) == 0);
    CHECK(double(first_json_line(out)["max_rel_error"]) <= 1e-9);
    std::ifstream csv_in(csv);
    std::string header;
    std::getline(csv_in, header);
    CHECK(header.starts_with("leaf_j,leaf_k"));

    const std::string recon = dir.file("recon.f64");
    REQUIRE(run_cli("reconstruct --shelf-path " + model + " --out " + recon, out) == 0);
    CHECK(std::filesystem::file_size(recon) == 500 * 4 * 8);

    REQUIRE(run_cli("validate --shelf-path " + model + " --tree " + tree, out) == 0);
    CHECK(first_json_line(out)["clean"] == true);
}

TEST_CASE("cli: bench emits trial and aggregate JSONL records", "[cli]") {
    if (cli_path().empty()) {
        WARN("GMRA_CLI_BIN not set; skipping CLI tests");
        return;
    }
    TempDir dir("cli_bench");
    const std::string tree = dir.file("tree.ctr");
    const std::string timings = dir.file("timings.jsonl");
    const std::string out = dir.file("out.txt");

    REQUIRE(run_cli("bench --synth affine_subspace --n 400 --D 8 --d 2 --seed 5"
                    " --tree " + tree + " --build-covertree --backend both --trials 3"
                    " --shelf-path " + dir.file("bench.shelf") +
                    " --min-cell-size 20 --out " + timings, out) == 0);

    std::ifstream in(timings);
    std::string line;
    int trials = 0, aggregates = 0;
    while (std::getline(in, line)) {
        const json rec = json::parse(line);
        const auto& stages = rec["stages"];
        REQUIRE(stages.size() == 4);
        for (const char* key :
             {"load_s", "covertree_deserialize_s", "cells_s", "wavelets_s"}) {
            REQUIRE(stages.contains(key));
            if (rec["type"] == "trial") {
                CHECK(double(stages[key]) >= 0.0);
            } else {
                CHECK(double(stages[key]["mean"]) >= 0.0);
                CHECK(double(stages[key]["stddev"]) >= 0.0);
            }
        }
        if (rec["type"] == "trial") ++trials;
        if (rec["type"] == "aggregate") ++aggregates;
    }
    CHECK(trials == 6); // 3 per backend
    CHECK(aggregates == 2);
}

TEST_CASE("cli: exit codes for missing inputs and usage errors", "[cli]") {
    if (cli_path().empty()) {
        WARN("GMRA_CLI_BIN not set; skipping CLI tests");
        return;
    }
    TempDir dir("cli_exit");
    const std::string out = dir.file("out.txt");
    CHECK(run_cli("validate --shelf-path " + dir.file("nope.shelf"), out) == 2);
    CHECK(run_cli("covertree validate --data " + dir.file("nope.shelf") + " --tree x", out) == 2);
    CHECK(run_cli("definitely-not-a-subcommand", out) == 2);
    CHECK(run_cli("gmra build --synth uniform_cube --n 50 --D 3 --seed 1 --tree " +
                      dir.file("absent.ctr") + " --backend volatile --shelf-path " +
                      dir.file("w.vol"),
                  out) == 2); // cover tree missing without --build-covertree
}

TEST_CASE("cli: GMRA_SHELF_DIR resolves bare shelf names", "[cli]") {
    if (cli_path().empty()) {
        WARN("GMRA_CLI_BIN not set; skipping CLI tests");
        return;
    }
    TempDir dir("cli_env");
    const std::string out = dir.file("out.txt");
    const std::string cmd = "GMRA_SHELF_DIR=" + dir.path.string() + " " + cli_path() +
                            " ingest --format synth --synth uniform_cube --n 64 --D 3 --seed 2" +
                            " --shelf-path bare.shelf > " + out + " 2>/dev/null";
    REQUIRE(std::system(cmd.c_str()) == 0);
    CHECK(std::filesystem::exists(dir.path / "bare.shelf"));
}
