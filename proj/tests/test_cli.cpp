#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "stopcal/common.hpp"
#include "test_util.hpp"

using stopcal::read_file;
using stopcal::test::TempDir;

namespace {

const std::string kBin = STOPCAL_BIN;
const std::string kFixtures = STOPCAL_FIXTURES;

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

RunResult run(const std::string& args, const TempDir& dir, const std::string& stdin_file = "") {
    const std::string out_file = dir.file("cmd_out.txt");
    std::string cmd = kBin + " " + args;
    if (!stdin_file.empty()) cmd += " < " + stdin_file;
    cmd += " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    r.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return r;
}

}  // namespace

TEST_CASE("help exits zero, unknown flags exit two") {
    TempDir dir("cli");
    CHECK(run("--help", dir).exit_code == 0);
    CHECK(run("simulate --definitely-not-a-flag", dir).exit_code == 2);
    CHECK(run("not-a-subcommand", dir).exit_code == 2);
}

TEST_CASE("evaluate without its inputs exits two and names them") {
    TempDir dir("cli");
    const RunResult r = run("evaluate --traces x.jsonl --pca p --probe q", dir);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("--calibration") != std::string::npos);
}

TEST_CASE("segment subcommand round-trips text") {
    TempDir dir("cli");
    stopcal::write_file(dir.file("raw.txt"), "A = 1.\n\nWait, check A.\n\nBut B fails.\n\nDone.");
    const RunResult r =
        run("segment --in " + dir.file("raw.txt") + " --out " + dir.file("steps.json"), dir);
    REQUIRE(r.exit_code == 0);
    const auto steps = nlohmann::json::parse(read_file(dir.file("steps.json")));
    REQUIRE(steps.size() == 3);
    CHECK(steps[0] == "A = 1.\n\nWait, check A.");
    CHECK(steps[1] == "But B fails.");
    CHECK(steps[2] == "Done.");
}

TEST_CASE("simulate is deterministic under a fixed seed") {
    TempDir dir("cli");
    const std::string common = "simulate --config " + kFixtures + "/sim_cli.json --out ";
    REQUIRE(run(common + dir.file("a.jsonl"), dir).exit_code == 0);
    REQUIRE(run(common + dir.file("b.jsonl"), dir).exit_code == 0);
    CHECK(read_file(dir.file("a.jsonl")) == read_file(dir.file("b.jsonl")));
    CHECK(read_file(dir.file("a.jsonl.bin")) == read_file(dir.file("b.jsonl.bin")));
    CHECK(read_file(dir.file("a.jsonl.truth.json")) == read_file(dir.file("b.jsonl.truth.json")));

    const RunResult other = run(common + dir.file("c.jsonl") + " --seed 999", dir);
    REQUIRE(other.exit_code == 0);
    CHECK(read_file(dir.file("a.jsonl.bin")) != read_file(dir.file("c.jsonl.bin")));
}

TEST_CASE("pipeline: calibrate matches the committed golden selection") {
    TempDir dir("cli");
    const std::string cfg = kFixtures + "/sim_cli.json";

    REQUIRE(run("simulate --config " + cfg + " --out " + dir.file("train.jsonl"), dir).exit_code == 0);
    REQUIRE(run("simulate --config " + cfg + " --seed 1002 --out " + dir.file("cal.jsonl"), dir)
                .exit_code == 0);
    REQUIRE(run("featurize --in " + dir.file("train.jsonl") + " --dim 256 --out " + dir.file("pca.tpca"),
                dir)
                .exit_code == 0);
    REQUIRE(run("train-probe --kind consistent --train " + dir.file("train.jsonl") + " --pca " +
                    dir.file("pca.tpca") + " --epochs 150 --lr 0.5 --out " + dir.file("probe.json"),
                dir)
                .exit_code == 0);
    REQUIRE(run("calibrate --traces " + dir.file("cal.jsonl") + " --pca " + dir.file("pca.tpca") +
                    " --probe " + dir.file("probe.json") +
                    " --delta 0.1 --epsilon 0.1 --loss hard_indicator --out " + dir.file("calib.json"),
                dir)
                .exit_code == 0);

    const auto got = nlohmann::json::parse(read_file(dir.file("calib.json")));
    const auto want = nlohmann::json::parse(read_file(kFixtures + "/golden_calibration.json"));
    CHECK(got["selected_lambda"] == want["selected_lambda"]);
    CHECK(got["n"] == want["n"]);
    CHECK(got["p_values"] == want["p_values"]);
    CHECK(!got["probe_hashes"].empty());

    // Same calibration twice is byte-identical (pipeline determinism).
    REQUIRE(run("calibrate --traces " + dir.file("cal.jsonl") + " --pca " + dir.file("pca.tpca") +
                    " --probe " + dir.file("probe.json") +
                    " --delta 0.1 --epsilon 0.1 --loss hard_indicator --out " + dir.file("calib2.json"),
                dir)
                .exit_code == 0);
    CHECK(read_file(dir.file("calib.json")) == read_file(dir.file("calib2.json")));

    // Two-probe mode: leaf + novel calibrates as novel_leaf and hashes both.
    for (const char* kind : {"leaf", "novel"}) {
        REQUIRE(run(std::string("train-probe --kind ") + kind + " --train " + dir.file("train.jsonl") +
                        " --pca " + dir.file("pca.tpca") + " --epochs 80 --lr 0.5 --out " +
                        dir.file(std::string(kind) + ".json"),
                    dir)
                    .exit_code == 0);
    }
    REQUIRE(run("calibrate --traces " + dir.file("cal.jsonl") + " --pca " + dir.file("pca.tpca") +
                    " --probe " + dir.file("leaf.json") + " --probe " + dir.file("novel.json") +
                    " --delta 0.1 --epsilon 0.1 --loss hard_indicator --out " + dir.file("calib_nl.json"),
                dir)
                .exit_code == 0);
    const auto nl = nlohmann::json::parse(read_file(dir.file("calib_nl.json")));
    CHECK(nl["spec"]["mode"] == "novel_leaf");
    CHECK(nl["probe_hashes"].size() == 2);

    // A lone leaf probe cannot score on its own.
    const RunResult lone = run("calibrate --traces " + dir.file("cal.jsonl") + " --pca " +
                                   dir.file("pca.tpca") + " --probe " + dir.file("leaf.json") +
                                   " --delta 0.1 --epsilon 0.1 --out " + dir.file("bad.json"),
                               dir);
    CHECK(lone.exit_code == 1);
    CHECK(lone.output.find("novel_leaf") != std::string::npos);
}

TEST_CASE("evaluate writes deterministic CSV reports") {
    TempDir dir("cli");
    const std::string cfg = kFixtures + "/sim_cli.json";
    REQUIRE(run("simulate --config " + cfg + " --out " + dir.file("train.jsonl"), dir).exit_code == 0);
    REQUIRE(run("simulate --config " + cfg + " --seed 1002 --out " + dir.file("cal.jsonl"), dir)
                .exit_code == 0);
    REQUIRE(run("simulate --config " + cfg + " --seed 1003 --out " + dir.file("test.jsonl"), dir)
                .exit_code == 0);
    REQUIRE(run("featurize --in " + dir.file("train.jsonl") + " --dim 256 --out " + dir.file("pca.tpca"),
                dir)
                .exit_code == 0);
    REQUIRE(run("train-probe --kind consistent --train " + dir.file("train.jsonl") + " --pca " +
                    dir.file("pca.tpca") + " --epochs 150 --lr 0.5 --out " + dir.file("probe.json"),
                dir)
                .exit_code == 0);
    for (const char* eps : {"0.1", "0.5"}) {
        REQUIRE(run("calibrate --traces " + dir.file("cal.jsonl") + " --pca " + dir.file("pca.tpca") +
                        " --probe " + dir.file("probe.json") + " --delta 0.1 --epsilon " + eps +
                        " --loss hard_indicator --out " + dir.file(std::string("calib") + eps + ".json"),
                    dir)
                    .exit_code == 0);
    }
    const std::string eval_args = "evaluate --traces " + dir.file("test.jsonl") + " --pca " +
                                  dir.file("pca.tpca") + " --probe " + dir.file("probe.json") +
                                  " --calibration " + dir.file("calib0.1.json") + " --calibration " +
                                  dir.file("calib0.5.json") + " --budgets 256,512,1024";
    REQUIRE(run(eval_args + " --curve-out " + dir.file("curve1.csv") + " --report-out " +
                    dir.file("report1.csv"),
                dir)
                .exit_code == 0);
    REQUIRE(run(eval_args + " --curve-out " + dir.file("curve2.csv") + " --report-out " +
                    dir.file("report2.csv"),
                dir)
                .exit_code == 0);
    const std::string curve = read_file(dir.file("curve1.csv"));
    CHECK(curve == read_file(dir.file("curve2.csv")));
    CHECK(read_file(dir.file("report1.csv")) == read_file(dir.file("report2.csv")));
    // 3 crop budgets + 2 epsilon rows + header.
    CHECK(std::count(curve.begin(), curve.end(), '\n') == 6);
}

TEST_CASE("monitor protocol emits one decision per step") {
    TempDir dir("cli");
    const std::string cfg = kFixtures + "/sim_cli.json";
    REQUIRE(run("simulate --config " + cfg + " --n-traces 40 --out " + dir.file("train.jsonl"), dir)
                .exit_code == 0);
    REQUIRE(run("featurize --in " + dir.file("train.jsonl") + " --dim 256 --out " + dir.file("pca.tpca"),
                dir)
                .exit_code == 0);
    REQUIRE(run("train-probe --kind consistent --train " + dir.file("train.jsonl") + " --pca " +
                    dir.file("pca.tpca") + " --epochs 60 --lr 0.5 --out " + dir.file("probe.json"),
                dir)
                .exit_code == 0);

    // Dimension comes from the fixture config.
    const auto cfg_json = nlohmann::json::parse(read_file(cfg));
    const std::size_t dim = cfg_json["embed_dim"].get<std::size_t>();

    std::string feed;
    for (int step = 0; step < 3; ++step) {
        feed += "STEP q1 " + std::to_string(dim) + "\n";
        for (std::size_t j = 0; j < dim; ++j) feed += (j % 2 ? "-0.25 " : "0.5 ");
        feed += "\n";
    }
    stopcal::write_file(dir.file("feed.txt"), feed);

    // Threshold 0 stops at the first step.
    RunResult r = run("monitor --pca " + dir.file("pca.tpca") + " --probe " + dir.file("probe.json") +
                          " --lambda 0 --budget 10",
                      dir, dir.file("feed.txt"));
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("DECIDE q1 1 ") != std::string::npos);
    CHECK(r.output.find(" stop") != std::string::npos);

    // A budget of 3 ends the stream with at_budget on the third step.
    r = run("monitor --pca " + dir.file("pca.tpca") + " --probe " + dir.file("probe.json") +
                " --lambda 1.0 --budget 3",
            dir, dir.file("feed.txt"));
    CHECK(r.exit_code == 0);
    CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 3);
    CHECK(r.output.find("DECIDE q1 3 ") != std::string::npos);
    CHECK(r.output.find("at_budget") != std::string::npos);

    // Early close without a terminal decision is still a clean exit.
    r = run("monitor --pca " + dir.file("pca.tpca") + " --probe " + dir.file("probe.json") +
                " --lambda 1.0 --budget 10",
            dir, dir.file("feed.txt"));
    CHECK(r.exit_code == 0);
    CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 3);

    // Garbage input is a protocol error.
    stopcal::write_file(dir.file("bad.txt"), "NOTSTEP q1 4\n");
    r = run("monitor --pca " + dir.file("pca.tpca") + " --probe " + dir.file("probe.json") +
                " --lambda 0.5 --budget 10",
            dir, dir.file("bad.txt"));
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("expected STEP") != std::string::npos);
}

TEST_CASE("coverage subcommand emits the CSV report") {
    TempDir dir("cli");
    const RunResult r = run(
        "coverage --config " + kFixtures + "/sim_cli.json" +
            " --repeats 50 --epsilons 0.2 --delta 0.1 --n-train 40 --n-cal 30 --n-test 40 --epochs 30" +
            " --out " + dir.file("cov.csv"),
        dir);
    REQUIRE(r.exit_code == 0);
    const std::string csv = read_file(dir.file("cov.csv"));
    CHECK(csv.find("epsilon,repeats") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);

    // Too few repeats is a contract violation, not a report.
    const RunResult bad = run("coverage --config " + kFixtures + "/sim_cli.json" + " --repeats 5", dir);
    CHECK(bad.exit_code == 1);
    CHECK(bad.output.find("repeats must be >= 50") != std::string::npos);
}
