#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <utility>

// Drives the real executable end to end; DETPP_CLI is injected by the build.

namespace {

const std::string kCli = DETPP_CLI;

struct RunResult {
    int exit_code = -1;
    std::string output; // stdout and stderr interleaved
};

RunResult run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult result;
    char buf[512];
    while (std::fgets(buf, sizeof(buf), pipe) != nullptr) {
        result.output += buf;
    }
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) : path("/tmp/detpp_cli_" + name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::size_t count_lines(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
    }
    return n;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

// Shared fixture: a small dataset plus a trained single-slot checkpoint.
const TempDir& base_fixture() {
    static TempDir dir("base");
    static bool built = false;
    if (!built) {
        auto gen = run("generate --kind markov_bursts --count 30 --labels 3 --t-max 6 "
                       "--seed 4 --self-prob 0.8 --rate-min 0.5 --rate-max 4 --out-dir " +
                       dir.file("data"));
        REQUIRE(gen.exit_code == 0);
        auto train = run("train --method mae_ce_k --train " + dir.file("data/train.jsonl") +
                         " --val " + dir.file("data/val.jsonl") + " --out " + dir.file("ck.bin") +
                         " --labels 3 --embed 4 --hidden 8 --slots 2 --horizon 2 --epochs 2 "
                         "--batch 8 --lr 0.01 --seed 6");
        REQUIRE(train.exit_code == 0);
        built = true;
    }
    return dir;
}

} // namespace

TEST_CASE("generate summary matches the files and repeats byte-identically") {
    TempDir dir("generate");
    const std::string cmd = "generate --kind markov_bursts --count 30 --labels 3 --t-max 6 "
                            "--seed 9 --out-dir ";
    auto first = run(cmd + dir.file("a"));
    REQUIRE(first.exit_code == 0);

    std::size_t train_n = 0, val_n = 0, test_n = 0;
    REQUIRE(std::sscanf(first.output.c_str(), "train %zu sequences -> %*s val %zu sequences -> %*s test %zu",
                        &train_n, &val_n, &test_n) == 3);
    CHECK(train_n + val_n + test_n == 30);
    CHECK(count_lines(dir.file("a/train.jsonl")) == train_n);
    CHECK(count_lines(dir.file("a/val.jsonl")) == val_n);
    CHECK(count_lines(dir.file("a/test.jsonl")) == test_n);
    CHECK(first.output.find("mean length") != std::string::npos);
    CHECK(first.output.find("label marginals") != std::string::npos);

    auto second = run(cmd + dir.file("b"));
    REQUIRE(second.exit_code == 0);
    // Identical apart from the directory names baked into the path lines.
    const auto stats_part = [](const std::string& s) {
        return s.substr(s.find("mean length"));
    };
    CHECK(stats_part(second.output) == stats_part(first.output));
    CHECK(read_file(dir.file("b/train.jsonl")) == read_file(dir.file("a/train.jsonl")));
    CHECK(read_file(dir.file("b/test.jsonl")) == read_file(dir.file("a/test.jsonl")));

    CHECK(run("generate --kind poisson --count 8 --labels 2 --t-max 5 --mu 1.2 --seed 1 "
              "--out-dir " + dir.file("p")).exit_code == 0);
    CHECK(count_lines(dir.file("p/train.jsonl")) +
          count_lines(dir.file("p/val.jsonl")) +
          count_lines(dir.file("p/test.jsonl")) == 8);
    CHECK(run("generate --kind hawkes --count 8 --labels 2 --t-max 5 --mu 0.8 --alpha 0.6 "
              "--beta 2 --seed 1 --out-dir " + dir.file("h")).exit_code == 0);
}

TEST_CASE("predict and evaluate rerun byte-identically") {
    const TempDir& base = base_fixture();
    TempDir dir("rerun");

    const std::string predict_cmd = "predict --checkpoint " + base.file("ck.bin") + " --data " +
                                    base.file("data/test.jsonl") + " --out ";
    REQUIRE(run(predict_cmd + dir.file("p1.jsonl")).exit_code == 0);
    REQUIRE(run(predict_cmd + dir.file("p2.jsonl")).exit_code == 0);
    const std::string dump = read_file(dir.file("p1.jsonl"));
    CHECK(!dump.empty());
    CHECK(read_file(dir.file("p2.jsonl")) == dump);

    const std::string eval_cmd = "evaluate --predictions " + dir.file("p1.jsonl") + " --data " +
                                 base.file("data/test.jsonl") +
                                 " --labels 3 --horizon 2 --slot-cap 2 --t-map-delta 0.5 "
                                 "--seed 6 --out ";
    REQUIRE(run(eval_cmd + dir.file("r1.json")).exit_code == 0);
    REQUIRE(run(eval_cmd + dir.file("r2.json")).exit_code == 0);
    const std::string report = read_file(dir.file("r1.json"));
    CHECK(read_file(dir.file("r2.json")) == report);
    CHECK(report.find("\"t_map\"") != std::string::npos);
    CHECK(report.find("\"seed\": 6") != std::string::npos);

    // Evaluating without --out prints the same report to stdout.
    auto printed = run("evaluate --predictions " + dir.file("p1.jsonl") + " --data " +
                       base.file("data/test.jsonl") +
                       " --labels 3 --horizon 2 --slot-cap 2 --t-map-delta 0.5 --seed 6");
    CHECK(printed.exit_code == 0);
    CHECK(printed.output == report);
}

TEST_CASE("exit codes separate usage, data and numeric failures") {
    const TempDir& base = base_fixture();
    TempDir dir("errors");

    CHECK(run("").exit_code == 1);
    CHECK(run("--help").exit_code == 0);
    CHECK(run("train --method nope --train x --val y --out z").exit_code == 1);
    CHECK(run("generate --kind unknown --out-dir " + dir.file("g")).exit_code == 1);
    CHECK(run("predict --checkpoint " + dir.file("missing.bin") + " --data " +
              base.file("data/test.jsonl") + " --out " + dir.file("o.jsonl")).exit_code == 2);

    write_file(dir.file("bad.cfg"), "# comment\nbogus = 3\n");
    auto bad_key = run("train --config " + dir.file("bad.cfg") + " --train " +
                       base.file("data/train.jsonl") + " --val " + base.file("data/val.jsonl") +
                       " --out " + dir.file("m.bin"));
    CHECK(bad_key.exit_code == 2);
    CHECK(bad_key.output.find("bad.cfg:2") != std::string::npos);
    CHECK(bad_key.output.find("bogus") != std::string::npos);

    write_file(dir.file("noeq.cfg"), "epochs\n");
    CHECK(run("train --config " + dir.file("noeq.cfg") + " --train " +
              base.file("data/train.jsonl") + " --val " + base.file("data/val.jsonl") +
              " --out " + dir.file("m.bin")).exit_code == 2);

    // Dataset whose labels exceed the checkpoint's alphabet.
    REQUIRE(run("generate --kind markov_bursts --count 12 --labels 5 --t-max 6 --seed 2 "
                "--out-dir " + dir.file("wide")).exit_code == 0);
    auto mismatch = run("predict --checkpoint " + base.file("ck.bin") + " --data " +
                        dir.file("wide/test.jsonl") + " --out " + dir.file("o.jsonl"));
    CHECK(mismatch.exit_code == 2);

    // Predictions for test anchors scored against the val split.
    REQUIRE(run("predict --checkpoint " + base.file("ck.bin") + " --data " +
                base.file("data/test.jsonl") + " --out " + dir.file("p.jsonl")).exit_code == 0);
    auto orphan = run("evaluate --predictions " + dir.file("p.jsonl") + " --data " +
                      base.file("data/val.jsonl") + " --labels 3 --horizon 2");
    CHECK(orphan.exit_code == 2);
    CHECK(orphan.output.find("absent from the dataset") != std::string::npos);
}

TEST_CASE("config file fills in flags and explicit flags win") {
    const TempDir& base = base_fixture();
    TempDir dir("config");

    write_file(dir.file("run.cfg"), "method = mae_ce\nlabels = 3\nembed = 4\nhidden = 8\n"
                                    "slots = 1\nhorizon = 2\nepochs = 3\nlr = 0.01\nseed = 6\n"
                                    "train = " + base.file("data/train.jsonl") + "\n"
                                    "val = " + base.file("data/val.jsonl") + "\n"
                                    "out = " + dir.file("cfg.bin") + "\n");
    auto from_file = run("train --config " + dir.file("run.cfg") + " --epochs 1");
    REQUIRE(from_file.exit_code == 0);
    CHECK(from_file.output.find("trained 1 epochs") != std::string::npos);
    CHECK(std::filesystem::exists(dir.file("cfg.bin")));
    CHECK(std::filesystem::exists(dir.file("cfg.bin.last")));
    CHECK(std::filesystem::exists(dir.file("cfg.bin.log.csv")));
}

TEST_CASE("resumed training lands on the one-shot checkpoint") {
    const TempDir& base = base_fixture();
    TempDir dir("resume");

    const std::string common = " --method mae_ce_k --train " + base.file("data/train.jsonl") +
                               " --val " + base.file("data/val.jsonl") +
                               " --labels 3 --embed 4 --hidden 8 --slots 2 --horizon 2 "
                               "--batch 8 --lr 0.01 --seed 6";
    REQUIRE(run("train" + common + " --epochs 3 --out " + dir.file("oneshot.bin")).exit_code == 0);
    REQUIRE(run("train" + common + " --epochs 2 --out " + dir.file("half.bin")).exit_code == 0);
    REQUIRE(run("train" + common + " --epochs 3 --resume " + dir.file("half.bin.last") +
                " --out " + dir.file("stitched.bin")).exit_code == 0);

    CHECK(read_file(dir.file("stitched.bin")) == read_file(dir.file("oneshot.bin")));
    CHECK(read_file(dir.file("stitched.bin.last")) == read_file(dir.file("oneshot.bin.last")));
}

TEST_CASE("empty dataset gives an empty dump and evaluate rejects it") {
    const TempDir& base = base_fixture();
    TempDir dir("empty");

    write_file(dir.file("none.jsonl"), "");
    auto predict = run("predict --checkpoint " + base.file("ck.bin") + " --data " +
                       dir.file("none.jsonl") + " --out " + dir.file("p.jsonl"));
    CHECK(predict.exit_code == 0);
    CHECK(read_file(dir.file("p.jsonl")).empty());

    CHECK(run("evaluate --predictions " + dir.file("p.jsonl") + " --data " +
              base.file("data/test.jsonl") + " --labels 3 --horizon 2").exit_code == 2);
}
