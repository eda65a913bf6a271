#include <doctest.h>

#include <sstream>

#include "mmreg/cli.hpp"
#include "mmreg/evalstats.hpp"
#include "mmreg/pipeline.hpp"
#include "mmreg/record.hpp"
#include "support.hpp"

using namespace mmreg;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string read_text(const fs::path& p) {
    const auto b = testing::read_bytes(p);
    return {b.begin(), b.end()};
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::size_t n = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const fs::path other = b / fs::relative(e.path(), a);
        if (!fs::exists(other) || testing::read_bytes(e.path()) != testing::read_bytes(other)) return false;
        ++n;
    }
    return n > 0;
}

} // namespace

TEST_CASE("usage errors") {
    const Run empty = run({});
    CHECK(empty.code == cli::kExitUsage);
    CHECK(empty.err.find("synth") != std::string::npos);
    CHECK(run({"frobnicate"}).code == cli::kExitUsage);
    CHECK(run({"synth", "--n", "2"}).code == cli::kExitUsage);
    CHECK(run({"synth", "--n", "2", "--out", "x", "--bogus"}).code == cli::kExitUsage);
    CHECK(run({"synth", "--n", "2", "--out", "x", "--size", "12by4"}).code == cli::kExitUsage);
    CHECK(run({"synth", "--n", "2", "--out", "x", "--levels", "1:2"}).code == cli::kExitUsage);
}

TEST_CASE("--help exits 0 for every subcommand") {
    const Run top = run({"--help"});
    CHECK(top.code == cli::kExitOk);
    for (const char* sub : {"synth", "augment", "train", "register", "evaluate", "report"}) {
        const Run r = run({sub, "--help"});
        CHECK(r.code == cli::kExitOk);
        CHECK(r.out.find("--") != std::string::npos);
    }
}

TEST_CASE("data errors exit 2") {
    testing::TempDir dir("clierr");
    CHECK(run({"evaluate", "--pairs", (dir / "nope").string(), "--fields", (dir / "f").string(), "--out",
               (dir / "r.csv").string()})
              .code == cli::kExitData);
    CHECK(run({"report", "--in", (dir / "missing.json").string(), "--violin", (dir / "v.csv").string()}).code ==
          cli::kExitData);
}

TEST_CASE("synth is byte-deterministic") {
    testing::TempDir dir("synth");
    const std::vector<std::string> base{"synth", "--n", "2", "--size", "48x40", "--seed", "7", "--out"};
    auto a = base, b = base;
    a.push_back((dir / "a").string());
    b.push_back((dir / "b").string());
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    CHECK(same_tree(dir / "a", dir / "b"));
    const auto records = read_dataset(dir / "a");
    REQUIRE(records.size() == 2);
    CHECK(records[0].fixed.width() == 48);
}

TEST_CASE("synth, augment, register, evaluate, report workflow") {
    testing::TempDir dir("flow");
    const std::string data = (dir / "data").string(), aug = (dir / "aug").string();
    REQUIRE(run({"synth", "--n", "3", "--size", "32x32", "--seed", "1", "--out", data}).code == 0);
    REQUIRE(run({"augment", "--in", data, "--per-pair", "2", "--mode", "supervised", "--out", aug, "--seed", "2"})
                .code == 0);
    const auto augmented = read_dataset(aug);
    REQUIRE(augmented.size() == 6);
    CHECK(augmented[0].label);

    // Zero-initialized model predicts zero fields, so before and after agree.
    save_checkpoint(init_params<float>(0), nullptr, dir / "zero.netp");
    const std::string fields = (dir / "fields").string();
    REQUIRE(run({"register", "--model", (dir / "zero.netp").string(), "--pairs", aug, "--out-dir", fields}).code == 0);
    CHECK(load_ddf(dir / "fields" / (augmented[0].id + ".ddf")).max_abs() == 0.0);

    const std::string csv = (dir / "r.csv").string(), json = (dir / "r.json").string();
    REQUIRE(run({"evaluate", "--pairs", aug, "--fields", fields, "--out", csv, "--json", json}).code == 0);
    const EvalReport rep = read_report_json(json);
    REQUIRE(rep.rows.size() == 6);
    for (const auto& row : rep.rows) {
        CHECK(row.dice_before == row.dice_after);
        CHECK(row.mi_before == row.mi_after);
    }
    CHECK(read_text(csv).find("# tests") != std::string::npos);

    REQUIRE(run({"report", "--in", json, "--violin", (dir / "v.csv").string()}).code == 0);
    CHECK(read_text(dir / "v.csv").rfind("dice_before", 0) == 0);
}

TEST_CASE("register a single pair") {
    testing::TempDir dir("single");
    GrayImage f(32, 32), m(32, 32);
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
            const double r = std::hypot(static_cast<double>(x) - 15.0, static_cast<double>(y) - 16.0);
            f(x, y) = r < 8 ? 0.8 : 0.1;
            m(x, y) = std::hypot(static_cast<double>(x) - 17.0, static_cast<double>(y) - 16.0) < 8 ? 0.3 : 0.9;
        }
    save_pgm(f, dir / "f.pgm");
    save_pgm(m, dir / "m.pgm");
    save_train_config([] {
        TrainConfig c;
        c.direct_iterations = {20, 20};
        return c;
    }(), dir / "c.json");
    const Run r = run({"register", "--direct", "--config", (dir / "c.json").string(), "--fixed", (dir / "f.pgm").string(),
                       "--moving", (dir / "m.pgm").string(), "--out", (dir / "phi.ddf").string(), "--warped",
                       (dir / "w.pgm").string()});
    REQUIRE(r.code == 0);
    const DisplacementField phi = load_ddf(dir / "phi.ddf");
    CHECK(phi.width() == 32);
    CHECK(load_pgm(dir / "w.pgm").width() == 32);

    CHECK(run({"register", "--fixed", (dir / "f.pgm").string(), "--moving", (dir / "m.pgm").string(), "--out",
               (dir / "x.ddf").string()})
              .code == cli::kExitUsage);
}

TEST_CASE("train writes a checkpoint and log") {
    testing::TempDir dir("train");
    const std::string data = (dir / "data").string(), aug = (dir / "aug").string();
    REQUIRE(run({"synth", "--n", "4", "--size", "32x32", "--seed", "3", "--out", data}).code == 0);
    REQUIRE(run({"augment", "--in", data, "--per-pair", "2", "--out", aug, "--seed", "4"}).code == 0);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 1;
    cfg.batch_size = 2;
    cfg.split = {4, 2, 2};
    cfg.timing = false;
    save_train_config(cfg, dir / "t.json");
    const std::vector<std::string> args{"train", "--config", (dir / "t.json").string(), "--data", aug, "--out",
                                        (dir / "m.netp").string(), "--log", (dir / "log.csv").string()};
    REQUIRE(run(args).code == 0);
    const Checkpoint ck = load_checkpoint(dir / "m.netp");
    CHECK(ck.adam);
    CHECK(read_train_log_csv(dir / "log.csv").epochs.size() == 3);
    const auto first = testing::read_bytes(dir / "m.netp");
    REQUIRE(run(args).code == 0);
    CHECK(testing::read_bytes(dir / "m.netp") == first);
}
