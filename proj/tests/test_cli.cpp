#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "segdt/dit.hpp"

using namespace segdt;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out; // stdout and stderr interleaved
};

fs::path sandbox(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "segdt_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

CliResult run_cli(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    fs::path capture = fs::temp_directory_path() / "segdt_cli_tests" /
                       ("capture_" + std::to_string(counter++) + ".txt");
    fs::create_directories(capture.parent_path());
    std::string cmd = (env.empty() ? "" : env + " ") + std::string("\"") + SEGDT_CLI_PATH +
                      "\" " + args + " > \"" + capture.string() + "\" 2>&1";
    int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(capture);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool same_files(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// tiny dataset: 8 pairs, 32x32, split 4/2/2
fs::path make_dataset(const fs::path& dir, int seed = 3) {
    fs::path data = dir / "data";
    auto r = run_cli("gen-data --out " + q(data) + " --count 8 --grid 32 --seed " +
                     std::to_string(seed) + " --val-frac 0.25 --test-frac 0.25");
    REQUIRE(r.code == 0);
    return data;
}

const std::string kDeskTrain =
    " --image-size 32 --hidden 8 --depth 2 --heads 2 --time-freq 16"
    " --epochs 2 --batch 4 --lr-drop-epoch 1";

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

} // namespace

TEST_CASE("unknown or missing subcommand exits 1 with usage text") {
    auto bad = run_cli("frobnicate");
    CHECK(bad.code == 1);
    CHECK(bad.out.find("gen-data") != std::string::npos);
    CHECK(bad.out.find("bench-steps") != std::string::npos);

    auto none = run_cli("");
    CHECK(none.code == 1);
    CHECK(none.out.find("train") != std::string::npos);
}

TEST_CASE("count-params default config lands in the published band") {
    auto r = run_cli("count-params");
    REQUIRE(r.code == 0);
    const std::size_t n = std::stoull(r.out);
    CHECK(n >= 8960000);
    CHECK(n <= 10940000);
    CHECK(n == count_params(DiTConfig{}));
}

TEST_CASE("config file overrides defaults and flags override the file") {
    auto dir = sandbox("precedence");
    std::ofstream(dir / "cfg.txt") << "hidden = 16\nheads = 2\ndepth = 3\n# comment\n";

    DiTConfig file_cfg;
    file_cfg.latent_h = file_cfg.latent_w = 4;
    file_cfg.time_freq = 16;
    file_cfg.hidden = 16;
    file_cfg.heads = 2;
    file_cfg.depth = 3;
    DiTConfig flag_cfg = file_cfg;
    flag_cfg.hidden = 8;

    const std::string common = " --image-size 32 --time-freq 16";
    auto from_file = run_cli("count-params --config " + q(dir / "cfg.txt") + common);
    REQUIRE(from_file.code == 0);
    CHECK(std::stoull(from_file.out) == count_params(file_cfg));

    auto from_flag =
        run_cli("count-params --config " + q(dir / "cfg.txt") + common + " --hidden 8");
    REQUIRE(from_flag.code == 0);
    CHECK(std::stoull(from_flag.out) == count_params(flag_cfg));

    std::ofstream(dir / "bad.txt") << "no-such-key = 1\n";
    CHECK(run_cli("count-params --config " + q(dir / "bad.txt")).code == 1);
    std::ofstream(dir / "mangled.txt") << "hidden\n";
    CHECK(run_cli("count-params --config " + q(dir / "mangled.txt")).code == 1);
}

TEST_CASE("SEGDT_SEED fills the seed default but loses to config and flags") {
    auto dir = sandbox("env_seed");
    auto gen = [&](const std::string& name, const std::string& extra,
                   const std::string& env) {
        fs::path out = dir / name;
        auto r = run_cli("gen-data --out " + q(out) + " --count 4 --grid 16" + extra, env);
        REQUIRE(r.code == 0);
        return out;
    };

    auto from_env = gen("env", "", "SEGDT_SEED=3");
    auto from_flag = gen("flag", " --seed 3", "");
    CHECK(same_files(from_env / "manifest.csv", from_flag / "manifest.csv"));
    CHECK(same_files(from_env / "images" / "synth_00000.png",
                     from_flag / "images" / "synth_00000.png"));

    auto flag_wins = gen("flag_wins", " --seed 4", "SEGDT_SEED=3");
    CHECK_FALSE(same_files(from_env / "images" / "synth_00000.png",
                           flag_wins / "images" / "synth_00000.png"));

    std::ofstream(dir / "cfg.txt") << "seed = 4\n";
    auto config_wins = gen("config_wins", " --config " + q(dir / "cfg.txt"), "SEGDT_SEED=3");
    CHECK(same_files(config_wins / "images" / "synth_00000.png",
                     flag_wins / "images" / "synth_00000.png"));
}

TEST_CASE("train is bit-reproducible for a fixed seed") {
    auto dir = sandbox("train_repro");
    auto data = make_dataset(dir);
    auto train = [&](const std::string& name, int seed) {
        fs::path out = dir / name;
        auto r = run_cli("train --data " + q(data) + " --out " + q(out) + kDeskTrain +
                         " --seed " + std::to_string(seed));
        REQUIRE(r.code == 0);
        return out;
    };

    auto a = train("a", 11);
    auto b = train("b", 11);
    CHECK(same_files(a / "loss.csv", b / "loss.csv"));
    CHECK(same_files(a / "model.ckpt", b / "model.ckpt"));

    auto c = train("c", 12);
    CHECK_FALSE(same_files(a / "loss.csv", c / "loss.csv"));
}

TEST_CASE("infer twice with the same seed writes identical mask files") {
    auto dir = sandbox("infer_repro");
    auto data = make_dataset(dir);
    auto r = run_cli("train --data " + q(data) + " --out " + q(dir / "run") + kDeskTrain +
                     " --seed 5");
    REQUIRE(r.code == 0);

    auto infer = [&](const std::string& name) {
        fs::path out = dir / name;
        auto res = run_cli("infer --data " + q(data) + " --checkpoint " +
                           q(dir / "run" / "model.ckpt") + " --out " + q(out) +
                           " --split test --steps 5 --seed 21");
        REQUIRE(res.code == 0);
        return out;
    };
    auto m1 = infer("m1");
    auto m2 = infer("m2");

    std::size_t seen = 0;
    for (const auto& entry : fs::directory_iterator(m1 / "masks")) {
        ++seen;
        CHECK(same_files(entry.path(), m2 / "masks" / entry.path().filename()));
    }
    CHECK(seen == 2); // test split of the 8-pair dataset
    CHECK(fs::exists(m1 / "overlays"));
}

TEST_CASE("exit codes separate usage, data, and numeric failures") {
    auto dir = sandbox("exit_codes");
    auto data = make_dataset(dir);

    CHECK(run_cli("train").code == 1); // missing required flags
    CHECK(run_cli("infer --data " + q(data) + " --checkpoint " + q(dir / "nope.ckpt") +
                  " --out " + q(dir / "x1"))
              .code == 2);
    auto r = run_cli("train --data " + q(data) + " --out " + q(dir / "x2") + kDeskTrain +
                     " --seed 5 --lr 1e30");
    CHECK(r.code == 3);
    CHECK(r.out.find("numeric error") != std::string::npos);

    // threshold outside (0,1) is a data error, not usage
    auto t = run_cli("train --data " + q(data) + " --out " + q(dir / "x3") + kDeskTrain +
                     " --seed 5");
    REQUIRE(t.code == 0);
    CHECK(run_cli("infer --data " + q(data) + " --checkpoint " +
                  q(dir / "x3" / "model.ckpt") + " --out " + q(dir / "x4") +
                  " --threshold 1.5")
              .code == 2);
}

TEST_CASE("eval scores copied ground truth at dice 1") {
    auto dir = sandbox("eval_perfect");
    auto data = make_dataset(dir);
    fs::create_directories(dir / "preds");
    for (const auto& entry : fs::directory_iterator(data / "masks")) {
        auto stem = entry.path().filename().string(); // synth_XXXXX_mask.png
        auto id = stem.substr(0, stem.find("_mask"));
        fs::copy_file(entry.path(), dir / "preds" / (id + "_pred.png"));
    }
    auto r = run_cli("eval --data " + q(data) + " --pred " + q(dir / "preds") +
                     " --split test --out " + q(dir / "scores"));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("dice   1.0000") != std::string::npos);
    CHECK(fs::exists(dir / "scores" / "metrics.csv"));
}

TEST_CASE("sweep-threshold records the table and the argmax") {
    auto dir = sandbox("sweep");
    auto data = make_dataset(dir);
    auto r = run_cli("train --data " + q(data) + " --out " + q(dir / "run") + kDeskTrain +
                     " --seed 5");
    REQUIRE(r.code == 0);
    auto s = run_cli("sweep-threshold --data " + q(data) + " --checkpoint " +
                     q(dir / "run" / "model.ckpt") + " --out " + q(dir / "sw") +
                     " --split val --steps 5 --seed 2");
    REQUIRE(s.code == 0);

    auto csv = slurp(dir / "sw" / "sweep.csv");
    CHECK(count_lines(csv) == 10); // header + 9 grid rows
    CHECK(csv.rfind("threshold,mean_dice\n", 0) == 0);

    double best = std::stod(slurp(dir / "sw" / "best_threshold.txt"));
    bool on_grid = false;
    for (int i = 0; i <= 8; ++i)
        if (std::abs(best - (0.10 + 0.05 * i)) < 1e-9) on_grid = true;
    CHECK(on_grid);
}

TEST_CASE("bench-steps emits the seven-step table") {
    auto dir = sandbox("bench");
    auto data = make_dataset(dir);
    auto r = run_cli("train --data " + q(data) + " --out " + q(dir / "run") + kDeskTrain +
                     " --seed 5");
    REQUIRE(r.code == 0);
    auto b = run_cli("bench-steps --data " + q(data) + " --checkpoint " +
                     q(dir / "run" / "model.ckpt") + " --out " + q(dir / "bn") +
                     " --split test --seed 2");
    REQUIRE(b.code == 0);

    std::istringstream csv(slurp(dir / "bn" / "bench.csv"));
    std::string line;
    REQUIRE(std::getline(csv, line));
    CHECK(line == "steps,mean_dice,wall_time_s");
    const int want[] = {1, 2, 5, 10, 15, 25, 50};
    for (int T : want) {
        REQUIRE(std::getline(csv, line));
        std::istringstream row(line);
        std::string steps, dice, wall;
        REQUIRE(std::getline(row, steps, ','));
        REQUIRE(std::getline(row, dice, ','));
        REQUIRE(std::getline(row, wall, ','));
        CHECK(std::stoi(steps) == T);
        CHECK(std::stod(dice) >= 0.0);
        CHECK(std::stod(dice) <= 1.0);
        CHECK(std::stod(wall) >= 0.0);
    }
    CHECK_FALSE(std::getline(csv, line));
}
