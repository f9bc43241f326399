#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include "imitate/cli.hpp"
#include "imitate/dataset.hpp"
#include "imitate/diagnostics.hpp"
#include "imitate/trainer.hpp"
#include "test_support.hpp"

using namespace imitate;
using imitate::testing::read_bytes;
using imitate::testing::scratch_dir;

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

/// Runs the built executable through the shell, capturing stdout.
Run run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + IMITATE_CLI_PATH + " " + args + " 2>/dev/null";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 512> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

double parse_after(const std::string& text, const std::string& key) {
    const auto pos = text.find(key);
    REQUIRE(pos != std::string::npos);
    return std::strtod(text.c_str() + pos + key.size(), nullptr);
}

const fs::path& smoke_corpus() {
    static const fs::path dir = [] {
        const fs::path d = scratch_dir("cli_smoke");
        const Run r = run("gen --out " + q(d / "data") + " --episodes 4 --frames 20 --height 32 --width 32 --seed 3");
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

const std::string kSmokeSampler = " --positive-window 2 --negative-margin 6";

}  // namespace

TEST_CASE("gen with small sizes, determinism and the seed fallback") {
    const fs::path d = scratch_dir("cli_gen");
    CHECK(run("gen --out " + q(d / "a") + " --episodes 4 --frames 10 --height 16 --width 16 --seed 9").code == 0);
    const DatasetManifest m = read_manifest(d / "a" / "manifest.json");
    REQUIRE(m.episodes.size() == 4);
    for (const ManifestEntry& e : m.episodes) {
        CHECK(e.frames == 10);
        CHECK(read_episode(m.resolve(e)).size() == 10);
    }
    CHECK(run("gen --out " + q(d / "b") + " --episodes 4 --frames 10 --height 16 --width 16 --seed 9").code == 0);
    CHECK(run("gen --out " + q(d / "c") + " --episodes 4 --frames 10 --height 16 --width 16", "IMITATE_SEED=9").code == 0);
    for (const char* name : {"manifest.json", "episode_0000.ep", "episode_0003.ep"}) {
        CHECK(read_bytes(d / "a" / name) == read_bytes(d / "b" / name));
        CHECK(read_bytes(d / "a" / name) == read_bytes(d / "c" / name));
    }
    const std::string manifest = read_bytes(d / "a" / "run_manifest_gen.txt");
    CHECK(manifest.find("effective-seed=9") != std::string::npos);
    CHECK(manifest.find("episodes=4") != std::string::npos);

    CHECK(run("gen --out " + q(d / "x") + " --episodes 0").code == 1);
    CHECK(run("gen --out " + q(d / "x") + " --robots ur5").code == 1);
    CHECK(run("gen --episodes 2").code == 1);
    CHECK(run("gen --out " + q(d / "x") + " --seed 1", "IMITATE_SEED=1").code == 0);
    CHECK(run("gen --out " + q(d / "y") + " --episodes 2 --frames 4", "IMITATE_SEED=abc").code == 1);
    CHECK(run("frobnicate").code == 1);
}

TEST_CASE("gen defaults produce the 80-episode corpus") {
    const fs::path d = scratch_dir("cli_gen_default");
    REQUIRE(run("gen --out " + q(d)).code == 0);
    const DatasetManifest m = read_manifest(d / "manifest.json");
    CHECK(m.episodes.size() == 80);
    CHECK(m.split(Split::Train).size() == 64);
    CHECK(m.split(Split::Val).size() == 16);
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(d)) files += entry.path().extension() == ".ep";
    CHECK(files == 80);
    CHECK(fs::file_size(d / "episode_0000.ep") == 1477461u);
}

TEST_CASE("train smoke run, determinism and usage errors") {
    const fs::path& d = smoke_corpus();
    const std::string base = "train --data " + q(d / "data") + " --max-epochs 2 --seed 4" + kSmokeSampler;
    REQUIRE(run(base + " --out " + q(d / "run1")).code == 0);
    REQUIRE(run(base + " --out " + q(d / "run2")).code == 0);
    for (const char* name : {"best.ckpt", "final.ckpt", "train_log.csv", "loss_curves.svg", "run_manifest_train.txt"}) {
        CHECK(fs::exists(d / "run1" / name));
    }
    CHECK(read_bytes(d / "run1" / "train_log.csv") == read_bytes(d / "run2" / "train_log.csv"));
    CHECK(read_log_csv(d / "run1" / "train_log.csv").rows.size() == 2);

    CHECK(run("train --out " + q(d / "nodata")).code == 1);
    CHECK(run("train --data " + q(d / "missing") + " --out " + q(d / "x")).code == 2);
    // Default sampler windows need episodes longer than 48 frames.
    CHECK(run("train --data " + q(d / "data") + " --out " + q(d / "x") + " --max-epochs 1").code == 1);
    CHECK(run("train --data " + q(d / "data") + " --out " + q(d / "x") + " --max-epochs 0").code == 1);
}

TEST_CASE("config file values apply and flags override them") {
    const fs::path& d = smoke_corpus();
    const fs::path cfg = d / "train.cfg";
    std::ofstream(cfg) << "# smoke\nmax-epochs=1\nseed=11\npositive-window=2\nnegative-margin=6\nlr=0.002\n";
    REQUIRE(run("train --config " + q(cfg) + " --data " + q(d / "data") + " --out " + q(d / "cfg1")).code == 0);
    CHECK(read_log_csv(d / "cfg1" / "train_log.csv").rows.size() == 1);
    const std::string m1 = read_bytes(d / "cfg1" / "run_manifest_train.txt");
    CHECK(m1.find("effective-seed=11") != std::string::npos);
    CHECK(m1.find("lr=0.002") != std::string::npos);

    REQUIRE(run("train --config " + q(cfg) + " --max-epochs 2 --data " + q(d / "data") + " --out " + q(d / "cfg2"))
                .code == 0);
    CHECK(read_log_csv(d / "cfg2" / "train_log.csv").rows.size() == 2);
    CHECK(read_bytes(d / "cfg2" / "run_manifest_train.txt").find("max-epochs=2") != std::string::npos);

    std::ofstream(d / "bad.cfg") << "no-such-key=1\n";
    CHECK(run("train --config " + q(d / "bad.cfg") + " --data " + q(d / "data") + " --out " + q(d / "x")).code == 1);
}

TEST_CASE("eval matches the logged best epoch and reports bad inputs") {
    const fs::path& d = smoke_corpus();
    const std::string train_args = "train --data " + q(d / "data") + " --max-epochs 2 --seed 4" + kSmokeSampler;
    REQUIRE(run(train_args + " --out " + q(d / "evalrun")).code == 0);
    const TrainLog log = read_log_csv(d / "evalrun" / "train_log.csv");
    const Run r = run("eval --data " + q(d / "data") + " --checkpoint " + q(d / "evalrun" / "best.ckpt") + kSmokeSampler);
    REQUIRE(r.code == 0);
    CHECK(std::abs(parse_after(r.out, "total=") - log.rows[log.best_epoch].val_total) <= 1e-6);
    CHECK(fs::exists(d / "evalrun" / "run_manifest_eval.txt"));

    const fs::path bad = d / "corrupt.ckpt";
    fs::copy_file(d / "evalrun" / "best.ckpt", bad, fs::copy_options::overwrite_existing);
    fs::resize_file(bad, 40);
    CHECK(run("eval --data " + q(d / "data") + " --checkpoint " + q(bad) + kSmokeSampler).code == 2);

    DatasetManifest m = read_manifest(d / "data" / "manifest.json");
    for (ManifestEntry& e : m.episodes) e.split = Split::Train;
    write_manifest(m, d / "data" / "all_train.json");
    CHECK(run("eval --data " + q(d / "data" / "all_train.json") + " --checkpoint " + q(d / "evalrun" / "best.ckpt") +
              kSmokeSampler)
              .code == 1);
}

TEST_CASE("diag modes write their outputs") {
    const fs::path& d = smoke_corpus();
    REQUIRE(run("train --data " + q(d / "data") + " --max-epochs 1 --seed 4" + kSmokeSampler + " --out " +
                q(d / "diagrun"))
                .code == 0);
    const std::string ckpt = " --checkpoint " + q(d / "diagrun" / "best.ckpt");
    const fs::path ep0 = d / "data" / "episode_0000.ep", ep1 = d / "data" / "episode_0001.ep";

    REQUIRE(run("diag --mode pca --episode " + q(ep0) + ckpt + " --out " + q(d / "pca")).code == 0);
    CHECK(fs::exists(d / "pca" / "pca.svg"));
    const Matrix proj = read_matrix_csv(d / "pca" / "pca.csv");
    CHECK(proj.rows == 20);
    CHECK(proj.cols == 3);

    REQUIRE(run("diag --mode cosine --episode " + q(ep0) + ckpt + " --out " + q(d / "cos")).code == 0);
    const Matrix sim = read_matrix_csv(d / "cos" / "cosine.csv");
    REQUIRE(sim.rows == 20);
    CHECK(sim.cols == 20);
    for (std::size_t i = 0; i < 20; ++i) CHECK(std::abs(sim(i, i) - 1.0) <= 1e-6);
    CHECK(fs::exists(d / "cos" / "cosine.svg"));

    const Run a = run("diag --mode align --episode " + q(ep0) + " --episode " + q(ep1) + ckpt + " --out " + q(d / "al"));
    REQUIRE(a.code == 0);
    const NetworkParams p = load_params(d / "diagrun" / "best.ckpt");
    const double expect = alignment_error(embed_video(p, read_episode(ep0)), embed_video(p, read_episode(ep1)));
    CHECK(parse_after(a.out, "alignment error ") == doctest::Approx(expect).epsilon(1e-8));

    CHECK(run("diag --mode align --episode " + q(ep0) + ckpt + " --out " + q(d / "al")).code == 1);
    CHECK(run("diag --mode nope --episode " + q(ep0) + ckpt + " --out " + q(d / "al")).code == 1);
}

TEST_CASE("imitate oracle path, cross-robot replay and unreachable frames") {
    const fs::path& d = smoke_corpus();
    REQUIRE(run("train --data " + q(d / "data") + " --max-epochs 1 --seed 4" + kSmokeSampler + " --out " +
                q(d / "imrun"))
                .code == 0);
    const fs::path src = d / "data" / "episode_0000.ep";  // Panda
    const Run gt = run("imitate --use-ground-truth --source-episode " + q(src) + " --target-robot panda --out " +
                       q(d / "gt"));
    REQUIRE(gt.code == 0);
    CHECK(parse_after(gt.out, "mean error ") < 1e-5);

    const Run cross = run("imitate --checkpoint " + q(d / "imrun" / "best.ckpt") + " --source-episode " + q(src) +
                          " --target-robot jaco --out " + q(d / "cross"));
    REQUIRE(cross.code == 0);
    const Episode replay = read_episode(d / "cross" / "replay.ep");
    CHECK(replay.robot_id == RobotId::Jaco);
    CHECK(replay.size() == 20);
    CHECK(run("diag --mode pca --episode " + q(d / "cross" / "replay.ep") + " --checkpoint " +
              q(d / "imrun" / "best.ckpt") + " --out " + q(d / "cross_pca"))
              .code == 0);

    // Half the frames sit beyond the Sawyer's 0.8 reach from (0, -0.8).
    Episode far;
    far.robot_id = RobotId::Panda;
    for (int t = 0; t < 6; ++t) {
        far.frames.emplace_back(8, 8);
        far.joint_states.push_back(JointState{{0, 0, 0, 0}});
        far.ee_positions.push_back(t % 2 ? EEPose{0.0, 0.3} : EEPose{0.2, -0.5});
    }
    write_episode(far, d / "far.ep");
    const Run partial = run("imitate --use-ground-truth --source-episode " + q(d / "far.ep") +
                            " --target-robot sawyer --out " + q(d / "far"));
    CHECK(partial.code == 0);
    std::ifstream csv(d / "far" / "imitation.csv");
    std::string line;
    std::getline(csv, line);
    int failed = 0;
    while (std::getline(csv, line)) failed += line.back() == '1';
    CHECK(failed == 3);

    CHECK(run("imitate --source-episode " + q(src) + " --target-robot panda --out " + q(d / "x")).code == 1);
    CHECK(run("imitate --use-ground-truth --source-episode " + q(src) + " --target-robot ur5 --out " + q(d / "x"))
              .code == 1);
}
