#include "imitate/cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "imitate/dataset.hpp"
#include "imitate/diagnostics.hpp"
#include "imitate/errors.hpp"
#include "imitate/imitation.hpp"
#include "imitate/nn.hpp"
#include "imitate/trainer.hpp"

namespace imitate {

namespace fs = std::filesystem;

namespace {

class UsageError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Applies `key=value` lines from a flat config file to options of `cmd`
/// that were not given on the command line. Blank lines and '#' comments
/// are ignored.
void apply_config_file(CLI::App& cmd, const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
            value = value.substr(1, value.size() - 2);
        }
        CLI::Option* opt = cmd.get_option_no_throw("--" + key);
        if (!opt || key == "config") {
            throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        if (opt->count() == 0) {
            opt->add_result(value);
            opt->run_callback();
        }
    }
}

std::uint64_t resolve_seed(const CLI::Option* seed_opt, std::uint64_t flag_value) {
    if (seed_opt->count() > 0) return flag_value;
    if (const char* env = std::getenv("IMITATE_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0') throw UsageError("IMITATE_SEED must be an unsigned integer");
        return v;
    }
    return flag_value;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string("missing required flag ") + flag);
}

void write_run_manifest(const CLI::App& cmd, const fs::path& dir, std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream out(dir / ("run_manifest_" + cmd.get_name() + ".txt"), std::ios::trunc);
    if (!out) throw IoError("cannot write run manifest in " + dir.string());
    out << "# imitate " << cmd.get_name() << " effective configuration\n";
    out << "effective-seed=" << seed << "\n";
    out << cmd.config_to_str(true, false);
}

fs::path manifest_path(const std::string& data) {
    const fs::path p(data);
    return fs::is_directory(p) ? p / "manifest.json" : p;
}

std::vector<RobotId> parse_robot_list(const std::string& text) {
    std::vector<RobotId> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(parse_robot(item));
    }
    if (out.empty()) throw UsageError("--robots lists no robots");
    return out;
}

struct TrainFlags {
    TrainConfig cfg;
    CLI::Option* seed_opt = nullptr;
    std::string pooling{pooling_name(TrainConfig{}.arch.pooling)};
};

void add_loss_flags(CLI::App& cmd, TrainConfig& cfg) {
    cmd.add_option("--margin", cfg.margin, "Triplet margin");
    cmd.add_option("--tcn-weight", cfg.tcn_weight, "Weight of the triplet term in the total loss");
    cmd.add_option("--positive-window", cfg.sampler.positive_window, "Max frame offset of positives");
    cmd.add_option("--negative-margin", cfg.sampler.negative_margin, "Min frame offset of negatives");
    cmd.add_option("--eval-triplets", cfg.eval_triplets_per_episode, "Validation triplets per episode");
    cmd.add_option("--chunk-episodes", cfg.chunk_episodes, "Episodes resident at once");
    cmd.add_option("--threads", cfg.threads, "OpenMP threads");
}

int cmd_gen(CLI::App& cmd, CorpusOptions& opts, const std::string& out, const std::string& robots,
            const CLI::Option* seed_opt) {
    require(out, "--out");
    opts.robots = parse_robot_list(robots);
    opts.seed = resolve_seed(seed_opt, opts.seed);
    const DatasetManifest m = generate_corpus(opts, out);
    write_run_manifest(cmd, out, opts.seed);
    std::cout << "wrote " << m.episodes.size() << " episodes (" << m.split(Split::Train).size() << " train, "
              << m.split(Split::Val).size() << " val) to " << out << "\n";
    return kExitOk;
}

int cmd_train(CLI::App& cmd, TrainFlags& flags, const std::string& data, const std::string& out) {
    require(data, "--data");
    require(out, "--out");
    TrainConfig& cfg = flags.cfg;
    cfg.seed = resolve_seed(flags.seed_opt, cfg.seed);
    cfg.arch.pooling = parse_pooling(flags.pooling);
    const DatasetManifest manifest = read_manifest(manifest_path(data));
    write_run_manifest(cmd, out, cfg.seed);

    const TrainResult result = train(manifest, cfg, [](const EpochRow& r) {
        std::printf("epoch %4d  train %.6g (tcn %.6g, reg %.6g)  val %.6g (tcn %.6g, reg %.6g)\n", r.epoch,
                    r.train_total, r.train_tcn, r.train_reg, r.val_total, r.val_tcn, r.val_reg);
        std::fflush(stdout);
    });
    const fs::path dir(out);
    save_params(result.best, dir / "best.ckpt");
    save_params(result.last, dir / "final.ckpt");
    write_log_csv(result.log, dir / "train_log.csv");
    emit_plot(result.log, dir / "loss_curves.svg");
    std::printf("best epoch %d of %zu%s\n", result.log.best_epoch, result.log.rows.size(),
                result.stopped_early ? " (early stop)" : "");
    return kExitOk;
}

int cmd_eval(CLI::App& cmd, TrainFlags& flags, const std::string& data, const std::string& checkpoint,
             const std::string& split_name, const std::string& out) {
    require(data, "--data");
    require(checkpoint, "--checkpoint");
    if (split_name != "val" && split_name != "train") throw UsageError("--split must be val or train");
    const NetworkParams params = load_params(checkpoint);
    const DatasetManifest manifest = read_manifest(manifest_path(data));
    const LossBreakdown b =
        evaluate(params, manifest, split_name == "val" ? Split::Val : Split::Train, flags.cfg);
    write_run_manifest(cmd, out.empty() ? fs::path(checkpoint).parent_path() : fs::path(out), flags.cfg.seed);
    std::printf("tcn=%.9g regression=%.9g total=%.9g\n", b.tcn, b.regression, b.total);
    return kExitOk;
}

int cmd_diag(CLI::App& cmd, const std::string& checkpoint, const std::vector<std::string>& episodes,
             const std::string& mode, const std::string& out, int threads) {
    require(checkpoint, "--checkpoint");
    require(out, "--out");
    if (episodes.empty()) throw UsageError("missing required flag --episode");
    const NetworkParams params = load_params(checkpoint);
    std::vector<EmbeddingTrack> tracks;
    for (const std::string& e : episodes) tracks.push_back(embed_video(params, read_episode(e), 32, threads));
    const fs::path dir(out);
    write_run_manifest(cmd, dir, 0);

    if (mode == "pca") {
        const PcaResult pca = pca3(tracks.front());
        emit_plot(pca, dir / "pca.svg");
        write_matrix_csv(pca.projected, dir / "pca.csv");
        std::printf("explained variance %.6f %.6f %.6f\n", pca.explained_ratio[0], pca.explained_ratio[1],
                    pca.explained_ratio[2]);
    } else if (mode == "cosine") {
        const Matrix sim = cosine_similarity_matrix(tracks.front(), tracks.back());
        emit_plot(sim, dir / "cosine.svg");
        write_matrix_csv(sim, dir / "cosine.csv");
        std::printf("similarity matrix %zux%zu\n", sim.rows, sim.cols);
    } else if (mode == "align") {
        if (tracks.size() != 2) throw UsageError("--mode align needs exactly two --episode values");
        std::printf("alignment error %.9g frames\n", alignment_error(tracks[0], tracks[1]));
    } else {
        throw UsageError("--mode must be pca, cosine or align");
    }
    return kExitOk;
}

int cmd_imitate(CLI::App& cmd, const std::string& checkpoint, const std::string& source, const std::string& robot,
                const std::string& out, bool ground_truth, int threads) {
    require(source, "--source-episode");
    require(robot, "--target-robot");
    require(out, "--out");
    if (!ground_truth) require(checkpoint, "--checkpoint");
    const ArmModel target = make_arm(parse_robot(robot));
    const Episode ep = read_episode(source);
    const ImitationResult res = ground_truth ? imitate_positions(ep.ee_positions, ep.ee_positions, target)
                                             : imitate(load_params(checkpoint), ep, target, threads);
    const fs::path dir(out);
    write_run_manifest(cmd, dir, 0);
    write_imitation_csv(res, dir / "imitation.csv");
    RenderConfig view;
    if (!ep.frames.empty()) {
        view.height = ep.frames.front().height;
        view.width = ep.frames.front().width;
    }
    write_episode(replayed_episode(target, res, view), dir / "replay.ep");
    std::printf("mean error %.9g over %zu frames, %zu IK failures\n", res.mean_error, res.frame_error.size(),
                res.ik_failures.size());
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Robot imitation from video: data generation, joint TCN/regression training, diagnostics, replay"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    // gen
    CLI::App* gen = app.add_subcommand("gen", "Generate a randomized episode corpus");
    gen->option_defaults()->always_capture_default();
    CorpusOptions corpus;
    std::string gen_out, gen_robots = "panda,sawyer,iiwa,jaco", gen_config;
    gen->add_option("--out", gen_out, "Output directory");
    gen->add_option("--episodes", corpus.episodes, "Number of episodes");
    gen->add_option("--frames", corpus.frames, "Frames per episode");
    gen->add_option("--randomize-every", corpus.randomize_every, "Frames between appearance resampling (0: fixed default appearance)");
    gen->add_option("--robots", gen_robots, "Comma-separated robots, assigned round-robin");
    CLI::Option* gen_seed = gen->add_option("--seed", corpus.seed, "Corpus seed (falls back to IMITATE_SEED)");
    gen->add_option("--val-fraction", corpus.val_fraction, "Fraction of episodes held out for validation");
    gen->add_option("--height", corpus.height, "Image height");
    gen->add_option("--width", corpus.width, "Image width");
    gen->add_option("--threads", corpus.threads, "OpenMP threads");
    gen->add_option("--config", gen_config, "Flat key=value config file");

    // train
    CLI::App* tr = app.add_subcommand("train", "Jointly train the embedding and the regressor");
    tr->option_defaults()->always_capture_default();
    TrainFlags train_flags;
    TrainConfig& tc = train_flags.cfg;
    std::string train_data, train_out, train_config;
    tr->add_option("--data", train_data, "Manifest file or corpus directory");
    tr->add_option("--out", train_out, "Output directory");
    tr->add_option("--max-epochs", tc.max_epochs, "Maximum epochs");
    tr->add_option("--batch-size", tc.batch_size, "Triplets per batch");
    tr->add_option("--batches-per-chunk", tc.batches_per_chunk, "Batches drawn per resident chunk");
    tr->add_option("--lr", tc.lr, "Adam learning rate");
    tr->add_option("--patience", tc.patience, "Epochs without improvement before stopping");
    tr->add_option("--min-delta", tc.min_delta, "Minimum val_total improvement");
    train_flags.seed_opt = tr->add_option("--seed", tc.seed, "Training seed (falls back to IMITATE_SEED)");
    tr->add_option("--pooling", train_flags.pooling, "Encoder pooling: average, softargmax or flatten");
    add_loss_flags(*tr, tc);
    tr->add_option("--config", train_config, "Flat key=value config file");

    // eval
    CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    ev->option_defaults()->always_capture_default();
    TrainFlags eval_flags;
    std::string eval_data, eval_ckpt, eval_split = "val", eval_out, eval_config;
    ev->add_option("--data", eval_data, "Manifest file or corpus directory");
    ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
    ev->add_option("--split", eval_split, "val or train");
    ev->add_option("--out", eval_out, "Directory for the run manifest (default: checkpoint directory)");
    add_loss_flags(*ev, eval_flags.cfg);
    ev->add_option("--config", eval_config, "Flat key=value config file");

    // diag
    CLI::App* dg = app.add_subcommand("diag", "Embedding diagnostics: PCA, cosine similarity, alignment");
    dg->option_defaults()->always_capture_default();
    std::string diag_ckpt, diag_mode = "pca", diag_out, diag_config;
    std::vector<std::string> diag_episodes;
    int diag_threads = 1;
    dg->add_option("--checkpoint", diag_ckpt, "Checkpoint file");
    dg->add_option("--episode", diag_episodes, "Episode file (repeat for two-track modes)");
    dg->add_option("--mode", diag_mode, "pca, cosine or align");
    dg->add_option("--out", diag_out, "Output directory");
    dg->add_option("--threads", diag_threads, "OpenMP threads");
    dg->add_option("--config", diag_config, "Flat key=value config file");

    // imitate
    CLI::App* im = app.add_subcommand("imitate", "Replay predicted end-effector positions on a target robot");
    im->option_defaults()->always_capture_default();
    std::string im_ckpt, im_source, im_robot, im_out, im_config;
    bool im_gt = false;
    int im_threads = 1;
    im->add_option("--checkpoint", im_ckpt, "Checkpoint file");
    im->add_option("--source-episode", im_source, "Episode whose video is imitated");
    im->add_option("--target-robot", im_robot, "panda, sawyer, iiwa or jaco");
    im->add_option("--out", im_out, "Output directory");
    im->add_flag("--use-ground-truth", im_gt, "Replay recorded positions instead of predictions");
    im->add_option("--threads", im_threads, "OpenMP threads");
    im->add_option("--config", im_config, "Flat key=value config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            apply_config_file(*gen, gen_config);
            return cmd_gen(*gen, corpus, gen_out, gen_robots, gen_seed);
        }
        if (tr->parsed()) {
            apply_config_file(*tr, train_config);
            return cmd_train(*tr, train_flags, train_data, train_out);
        }
        if (ev->parsed()) {
            apply_config_file(*ev, eval_config);
            return cmd_eval(*ev, eval_flags, eval_data, eval_ckpt, eval_split, eval_out);
        }
        if (dg->parsed()) {
            apply_config_file(*dg, diag_config);
            return cmd_diag(*dg, diag_ckpt, diag_episodes, diag_mode, diag_out, diag_threads);
        }
        if (im->parsed()) {
            apply_config_file(*im, im_config);
            return cmd_imitate(*im, im_ckpt, im_source, im_robot, im_out, im_gt, im_threads);
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const SamplingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"imitate"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace imitate
