#include "imitate/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "imitate/errors.hpp"

namespace imitate {

namespace {

std::vector<TripletExample> make_examples(const std::vector<Episode>& episodes, const std::vector<Triplet>& triplets) {
    std::vector<TripletExample> out;
    out.reserve(triplets.size());
    for (const Triplet& t : triplets) {
        const Episode& ep = episodes[t.anchor.episode];
        out.push_back({&ep.frames[t.anchor.frame], &ep.frames[t.positive.frame], &ep.frames[t.negative.frame],
                       ep.ee_positions[t.anchor.frame], ep.ee_positions[t.positive.frame],
                       ep.ee_positions[t.negative.frame]});
    }
    return out;
}

LossOptions loss_options(const TrainConfig& cfg) { return {cfg.margin, cfg.tcn_weight, cfg.threads}; }

}  // namespace

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (batches_per_chunk < 1) throw ConfigError("batches_per_chunk must be at least 1");
    if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be non-negative");
    if (chunk_episodes < 1) throw ConfigError("chunk_episodes must be at least 1");
    if (eval_triplets_per_episode < 1) throw ConfigError("eval triplets per episode must be at least 1");
    if (sampler.positive_window <= 0 || sampler.negative_margin <= sampler.positive_window) {
        throw ConfigError("sampler needs 0 < positive_window < negative_margin");
    }
}

LossBreakdown LossSums::mean(double tcn_weight) const {
    LossBreakdown b;
    if (count == 0) return b;
    b.tcn = tcn / static_cast<double>(count);
    b.regression = regression / static_cast<double>(count);
    b.total = total_loss(b.tcn, b.regression, tcn_weight);
    return b;
}

LossSums evaluation_sums(const NetworkParams& params, std::span<const Episode> episodes,
                         std::span<const std::uint64_t> seeds, const TrainConfig& cfg) {
    LossSums sums;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        Rng rng(mix_seed(kEvalSeed, seeds[i]));
        const std::size_t len = episodes[i].size();
        const std::vector<Triplet> triplets =
            sample_triplets(std::span<const std::size_t>(&len, 1), cfg.sampler, cfg.eval_triplets_per_episode, rng);
        std::vector<TripletExample> examples;
        examples.reserve(triplets.size());
        const Episode& ep = episodes[i];
        for (const Triplet& t : triplets) {
            examples.push_back({&ep.frames[t.anchor.frame], &ep.frames[t.positive.frame],
                                &ep.frames[t.negative.frame], ep.ee_positions[t.anchor.frame],
                                ep.ee_positions[t.positive.frame], ep.ee_positions[t.negative.frame]});
        }
        for (const TripletTerms& term : triplet_terms(params, examples, loss_options(cfg))) {
            sums.tcn += term.tcn;
            sums.regression += term.regression;
            ++sums.count;
        }
    }
    return sums;
}

LossBreakdown evaluate(const NetworkParams& params, const DatasetManifest& manifest, Split split,
                       const TrainConfig& cfg) {
    const std::vector<ManifestEntry> entries = manifest.split(split);
    if (entries.empty()) throw ConfigError(std::string(split == Split::Val ? "val" : "train") + " split is empty");
    ChunkedEpisodeReader reader = chunked_iter(manifest, split, cfg.chunk_episodes);
    LossSums total;
    std::size_t index = 0;
    while (auto chunk = reader.next()) {
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < chunk->size(); ++i) seeds.push_back(entries[index++].seed);
        const LossSums part = evaluation_sums(params, *chunk, seeds, cfg);
        total.tcn += part.tcn;
        total.regression += part.regression;
        total.count += part.count;
    }
    return total.mean(cfg.tcn_weight);
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (manifest.split(Split::Train).empty()) throw ConfigError("train split is empty");
    if (manifest.split(Split::Val).empty()) throw ConfigError("val split is empty");

    TrainResult result;
    Architecture arch = cfg.arch;
    if (arch.pooling == Pooling::Flatten) {
        const Episode first = read_episode(manifest.resolve(manifest.split(Split::Train).front()));
        if (first.frames.empty()) throw ConfigError("first training episode has no frames");
        arch.input_height = first.frames.front().height;
        arch.input_width = first.frames.front().width;
    }
    NetworkParams params = init_params(arch, mix_seed(cfg.seed, 1));
    AdamState adam = AdamState::for_params(params, cfg.lr);
    Rng rng(mix_seed(cfg.seed, 2));

    double best_val = std::numeric_limits<double>::infinity();
    double patience_ref = std::numeric_limits<double>::infinity();
    int waited = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        ChunkedEpisodeReader reader = chunked_iter(manifest, Split::Train, cfg.chunk_episodes);
        double tcn = 0.0, reg = 0.0;
        int batches = 0;
        while (auto chunk = reader.next()) {
            std::vector<std::size_t> lengths;
            for (const Episode& ep : *chunk) lengths.push_back(ep.size());
            for (int b = 0; b < cfg.batches_per_chunk; ++b) {
                const std::vector<Triplet> triplets = sample_triplets(lengths, cfg.sampler, cfg.batch_size, rng);
                const std::vector<TripletExample> examples = make_examples(*chunk, triplets);
                BackwardResult step;
                try {
                    step = backward(params, examples, loss_options(cfg));
                } catch (const NumericError& e) {
                    throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) + ": " +
                                       e.what());
                }
                adam_step(params, step.grads, adam);
                tcn += step.loss.tcn;
                reg += step.loss.regression;
                ++batches;
            }
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_tcn = tcn / batches;
        row.train_reg = reg / batches;
        row.train_total = total_loss(row.train_tcn, row.train_reg, cfg.tcn_weight);
        const LossBreakdown val = evaluate(params, manifest, Split::Val, cfg);
        if (!std::isfinite(val.total)) {
            throw NumericError("epoch " + std::to_string(epoch) + ": non-finite validation loss");
        }
        row.val_tcn = val.tcn;
        row.val_reg = val.regression;
        row.val_total = val.total;
        result.log.rows.push_back(row);
        if (on_epoch) on_epoch(row);

        if (val.total < best_val) {
            best_val = val.total;
            result.best = params;
            result.log.best_epoch = epoch;
        }
        if (val.total < patience_ref - cfg.min_delta) {
            patience_ref = val.total;
            waited = 0;
        } else if (++waited >= cfg.patience) {
            result.stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }
    result.last = std::move(params);
    return result;
}

void write_log_csv(const TrainLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << kLogCsvHeader << '\n';
    char line[256];
    for (const EpochRow& r : log.rows) {
        std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_total, r.train_tcn,
                      r.train_reg, r.val_total, r.val_tcn, r.val_reg);
        out << line;
    }
    if (!out) throw IoError("write failed for " + path.string());
}

TrainLog read_log_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kLogCsvHeader) {
        throw ParseError(ParseError::Kind::Malformed, path.string() + ": missing loss log header");
    }
    TrainLog log;
    double best = std::numeric_limits<double>::infinity();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        EpochRow r;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.train_total, &r.train_tcn, &r.train_reg,
                        &r.val_total, &r.val_tcn, &r.val_reg) != 7) {
            throw ParseError(ParseError::Kind::Malformed, path.string() + ": bad row '" + line + "'");
        }
        if (r.val_total < best) {
            best = r.val_total;
            log.best_epoch = r.epoch;
        }
        log.rows.push_back(r);
    }
    return log;
}

}  // namespace imitate
