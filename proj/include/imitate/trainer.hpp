#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "imitate/dataset.hpp"
#include "imitate/nn.hpp"

namespace imitate {

struct TrainConfig {
    int max_epochs = 200;
    std::size_t batch_size = 32;
    int batches_per_chunk = 4;
    double margin = kDefaultMargin;
    double tcn_weight = kDefaultTcnWeight;
    double lr = 1e-3;
    int patience = 10;
    double min_delta = 1e-4;
    std::uint64_t seed = 0;
    std::size_t chunk_episodes = 8;
    SamplerConfig sampler;
    /// Validation triplets drawn per validation episode.
    std::size_t eval_triplets_per_episode = 32;
    int threads = 1;
    Architecture arch;

    /// Throws ConfigError.
    void validate() const;
};

struct EpochRow {
    int epoch = 0;
    double train_total = 0.0;
    double train_tcn = 0.0;
    double train_reg = 0.0;
    double val_total = 0.0;
    double val_tcn = 0.0;
    double val_reg = 0.0;
};

struct TrainLog {
    std::vector<EpochRow> rows;
    int best_epoch = -1;
};

struct TrainResult {
    NetworkParams best;
    NetworkParams last;
    TrainLog log;
    bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRow&)>;

/// Joint encoder + regressor training with early stopping on val_total.
/// Returns the parameters of the epoch with the lowest val_total.
TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Seed for validation triplets; fixed so epochs are comparable.
inline constexpr std::uint64_t kEvalSeed = 0x5eed0fe7a1ULL;

struct LossSums {
    double tcn = 0.0;
    double regression = 0.0;
    std::size_t count = 0;

    LossBreakdown mean(double tcn_weight) const;
};

/// Sums of per-triplet losses over `episodes`. Each episode gets its own
/// triplet stream seeded from kEvalSeed and `seeds[i]`, so sums over
/// disjoint subsets add up to the sum over their union.
LossSums evaluation_sums(const NetworkParams& params, std::span<const Episode> episodes,
                         std::span<const std::uint64_t> seeds, const TrainConfig& cfg);

/// Mean losses over one split, streamed in chunks. Throws ConfigError on an empty split.
LossBreakdown evaluate(const NetworkParams& params, const DatasetManifest& manifest, Split split,
                       const TrainConfig& cfg);

inline constexpr const char* kLogCsvHeader = "epoch,train_total,train_tcn,train_reg,val_total,val_tcn,val_reg";

void write_log_csv(const TrainLog& log, const std::filesystem::path& path);
/// best_epoch is recomputed as the argmin of val_total.
TrainLog read_log_csv(const std::filesystem::path& path);

}  // namespace imitate
