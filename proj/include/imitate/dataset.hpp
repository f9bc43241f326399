#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imitate/arm_sim.hpp"
#include "imitate/rng.hpp"

namespace imitate {

/// One recorded video. End-effector positions are global world coordinates.
struct Episode {
    RobotId robot_id = RobotId::Panda;
    std::vector<Image> frames;
    std::vector<EEPose> ee_positions;
    std::vector<JointState> joint_states;
    /// Frames at which the render config was resampled. Not stored in the
    /// binary file; read_episode leaves it empty.
    std::vector<std::size_t> randomization_frames;
    /// Not stored in the binary file (the manifest carries it).
    std::uint64_t seed = 0;

    std::size_t size() const { return frames.size(); }
};

/// Frames between trajectory waypoints.
inline constexpr int kWaypointSpacing = 30;

/// Smoothstep 3u^2 - 2u^3.
double smoothstep(double u);

/// Every frame keeps the end effector within [-kTrajectoryBound, kTrajectoryBound]^2.
inline constexpr double kTrajectoryBound = 0.9;
/// Rejection attempts per waypoint before giving up with SamplingError.
inline constexpr int kMaxWaypointAttempts = 10000;

/// Waypoints sampled uniformly within the joint limits every kWaypointSpacing
/// frames, joined by per-joint smoothstep interpolation. A waypoint is redrawn
/// until it, and every interpolated frame leading to it, keeps the end effector
/// within kTrajectoryBound. Angles are rounded to the nearest float inside the
/// limits so episodes survive the f32 file format.
std::vector<JointState> generate_trajectory(const ArmModel& model, int num_frames, Rng& rng);

struct RecordOptions {
    int height = 64;
    int width = 64;
    int threads = 1;
};

/// Deterministic in (model, num_frames, randomize_every, seed, image size).
/// randomize_every = 0 keeps the default RenderConfig for every frame.
Episode record_episode(const ArmModel& model, int num_frames, int randomize_every, std::uint64_t seed,
                       const RecordOptions& opts = {});

/// Rounds images to 8-bit levels and poses/joints to f32, exactly as a
/// write/read cycle does.
Episode quantize(const Episode& ep);

/// True when robot, frames, poses and joints match exactly.
bool same_payload(const Episode& a, const Episode& b);

inline constexpr char kEpisodeMagic[4] = {'E', 'P', 'I', 'S'};
inline constexpr std::uint32_t kEpisodeVersion = 1;
inline constexpr std::size_t kEpisodeHeaderBytes = 21;

std::uintmax_t episode_file_size(std::size_t frames, int height, int width, int channels, std::size_t joints);

/// Little-endian:
///   "EPIS" | u32 version | u8 robot | u32 frames | u16 H | u16 W | u16 C | u16 k
///   then per frame: H*W*C u8 pixels, f32 ee x, f32 ee y, f32 joints[k].
void write_episode(const Episode& ep, const std::filesystem::path& path);
Episode read_episode(const std::filesystem::path& path);

enum class Split { Train, Val };

struct ManifestEntry {
    std::string path;  // relative to the manifest directory unless absolute
    RobotId robot_id = RobotId::Panda;
    std::size_t frames = 0;
    std::uint64_t seed = 0;
    Split split = Split::Train;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> episodes;
    std::filesystem::path root;

    std::filesystem::path resolve(const ManifestEntry& e) const;
    /// Entries of one split in manifest order.
    std::vector<ManifestEntry> split(Split s) const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
/// Paths are written as stored; `root` is not serialized.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Episode-level shuffle, then the first ceil(val_fraction * N) go to val.
/// At least one episode always stays in train.
DatasetManifest split_dataset(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed);

struct SamplerConfig {
    int positive_window = 4;
    int negative_margin = 24;
};

struct FrameRef {
    std::size_t episode = 0;
    std::size_t frame = 0;

    friend bool operator==(FrameRef, FrameRef) = default;
};

struct Triplet {
    FrameRef anchor;
    FrameRef positive;
    FrameRef negative;
};

/// Anchor uniform over all frames of all episodes; positive uniform in the
/// window around it (excluding the anchor); negative uniform over frames of
/// the same episode at least negative_margin away.
std::vector<Triplet> sample_triplets(std::span<const std::size_t> episode_lengths, const SamplerConfig& cfg,
                                     std::size_t batch, Rng& rng);

/// Streams a list of episodes in order, holding at most `chunk_episodes`.
class ChunkedEpisodeReader {
public:
    ChunkedEpisodeReader(std::vector<std::filesystem::path> paths, std::size_t chunk_episodes);

    /// Next batch, or nullopt after the last one. Throws IoError naming the path.
    std::optional<std::vector<Episode>> next();
    void rewind() { cursor_ = 0; }
    std::size_t chunk_count() const;
    std::size_t peak_resident() const { return peak_; }

private:
    std::vector<std::filesystem::path> paths_;
    std::size_t chunk_;
    std::size_t cursor_ = 0;
    std::size_t peak_ = 0;
};

ChunkedEpisodeReader chunked_iter(const DatasetManifest& manifest, Split split, std::size_t chunk_episodes);

struct CorpusOptions {
    int episodes = 80;
    int frames = 120;
    int randomize_every = 60;
    std::vector<RobotId> robots{kAllRobots.begin(), kAllRobots.end()};
    std::uint64_t seed = 0;
    double val_fraction = 0.2;
    int height = 64;
    int width = 64;
    int threads = 1;
};

/// Seed of episode `index` in a corpus generated from `corpus_seed`.
std::uint64_t episode_seed(std::uint64_t corpus_seed, std::size_t index);

/// Writes episode_NNNN.ep files plus manifest.json into `out_dir`. Episode i
/// uses robot robots[i % robots.size()]. Returns the split manifest.
DatasetManifest generate_corpus(const CorpusOptions& opts, const std::filesystem::path& out_dir);

}  // namespace imitate
