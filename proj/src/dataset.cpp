#include "imitate/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "imitate/errors.hpp"

namespace imitate {

namespace fs = std::filesystem;

namespace {

double round_to_float_within(double x, double lo, double hi) {
    float f = static_cast<float>(x);
    if (f > hi) f = std::nextafter(f, -INFINITY);
    if (f < lo) f = std::nextafter(f, INFINITY);
    return f;
}

float quantize_pixel(float v) { return static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f; }

std::uint8_t pixel_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    const std::vector<char>& data() const { return buf_; }

private:
    std::vector<char> buf_;
};

class ByteReader {
public:
    ByteReader(const std::vector<char>& buf, std::string context) : buf_(buf), context_(std::move(context)) {}

    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) {
            throw ParseError(ParseError::Kind::Truncated, context_ + ": truncated at byte " + std::to_string(pos_));
        }
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf_[pos_++]) << (8 * i));
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    const char* take(std::size_t n) {
        need(n);
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    const std::vector<char>& buf_;
    std::string context_;
    std::size_t pos_ = 0;
};

std::vector<char> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::vector<char>& buf, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

const char* split_name(Split s) { return s == Split::Train ? "train" : "val"; }

}  // namespace

double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

std::vector<JointState> generate_trajectory(const ArmModel& model, int num_frames, Rng& rng) {
    if (num_frames < 2) throw ConfigError("a trajectory needs at least 2 frames");
    const std::size_t k = model.joint_count();
    const int segments = (num_frames - 1 + kWaypointSpacing - 1) / kWaypointSpacing;

    auto sample = [&] {
        JointState w;
        w.angles.resize(k);
        for (std::size_t j = 0; j < k; ++j) {
            const JointLimit lim = model.joint_limits[j];
            w.angles[j] = round_to_float_within(rng.uniform(lim.lo, lim.hi), lim.lo, lim.hi);
        }
        return w;
    };
    auto interpolate = [&](const JointState& a, const JointState& b, int step) {
        const double s = smoothstep(static_cast<double>(step) / kWaypointSpacing);
        JointState q;
        q.angles.resize(k);
        for (std::size_t j = 0; j < k; ++j) {
            const JointLimit lim = model.joint_limits[j];
            q.angles[j] = round_to_float_within(a.angles[j] + (b.angles[j] - a.angles[j]) * s, lim.lo, lim.hi);
        }
        return q;
    };
    auto inside = [&](const JointState& q) {
        const EEPose p = forward_kinematics(model, q).ee;
        return std::abs(p.x) <= kTrajectoryBound && std::abs(p.y) <= kTrajectoryBound;
    };
    auto segment_inside = [&](const JointState& a, const JointState& b) {
        for (int step = 1; step <= kWaypointSpacing; ++step) {
            if (!inside(interpolate(a, b, step))) return false;
        }
        return true;
    };

    std::vector<JointState> waypoints;
    for (int attempt = 0; waypoints.empty(); ++attempt) {
        if (attempt == kMaxWaypointAttempts) throw SamplingError("no in-bounds start pose for " + std::string(robot_name(model.robot_id)));
        JointState w = sample();
        if (inside(w)) waypoints.push_back(std::move(w));
    }
    while (waypoints.size() < static_cast<std::size_t>(segments) + 1) {
        for (int attempt = 0;; ++attempt) {
            if (attempt == kMaxWaypointAttempts) {
                throw SamplingError("no in-bounds waypoint for " + std::string(robot_name(model.robot_id)));
            }
            JointState w = sample();
            if (segment_inside(waypoints.back(), w)) {
                waypoints.push_back(std::move(w));
                break;
            }
        }
    }

    std::vector<JointState> out(static_cast<std::size_t>(num_frames));
    for (int t = 0; t < num_frames; ++t) {
        const int seg = std::min(t / kWaypointSpacing, segments - 1);
        out[t] = interpolate(waypoints[seg], waypoints[seg + 1], t - seg * kWaypointSpacing);
    }
    return out;
}

Episode record_episode(const ArmModel& model, int num_frames, int randomize_every, std::uint64_t seed,
                       const RecordOptions& opts) {
    if (randomize_every < 0) throw ConfigError("randomize_every must not be negative");
    Rng rng(seed);
    Episode ep;
    ep.robot_id = model.robot_id;
    ep.seed = seed;
    ep.joint_states = generate_trajectory(model, num_frames, rng);

    RenderConfig base;
    base.height = opts.height;
    base.width = opts.width;
    RenderConfig cfg = base;
    ep.frames.reserve(ep.joint_states.size());
    ep.ee_positions.reserve(ep.joint_states.size());
    for (std::size_t t = 0; t < ep.joint_states.size(); ++t) {
        if (randomize_every > 0 && t % static_cast<std::size_t>(randomize_every) == 0) {
            cfg = randomize_domain(rng, base);
            ep.randomization_frames.push_back(t);
        }
        ep.ee_positions.push_back(forward_kinematics(model, ep.joint_states[t]).ee);
        ep.frames.push_back(render(model, ep.joint_states[t], cfg, opts.threads));
    }
    return ep;
}

Episode quantize(const Episode& ep) {
    Episode q = ep;
    for (Image& img : q.frames) {
        for (float& v : img.data) v = quantize_pixel(v);
    }
    for (EEPose& p : q.ee_positions) {
        p.x = static_cast<float>(p.x);
        p.y = static_cast<float>(p.y);
    }
    for (JointState& js : q.joint_states) {
        for (double& a : js.angles) a = static_cast<float>(a);
    }
    return q;
}

bool same_payload(const Episode& a, const Episode& b) {
    return a.robot_id == b.robot_id && a.frames == b.frames && a.ee_positions == b.ee_positions &&
           a.joint_states == b.joint_states;
}

std::uintmax_t episode_file_size(std::size_t frames, int height, int width, int channels, std::size_t joints) {
    const std::uintmax_t per_frame = static_cast<std::uintmax_t>(height) * width * channels + 8 + 4 * joints;
    return kEpisodeHeaderBytes + frames * per_frame;
}

void write_episode(const Episode& ep, const fs::path& path) {
    const std::size_t n = ep.frames.size();
    if (ep.ee_positions.size() != n || ep.joint_states.size() != n) {
        throw ConfigError("episode has mismatched frame, pose and joint counts");
    }
    const int h = n ? ep.frames[0].height : 0;
    const int w = n ? ep.frames[0].width : 0;
    const std::size_t k = n ? ep.joint_states[0].angles.size() : 0;

    ByteWriter out;
    out.bytes(kEpisodeMagic, 4);
    out.u32(kEpisodeVersion);
    out.u8(static_cast<std::uint8_t>(ep.robot_id));
    out.u32(static_cast<std::uint32_t>(n));
    out.u16(static_cast<std::uint16_t>(h));
    out.u16(static_cast<std::uint16_t>(w));
    out.u16(static_cast<std::uint16_t>(Image::channels));
    out.u16(static_cast<std::uint16_t>(k));
    for (std::size_t t = 0; t < n; ++t) {
        const Image& img = ep.frames[t];
        if (img.height != h || img.width != w) throw ConfigError("episode frames differ in size");
        if (ep.joint_states[t].angles.size() != k) throw ConfigError("episode joint count varies");
        for (float v : img.data) out.u8(pixel_byte(v));
        out.f32(static_cast<float>(ep.ee_positions[t].x));
        out.f32(static_cast<float>(ep.ee_positions[t].y));
        for (double a : ep.joint_states[t].angles) out.f32(static_cast<float>(a));
    }
    dump(out.data(), path);
}

Episode read_episode(const fs::path& path) {
    const std::vector<char> buf = slurp(path);
    ByteReader in(buf, path.string());
    const char* magic = in.take(4);
    if (!std::equal(magic, magic + 4, kEpisodeMagic)) {
        throw ParseError(ParseError::Kind::BadMagic, path.string() + ": bad magic (not an episode file)");
    }
    const std::uint32_t version = in.u32();
    if (version != kEpisodeVersion) {
        throw ParseError(ParseError::Kind::BadVersion,
                         path.string() + ": unsupported episode version " + std::to_string(version));
    }
    Episode ep;
    ep.robot_id = robot_from_byte(in.u8());
    const std::uint32_t n = in.u32();
    const int h = in.u16();
    const int w = in.u16();
    const int c = in.u16();
    const std::size_t k = in.u16();
    if (c != Image::channels) {
        throw ParseError(ParseError::Kind::Malformed, path.string() + ": expected 3 channels");
    }
    in.need(static_cast<std::size_t>(episode_file_size(n, h, w, c, k) - kEpisodeHeaderBytes));
    ep.frames.reserve(n);
    ep.ee_positions.reserve(n);
    ep.joint_states.reserve(n);
    for (std::uint32_t t = 0; t < n; ++t) {
        Image img(h, w);
        const char* px = in.take(img.data.size());
        for (std::size_t i = 0; i < img.data.size(); ++i) {
            img.data[i] = static_cast<float>(static_cast<std::uint8_t>(px[i])) / 255.0f;
        }
        ep.frames.push_back(std::move(img));
        EEPose p;
        p.x = in.f32();
        p.y = in.f32();
        ep.ee_positions.push_back(p);
        JointState js;
        js.angles.resize(k);
        for (double& a : js.angles) a = in.f32();
        ep.joint_states.push_back(std::move(js));
    }
    if (!in.at_end()) {
        throw ParseError(ParseError::Kind::Malformed, path.string() + ": trailing bytes after last frame");
    }
    return ep;
}

fs::path DatasetManifest::resolve(const ManifestEntry& e) const {
    const fs::path p(e.path);
    return p.is_absolute() ? p : root / p;
}

std::vector<ManifestEntry> DatasetManifest::split(Split s) const {
    std::vector<ManifestEntry> out;
    for (const ManifestEntry& e : episodes) {
        if (e.split == s) out.push_back(e);
    }
    return out;
}

DatasetManifest read_manifest(const fs::path& path) {
    const std::vector<char> buf = slurp(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(buf.begin(), buf.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(ParseError::Kind::Malformed, path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.root = path.parent_path();
    try {
        for (const auto& item : doc.at("episodes")) {
            ManifestEntry e;
            e.path = item.at("path").get<std::string>();
            e.robot_id = parse_robot(item.at("robot_id").get<std::string>());
            e.frames = item.at("frames").get<std::size_t>();
            e.seed = item.at("seed").get<std::uint64_t>();
            const std::string split = item.at("split").get<std::string>();
            if (split != "train" && split != "val") {
                throw ParseError(ParseError::Kind::Malformed, path.string() + ": unknown split '" + split + "'");
            }
            e.split = split == "train" ? Split::Train : Split::Val;
            m.episodes.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::Malformed, path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(ParseError::Kind::Malformed, path.string() + ": " + e.what());
    }
    return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    nlohmann::json doc;
    doc["version"] = 1;
    doc["episodes"] = nlohmann::json::array();
    for (const ManifestEntry& e : manifest.episodes) {
        doc["episodes"].push_back({{"path", e.path},
                                   {"robot_id", std::string(robot_name(e.robot_id))},
                                   {"frames", e.frames},
                                   {"seed", e.seed},
                                   {"split", split_name(e.split)}});
    }
    const std::string text = doc.dump(2) + "\n";
    dump(std::vector<char>(text.begin(), text.end()), path);
}

DatasetManifest split_dataset(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
    const std::size_t n = manifest.episodes.size();
    if (n < 2) throw ConfigError("splitting needs at least 2 episodes");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    // The small slack keeps e.g. 0.2 * 80 from rounding up to 17.
    std::size_t n_val = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(n) - 1e-9));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);

    DatasetManifest out = manifest;
    for (ManifestEntry& e : out.episodes) e.split = Split::Train;
    for (std::size_t i = 0; i < n_val; ++i) out.episodes[order[i]].split = Split::Val;
    return out;
}

std::vector<Triplet> sample_triplets(std::span<const std::size_t> episode_lengths, const SamplerConfig& cfg,
                                     std::size_t batch, Rng& rng) {
    if (cfg.positive_window <= 0 || cfg.negative_margin <= cfg.positive_window) {
        throw ConfigError("sampler needs 0 < positive_window < negative_margin");
    }
    if (episode_lengths.empty()) throw SamplingError("no episodes to sample triplets from");
    std::size_t total = 0;
    for (std::size_t e = 0; e < episode_lengths.size(); ++e) {
        if (episode_lengths[e] <= 2 * static_cast<std::size_t>(cfg.negative_margin)) {
            throw SamplingError("episode " + std::to_string(e) + " has " + std::to_string(episode_lengths[e]) +
                                " frames; need more than 2 * negative_margin = " +
                                std::to_string(2 * cfg.negative_margin));
        }
        total += episode_lengths[e];
    }

    const long w = cfg.positive_window;
    const long m = cfg.negative_margin;
    std::vector<Triplet> out;
    out.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        std::size_t flat = rng.below(total);
        std::size_t ep = 0;
        while (flat >= episode_lengths[ep]) flat -= episode_lengths[ep++];
        const long len = static_cast<long>(episode_lengths[ep]);
        const long t = static_cast<long>(flat);

        const long lo = std::max(0L, t - w);
        const long hi = std::min(len - 1, t + w);
        long tp = lo + static_cast<long>(rng.below(static_cast<std::uint64_t>(hi - lo)));
        if (tp >= t) ++tp;

        // Eligible negatives: [0, t-m] and [t+m, len-1].
        const long left = std::max(0L, t - m + 1);
        const long right = std::max(0L, len - (t + m));
        long pick = static_cast<long>(rng.below(static_cast<std::uint64_t>(left + right)));
        const long tn = pick < left ? pick : t + m + (pick - left);

        out.push_back({{ep, static_cast<std::size_t>(t)},
                       {ep, static_cast<std::size_t>(tp)},
                       {ep, static_cast<std::size_t>(tn)}});
    }
    return out;
}

ChunkedEpisodeReader::ChunkedEpisodeReader(std::vector<fs::path> paths, std::size_t chunk_episodes)
    : paths_(std::move(paths)), chunk_(chunk_episodes) {
    if (chunk_ == 0) throw ConfigError("chunk_episodes must be at least 1");
}

std::size_t ChunkedEpisodeReader::chunk_count() const { return (paths_.size() + chunk_ - 1) / chunk_; }

std::optional<std::vector<Episode>> ChunkedEpisodeReader::next() {
    if (cursor_ >= paths_.size()) return std::nullopt;
    const std::size_t end = std::min(paths_.size(), cursor_ + chunk_);
    std::vector<Episode> batch;
    batch.reserve(end - cursor_);
    for (; cursor_ < end; ++cursor_) {
        if (!fs::exists(paths_[cursor_])) throw IoError("missing episode file " + paths_[cursor_].string());
        batch.push_back(read_episode(paths_[cursor_]));
    }
    peak_ = std::max(peak_, batch.size());
    return batch;
}

ChunkedEpisodeReader chunked_iter(const DatasetManifest& manifest, Split split, std::size_t chunk_episodes) {
    std::vector<fs::path> paths;
    for (const ManifestEntry& e : manifest.split(split)) paths.push_back(manifest.resolve(e));
    return ChunkedEpisodeReader(std::move(paths), chunk_episodes);
}

std::uint64_t episode_seed(std::uint64_t corpus_seed, std::size_t index) { return mix_seed(corpus_seed, index); }

DatasetManifest generate_corpus(const CorpusOptions& opts, const fs::path& out_dir) {
    if (opts.episodes < 1) throw ConfigError("episodes must be at least 1");
    if (opts.frames < 2) throw ConfigError("frames must be at least 2");
    if (opts.randomize_every < 0) throw ConfigError("randomize-every must not be negative");
    if (opts.robots.empty()) throw ConfigError("no robots selected");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    const std::size_t n = static_cast<std::size_t>(opts.episodes);
    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.episodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "episode_%04zu.ep", i);
        ManifestEntry& e = manifest.episodes[i];
        e.path = name;
        e.robot_id = opts.robots[i % opts.robots.size()];
        e.frames = static_cast<std::size_t>(opts.frames);
        e.seed = episode_seed(opts.seed, i);
    }

    RecordOptions rec{opts.height, opts.width, 1};
    std::vector<std::string> failures(n);
#pragma omp parallel for num_threads(std::max(1, opts.threads)) schedule(dynamic)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        const ManifestEntry& e = manifest.episodes[i];
        try {
            const Episode ep = record_episode(make_arm(e.robot_id), opts.frames, opts.randomize_every, e.seed, rec);
            write_episode(ep, manifest.resolve(e));
        } catch (const std::exception& ex) {
            failures[i] = ex.what();
        }
    }
    for (const std::string& f : failures) {
        if (!f.empty()) throw IoError(f);
    }

    if (n >= 2) manifest = split_dataset(manifest, opts.val_fraction, mix_seed(opts.seed, 0x5b117ULL));
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

}  // namespace imitate
