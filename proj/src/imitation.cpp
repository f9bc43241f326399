#include "imitate/imitation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "imitate/errors.hpp"

namespace imitate {

std::vector<EEPose> predict_positions(const NetworkParams& params, std::span<const Image> frames, int threads) {
    if (params.output_dim != 2) throw ShapeError("regression head must output 2 values");
    const Matrix pred = regress(params, encode(params, frames, threads));
    std::vector<EEPose> out(pred.rows);
    for (std::size_t i = 0; i < pred.rows; ++i) {
        out[i] = {std::clamp(pred(i, 0), -1.0, 1.0), std::clamp(pred(i, 1), -1.0, 1.0)};
    }
    return out;
}

ReplayResult replay(const ArmModel& target, std::span<const EEPose> positions, const IkOptions& ik) {
    ReplayResult r;
    JointState current{std::vector<double>(target.joint_count(), 0.0)};
    r.joints.reserve(positions.size());
    for (std::size_t t = 0; t < positions.size(); ++t) {
        try {
            current = inverse_kinematics(target, positions[t], current, ik);
        } catch (const NotConverged&) {
            r.ik_failures.push_back(t);
        } catch (const ConfigError&) {
            r.ik_failures.push_back(t);
        }
        r.joints.push_back(current);
    }
    return r;
}

ImitationResult imitate_positions(std::span<const EEPose> commanded, std::span<const EEPose> ground_truth,
                                  const ArmModel& target) {
    if (commanded.size() != ground_truth.size()) throw ConfigError("commanded and ground-truth lengths differ");
    ImitationResult res;
    res.predicted_positions.assign(commanded.begin(), commanded.end());
    ReplayResult rep = replay(target, commanded);
    res.replay_joints = std::move(rep.joints);
    res.ik_failures = std::move(rep.ik_failures);

    double sum = 0.0;
    std::size_t counted = 0;
    std::size_t next_failure = 0;
    for (std::size_t t = 0; t < commanded.size(); ++t) {
        const EEPose p = forward_kinematics(target, res.replay_joints[t]).ee;
        res.replayed_positions.push_back(p);
        const double err = norm(ground_truth[t] - p);
        res.frame_error.push_back(err);
        if (next_failure < res.ik_failures.size() && res.ik_failures[next_failure] == t) {
            ++next_failure;
            continue;
        }
        sum += err;
        ++counted;
    }
    res.mean_error = counted ? sum / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
    return res;
}

ImitationResult imitate(const NetworkParams& params, const Episode& source, const ArmModel& target, int threads) {
    const std::vector<EEPose> predicted = predict_positions(params, source.frames, threads);
    return imitate_positions(predicted, source.ee_positions, target);
}

void write_imitation_csv(const ImitationResult& r, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "frame,pred_x,pred_y,replay_x,replay_y,error,failed\n";
    std::size_t next_failure = 0;
    char line[256];
    for (std::size_t t = 0; t < r.predicted_positions.size(); ++t) {
        const bool failed = next_failure < r.ik_failures.size() && r.ik_failures[next_failure] == t;
        if (failed) ++next_failure;
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%d\n", t, r.predicted_positions[t].x,
                      r.predicted_positions[t].y, r.replayed_positions[t].x, r.replayed_positions[t].y,
                      r.frame_error[t], failed ? 1 : 0);
        out << line;
    }
    if (!out) throw IoError("write failed for " + path.string());
}

Episode replayed_episode(const ArmModel& target, const ImitationResult& result, const RenderConfig& cfg) {
    Episode ep;
    ep.robot_id = target.robot_id;
    ep.randomization_frames = {0};
    for (const JointState& q : result.replay_joints) {
        ep.joint_states.push_back(q);
        ep.ee_positions.push_back(forward_kinematics(target, q).ee);
        ep.frames.push_back(render(target, q, cfg));
    }
    return ep;
}

}  // namespace imitate
