#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "imitate/arm_sim.hpp"
#include "imitate/dataset.hpp"
#include "imitate/nn.hpp"

namespace imitate {

struct ImitationResult {
    std::vector<EEPose> predicted_positions;
    std::vector<JointState> replay_joints;
    std::vector<EEPose> replayed_positions;
    /// Distance between the source's ground-truth and the replayed end effector.
    std::vector<double> frame_error;
    /// Mean of frame_error over frames not in ik_failures; NaN when every frame failed.
    double mean_error = 0.0;
    std::vector<std::size_t> ik_failures;
};

/// regress(encode(frame)) per frame, clamped to the [-1,1]^2 workspace.
std::vector<EEPose> predict_positions(const NetworkParams& params, std::span<const Image> frames, int threads = 1);

struct ReplayResult {
    std::vector<JointState> joints;
    std::vector<std::size_t> ik_failures;
};

/// Frame 0 is seeded from the all-zero pose, frame t from frame t-1's
/// solution. A frame whose IK fails keeps the previous joint state.
ReplayResult replay(const ArmModel& target, std::span<const EEPose> positions, const IkOptions& ik = {});

/// Replays `commanded` on `target` and scores against `ground_truth`.
ImitationResult imitate_positions(std::span<const EEPose> commanded, std::span<const EEPose> ground_truth,
                                  const ArmModel& target);

/// predict_positions -> replay -> FK, scored against the source's recorded positions.
ImitationResult imitate(const NetworkParams& params, const Episode& source, const ArmModel& target, int threads = 1);

/// Header "frame,pred_x,pred_y,replay_x,replay_y,error,failed".
void write_imitation_csv(const ImitationResult& result, const std::filesystem::path& path);

/// Renders the replayed joints of `target` under a fixed appearance.
Episode replayed_episode(const ArmModel& target, const ImitationResult& result, const RenderConfig& cfg = {});

}  // namespace imitate
