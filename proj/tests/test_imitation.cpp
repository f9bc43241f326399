#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>

#include "imitate/dataset.hpp"
#include "imitate/imitation.hpp"
#include "test_support.hpp"

using namespace imitate;
using imitate::testing::scratch_dir;

namespace {

std::vector<EEPose> fk_track(const ArmModel& m, const std::vector<JointState>& joints) {
    std::vector<EEPose> out;
    for (const JointState& q : joints) out.push_back(forward_kinematics(m, q).ee);
    return out;
}

}  // namespace

TEST_CASE("predictions are clamped and frame-wise") {
    NetworkParams p = init_params(Architecture{}, 1);
    p.layers.back().bias.data = {5.0f, -5.0f};
    const Episode ep = record_episode(make_arm(RobotId::Panda), 6, 60, 2, RecordOptions{16, 16, 1});
    const std::vector<EEPose> pred = predict_positions(p, ep.frames);
    REQUIRE(pred.size() == 6);
    for (const EEPose& e : pred) {
        CHECK((e.x >= -1.0 && e.x <= 1.0));
        CHECK((e.y >= -1.0 && e.y <= 1.0));
    }

    const NetworkParams q = init_params(Architecture{}, 2);
    const std::vector<Image> same{ep.frames[3], ep.frames[3]};
    const std::vector<EEPose> twin = predict_positions(q, same);
    CHECK(twin[0] == twin[1]);
    CHECK(predict_positions(q, ep.frames, 3) == predict_positions(q, ep.frames));
}

TEST_CASE("replaying FK of a smooth trajectory recovers it") {
    // Continuity can break where the track folds the arm onto itself near the
    // base and the seeded branch sits at a joint limit, so the 0.5 rad bound
    // is required of most trajectories rather than all.
    for (RobotId id : kAllRobots) {
        const ArmModel m = make_arm(id);
        int smooth = 0, converged_frames = 0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            Rng rng(seed);
            const std::vector<EEPose> targets = fk_track(m, generate_trajectory(m, 120, rng));
            const ReplayResult r = replay(m, targets);
            REQUIRE(r.joints.size() == 120);
            double max_delta = 0.0;
            std::size_t next_failure = 0;
            for (std::size_t t = 0; t < 120; ++t) {
                if (next_failure < r.ik_failures.size() && r.ik_failures[next_failure] == t) {
                    ++next_failure;
                } else {
                    ++converged_frames;
                    CHECK(norm(forward_kinematics(m, r.joints[t]).ee - targets[t]) <= 1e-6);
                }
                if (t == 0) continue;
                for (std::size_t j = 0; j < m.joint_count(); ++j) {
                    max_delta = std::max(max_delta, std::abs(r.joints[t].angles[j] - r.joints[t - 1].angles[j]));
                }
            }
            smooth += max_delta <= 0.5;
        }
        INFO(robot_name(id) << ": " << smooth << "/50 smooth, " << converged_frames << "/6000 converged");
        CHECK(smooth >= 40);
        CHECK(converged_frames >= 5900);
    }
}

TEST_CASE("unreachable frames are reported and carry the previous pose") {
    const ArmModel m = make_arm(RobotId::Sawyer);  // reach 0.8 from (0, -0.8)
    const std::vector<EEPose> targets{{0.3, -0.5}, {0.0, 0.5}, {0.2, -0.4}, {1.5, 0.0}};
    const ReplayResult r = replay(m, targets);
    CHECK(r.ik_failures == std::vector<std::size_t>{1, 3});
    CHECK(r.joints[1] == r.joints[0]);
    CHECK(r.joints[3] == r.joints[2]);

    const ImitationResult res = imitate_positions(targets, targets, m);
    CHECK(res.ik_failures == r.ik_failures);
    CHECK(res.frame_error[0] <= 1e-6);
    CHECK(res.mean_error <= 1e-6);
    for (std::size_t t = 0; t < targets.size(); ++t) {
        CHECK(norm(res.replayed_positions[t] - forward_kinematics(m, res.replay_joints[t]).ee) <= 1e-9);
    }

    const std::vector<EEPose> none{{0.0, 0.5}};
    CHECK(std::isnan(imitate_positions(none, none, m).mean_error));
}

TEST_CASE("ground-truth positions isolate the kinematic error") {
    const ArmModel panda = make_arm(RobotId::Panda);
    const auto dir = scratch_dir("imitation_gt");
    write_episode(record_episode(panda, 120, 60, 8, RecordOptions{16, 16, 1}), dir / "src.ep");
    const Episode source = read_episode(dir / "src.ep");
    const ImitationResult same = imitate_positions(source.ee_positions, source.ee_positions, panda);
    CHECK(same.ik_failures.size() <= 6);
    CHECK(same.mean_error < 1e-5);

    // Cross-robot: the IIWA reaches 0.9, enough for any in-bounds Panda pose.
    const ImitationResult cross = imitate_positions(source.ee_positions, source.ee_positions, make_arm(RobotId::IIWA));
    CHECK(cross.ik_failures.size() <= 6);
    CHECK(cross.mean_error < 1e-5);
}

TEST_CASE("imitation is deterministic and exports CSV and a replay episode") {
    const ArmModel panda = make_arm(RobotId::Panda);
    const Episode source = record_episode(panda, 8, 60, 3, RecordOptions{16, 16, 1});
    const NetworkParams p = init_params(Architecture{}, 4);
    const ImitationResult a = imitate::imitate(p, source, make_arm(RobotId::Jaco));
    const ImitationResult b = imitate::imitate(p, source, make_arm(RobotId::Jaco), 2);
    CHECK(a.replay_joints == b.replay_joints);
    CHECK(a.frame_error == b.frame_error);
    for (std::size_t t = 0; t < a.frame_error.size(); ++t) {
        CHECK(a.frame_error[t] == norm(source.ee_positions[t] - a.replayed_positions[t]));
    }

    const auto dir = scratch_dir("imitation_csv");
    write_imitation_csv(a, dir / "out.csv");
    std::ifstream in(dir / "out.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "frame,pred_x,pred_y,replay_x,replay_y,error,failed");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 8);

    RenderConfig cfg;
    cfg.height = cfg.width = 16;
    const Episode replayed = replayed_episode(make_arm(RobotId::Jaco), a, cfg);
    CHECK(replayed.robot_id == RobotId::Jaco);
    CHECK(replayed.size() == 8);
    CHECK(replayed.ee_positions == a.replayed_positions);
    write_episode(replayed, dir / "replay.ep");
    CHECK(same_payload(read_episode(dir / "replay.ep"), quantize(replayed)));
}
