#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "imitate/rng.hpp"

namespace imitate {

enum class RobotId : std::uint8_t { Panda = 0, Sawyer = 1, IIWA = 2, Jaco = 3 };

inline constexpr std::array<RobotId, 4> kAllRobots{RobotId::Panda, RobotId::Sawyer, RobotId::IIWA,
                                                   RobotId::Jaco};

std::string_view robot_name(RobotId id);
/// Case-insensitive; throws ConfigError on unknown names.
RobotId parse_robot(std::string_view name);
/// Throws ParseError for bytes outside the enum.
RobotId robot_from_byte(std::uint8_t b);

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Vec2, Vec2) = default;
};

double norm(Vec2 v);

/// End-effector position in world units; the workspace is [-1,1]^2.
using EEPose = Vec2;

struct JointLimit {
    double lo = 0.0;
    double hi = 0.0;
};

inline constexpr std::size_t kMaxLinks = 5;

struct ArmModel {
    RobotId robot_id = RobotId::Panda;
    std::vector<double> link_lengths;
    std::vector<double> link_widths;
    Vec2 base;
    std::vector<JointLimit> joint_limits;

    std::size_t joint_count() const { return link_lengths.size(); }
    double reach() const;
    /// Throws ConfigError when any model invariant fails.
    void validate() const;
};

/// The four fixed planar morphologies.
ArmModel make_arm(RobotId id);

struct JointState {
    std::vector<double> angles;

    friend bool operator==(const JointState&, const JointState&) = default;
};

struct FkResult {
    EEPose ee;
    /// Base followed by the far endpoint of every link (joint_count + 1 points).
    std::vector<Vec2> chain;
};

/// Throws LimitViolation naming the first out-of-limit joint.
FkResult forward_kinematics(const ArmModel& model, const JointState& joints);

/// Same chain computation without the limit check.
FkResult forward_kinematics_unchecked(const ArmModel& model, const JointState& joints);

struct IkOptions {
    double tolerance = 1e-6;
    int max_iters = 200;
    double damping = 0.05;
    double max_step = 0.2;
    int restarts = 4;           // bent re-seeds tried after the first descent fails
    double restart_bend = 0.6;  // radians per joint
};

/// Damped least squares on the 2xk positional Jacobian, starting from
/// `seed` (projected onto the limits). Each iteration clamps the update to
/// `max_step` per joint and projects back onto the joint limits. If that
/// descent stalls, up to `restarts` bent copies of the seed are tried.
/// Throws NotConverged carrying the best residual seen.
JointState inverse_kinematics(const ArmModel& model, EEPose target, const JointState& seed,
                              const IkOptions& opts = {});

struct Rgb {
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;

    friend bool operator==(Rgb, Rgb) = default;
};

struct RenderConfig {
    int height = 64;
    int width = 64;
    Rgb arm_color{0.9, 0.5, 0.1};
    Rgb background_color{0.15, 0.15, 0.2};
    std::array<Rgb, kMaxLinks> per_link_color_jitter{};
    Vec2 camera_offset;
    double camera_scale = 1.0;
    double brightness = 1.0;

    friend bool operator==(const RenderConfig&, const RenderConfig&) = default;
};

/// Row-major H x W x 3 floats in [0,1].
struct Image {
    static constexpr int channels = 3;

    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * channels, 0.0f) {}

    float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// World coordinate of the centre of pixel (px, py) under the camera in `cfg`.
/// Image x grows right, image y grows down, world y grows up.
Vec2 pixel_to_world(const RenderConfig& cfg, int px, int py);

/// Filled capsules per link (later links on top), then brightness and clamp.
/// `threads > 1` splits rows across OpenMP threads; output is identical.
Image render(const ArmModel& model, const JointState& joints, const RenderConfig& cfg, int threads = 1);

inline constexpr double kMinColorContrast = 0.2;
inline constexpr double kColorJitter = 0.05;
/// Draws taken from the caller's rng by randomize_domain.
inline constexpr int kRandomizeDomainDraws = 5;

/// Resamples appearance, keeping the image size of `base`. Consumes exactly
/// kRandomizeDomainDraws values from `rng`: a child seed (colors + per-link
/// jitter, with rejection of low-contrast pairs, happen on a child engine),
/// camera offset x, camera offset y, camera scale, brightness.
RenderConfig randomize_domain(Rng& rng, const RenderConfig& base);

}  // namespace imitate
