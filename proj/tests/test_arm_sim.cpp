#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "imitate/arm_sim.hpp"
#include "imitate/errors.hpp"
#include "test_support.hpp"

using namespace imitate;
using imitate::testing::complex_fk;
using imitate::testing::random_joints;

namespace {

ArmModel four_link() { return make_arm(RobotId::Panda); }

double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST_CASE("robot morphologies satisfy model invariants") {
    for (RobotId id : kAllRobots) {
        const ArmModel m = make_arm(id);
        CHECK_NOTHROW(m.validate());
        CHECK(m.link_widths.front() == doctest::Approx(0.06));
        CHECK(m.link_widths.back() == doctest::Approx(0.03));
        CHECK(parse_robot(robot_name(id)) == id);
    }
    CHECK(make_arm(RobotId::Sawyer).joint_count() == 3);
    CHECK(make_arm(RobotId::IIWA).joint_count() == 5);
    CHECK_THROWS_AS(parse_robot("ur5"), ConfigError);
}

TEST_CASE("forward kinematics on axis-aligned poses") {
    const ArmModel m = four_link();
    const FkResult zero = forward_kinematics(m, JointState{{0, 0, 0, 0}});
    CHECK(dist(zero.ee, {0.85, -0.8}) < 1e-12);
    CHECK(zero.chain.size() == 5);
    CHECK(zero.chain.front() == m.base);

    const FkResult up = forward_kinematics(m, JointState{{std::numbers::pi / 2, 0, 0, 0}});
    CHECK(dist(up.ee, {0.0, 0.05}) < 1e-12);
}

TEST_CASE("forward kinematics matches the complex-rotation oracle") {
    Rng rng(7);
    for (RobotId id : kAllRobots) {
        const ArmModel m = make_arm(id);
        for (int i = 0; i < 1000; ++i) {
            const JointState q = random_joints(m, rng);
            CHECK(dist(forward_kinematics(m, q).ee, complex_fk(m, q.angles)) <= 1e-12);
        }
    }
}

TEST_CASE("forward kinematics rejects out-of-limit joints by index") {
    const ArmModel m = four_link();
    try {
        forward_kinematics(m, JointState{{0, 0, 2.7, 0}});
        FAIL("expected LimitViolation");
    } catch (const LimitViolation& e) {
        CHECK(e.joint() == 2);
    }
}

TEST_CASE("appending a zero-length link leaves the end effector unchanged") {
    Rng rng(11);
    ArmModel m = make_arm(RobotId::Sawyer);
    ArmModel longer = m;
    longer.link_lengths.push_back(0.0);
    longer.link_widths.push_back(0.03);
    longer.joint_limits.push_back({-2.6, 2.6});
    for (int i = 0; i < 200; ++i) {
        JointState q = random_joints(m, rng);
        const EEPose a = forward_kinematics(m, q).ee;
        q.angles.push_back(rng.uniform(-2.6, 2.6));
        CHECK(forward_kinematics(longer, q).ee == a);
    }
}

TEST_CASE("rotating the first joint rotates the end effector about the base") {
    Rng rng(12);
    const ArmModel m = make_arm(RobotId::Jaco);
    for (int i = 0; i < 200; ++i) {
        JointState q = random_joints(m, rng);
        q.angles[0] = rng.uniform(-2.0, 2.0);
        const double delta = rng.uniform(-0.5, 0.5);
        const Vec2 r = forward_kinematics(m, q).ee - m.base;
        q.angles[0] += delta;
        const Vec2 rotated = forward_kinematics(m, q).ee - m.base;
        const double c = std::cos(delta), s = std::sin(delta);
        CHECK(dist(rotated, {c * r.x - s * r.y, s * r.x + c * r.y}) <= 1e-12);
    }
}

TEST_CASE("inverse kinematics at full extension returns the zero pose") {
    const ArmModel m = four_link();
    const JointState zero{{0, 0, 0, 0}};
    const JointState q = inverse_kinematics(m, m.base + Vec2{m.reach(), 0.0}, zero);
    CHECK(q == zero);
}

TEST_CASE("inverse kinematics reports unreachable targets") {
    const ArmModel m = four_link();
    const JointState zero{{0, 0, 0, 0}};
    try {
        inverse_kinematics(m, {0.0, 0.9}, zero);  // 1.7 from the base, reach 0.85
        FAIL("expected NotConverged");
    } catch (const NotConverged& e) {
        CHECK(e.residual() > 0.8);
    }
    CHECK_THROWS_AS(inverse_kinematics(m, {1.5, 0.0}, zero), ConfigError);
}

TEST_CASE("inverse kinematics round-trips reachable targets") {
    Rng rng(21);
    for (RobotId id : kAllRobots) {
        const ArmModel m = make_arm(id);
        for (int i = 0; i < 100; ++i) {
            const JointState truth = random_joints(m, rng);
            const EEPose target = forward_kinematics(m, truth).ee;
            if (std::abs(target.x) > 1.0 || std::abs(target.y) > 1.0) continue;
            JointState seed = truth;
            for (std::size_t j = 0; j < seed.angles.size(); ++j) {
                seed.angles[j] = std::clamp(seed.angles[j] + rng.uniform(-0.1, 0.1), -2.6, 2.6);
            }
            const JointState q = inverse_kinematics(m, target, seed);
            CHECK(dist(forward_kinematics(m, q).ee, target) <= 1e-6);
        }
    }
}

TEST_CASE("render is deterministic and thread-count independent") {
    const ArmModel m = four_link();
    Rng rng(3);
    const RenderConfig cfg = randomize_domain(rng, RenderConfig{});
    const JointState q{{0.3, -0.5, 0.9, 0.2}};
    const Image a = render(m, q, cfg);
    CHECK(a == render(m, q, cfg));
    CHECK(a == render(m, q, cfg, 4));
    for (float v : a.data) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("arm colored like the background renders a uniform image") {
    const ArmModel m = four_link();
    RenderConfig cfg;
    cfg.arm_color = cfg.background_color = {0.4, 0.6, 0.8};
    cfg.brightness = 1.2;
    const Image img = render(m, JointState{{0.5, 0.5, 0.5, 0.5}}, cfg);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            CHECK(img.at(y, x, 0) == static_cast<float>(0.4 * 1.2));
            CHECK(img.at(y, x, 1) == static_cast<float>(0.6 * 1.2));
            CHECK(img.at(y, x, 2) == static_cast<float>(std::min(1.0, 0.8 * 1.2)));
        }
    }
}

TEST_CASE("rasterized arm pixels equal a brute-force point-in-capsule test") {
    const ArmModel m = four_link();
    RenderConfig cfg;
    cfg.arm_color = {1.0, 1.0, 1.0};
    cfg.background_color = {0.0, 0.0, 0.0};

    const std::vector<JointState> poses = {JointState{{0, 0, 0, 0}}, JointState{{1.2, -0.7, 0.4, 1.9}}};
    for (const JointState& q : poses) {
        const Image img = render(m, q, cfg);
        // Oracle: link segments from complex arithmetic; inside iff the
        // distance to the segment (perpendicular or to an endpoint) is <= w/2.
        std::vector<std::complex<double>> pts{{m.base.x, m.base.y}};
        double theta = 0.0;
        for (std::size_t i = 0; i < m.joint_count(); ++i) {
            theta += q.angles[i];
            pts.push_back(pts.back() + std::polar(m.link_lengths[i], theta));
        }
        int arm_pixels = 0;
        for (int py = 0; py < 64; ++py) {
            for (int px = 0; px < 64; ++px) {
                const std::complex<double> p((px + 0.5) / 32.0 - 1.0, 1.0 - (py + 0.5) / 32.0);
                bool inside = false;
                for (std::size_t i = 0; i < m.joint_count(); ++i) {
                    const std::complex<double> a = pts[i], b = pts[i + 1];
                    const std::complex<double> rel = (p - a) / (b - a);  // segment frame, b - a -> 1
                    double d;
                    if (rel.real() < 0.0) {
                        d = std::abs(p - a);
                    } else if (rel.real() > 1.0) {
                        d = std::abs(p - b);
                    } else {
                        d = std::abs(rel.imag()) * std::abs(b - a);
                    }
                    inside = inside || d <= 0.5 * m.link_widths[i];
                }
                arm_pixels += inside;
                CHECK_MESSAGE((img.at(py, px, 0) == 1.0f) == inside, "pixel " << px << "," << py);
            }
        }
        CHECK(arm_pixels > 20);
    }
}

TEST_CASE("domain randomization is seeded, in range and draws a fixed count") {
    Rng a(42), b(42);
    CHECK(randomize_domain(a, RenderConfig{}) == randomize_domain(b, RenderConfig{}));

    Rng counted(99), reference(99);
    randomize_domain(counted, RenderConfig{});
    for (int i = 0; i < kRandomizeDomainDraws; ++i) reference.next();
    CHECK(counted.next() == reference.next());

    Rng rng(5);
    double scale_sum = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const RenderConfig c = randomize_domain(rng, RenderConfig{});
        for (double v : {c.arm_color.r, c.arm_color.g, c.arm_color.b, c.background_color.r, c.background_color.g,
                         c.background_color.b}) {
            CHECK((v >= 0.0 && v <= 1.0));
        }
        const double contrast = std::max({std::abs(c.arm_color.r - c.background_color.r),
                                          std::abs(c.arm_color.g - c.background_color.g),
                                          std::abs(c.arm_color.b - c.background_color.b)});
        CHECK(contrast >= kMinColorContrast);
        CHECK(std::abs(c.camera_offset.x) <= 0.1);
        CHECK(std::abs(c.camera_offset.y) <= 0.1);
        CHECK((c.camera_scale >= 0.9 && c.camera_scale <= 1.1));
        CHECK((c.brightness >= 0.7 && c.brightness <= 1.3));
        CHECK(c.height == 64);
        scale_sum += c.camera_scale;
    }
    CHECK(std::abs(scale_sum / 1000.0 - 1.0) <= 0.01);
}
