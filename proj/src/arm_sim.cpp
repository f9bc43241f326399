#include "imitate/arm_sim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "imitate/errors.hpp"

namespace imitate {

namespace {

constexpr double kJointLimit = 2.6;

std::vector<double> tapered_widths(std::size_t k) {
    std::vector<double> w(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double u = k == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(k - 1);
        w[i] = 0.06 + (0.03 - 0.06) * u;
    }
    return w;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Rgb clamp01(Rgb c) { return {clamp01(c.r), clamp01(c.g), clamp01(c.b)}; }

Rgb sample_rgb(Rng& rng) {
    const double r = rng.uniform();
    const double g = rng.uniform();
    const double b = rng.uniform();
    return {r, g, b};
}

double max_channel_diff(Rgb a, Rgb b) {
    return std::max({std::abs(a.r - b.r), std::abs(a.g - b.g), std::abs(a.b - b.b)});
}

struct Capsule {
    Vec2 a;
    Vec2 b;
    double radius;
    Rgb color;
};

bool inside_capsule(const Capsule& c, Vec2 p) {
    const Vec2 ab = c.b - c.a;
    const Vec2 ap = p - c.a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = len2 > 0.0 ? (ap.x * ab.x + ap.y * ab.y) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = ap.x - t * ab.x;
    const double dy = ap.y - t * ab.y;
    return dx * dx + dy * dy <= c.radius * c.radius;
}

void render_row(const std::vector<Capsule>& caps, const RenderConfig& cfg, Rgb background, int py,
                Image& img) {
    for (int px = 0; px < cfg.width; ++px) {
        const Vec2 p = pixel_to_world(cfg, px, py);
        Rgb c = background;
        for (const Capsule& cap : caps) {
            if (inside_capsule(cap, p)) c = cap.color;
        }
        img.at(py, px, 0) = static_cast<float>(clamp01(c.r * cfg.brightness));
        img.at(py, px, 1) = static_cast<float>(clamp01(c.g * cfg.brightness));
        img.at(py, px, 2) = static_cast<float>(clamp01(c.b * cfg.brightness));
    }
}

}  // namespace

std::string_view robot_name(RobotId id) {
    switch (id) {
        case RobotId::Panda: return "panda";
        case RobotId::Sawyer: return "sawyer";
        case RobotId::IIWA: return "iiwa";
        case RobotId::Jaco: return "jaco";
    }
    return "unknown";
}

RobotId parse_robot(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    for (RobotId id : kAllRobots) {
        if (robot_name(id) == lower) return id;
    }
    throw ConfigError("unknown robot '" + std::string(name) + "' (expected panda, sawyer, iiwa or jaco)");
}

RobotId robot_from_byte(std::uint8_t b) {
    if (b > static_cast<std::uint8_t>(RobotId::Jaco)) {
        throw ParseError(ParseError::Kind::Malformed, "invalid robot id byte " + std::to_string(b));
    }
    return static_cast<RobotId>(b);
}

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

double ArmModel::reach() const {
    double s = 0.0;
    for (double l : link_lengths) s += l;
    return s;
}

void ArmModel::validate() const {
    const std::size_t k = link_lengths.size();
    if (k < 3 || k > kMaxLinks) throw ConfigError("arm must have 3 to 5 links");
    if (link_widths.size() != k || joint_limits.size() != k) {
        throw ConfigError("link widths and joint limits must match the link count");
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (!(link_lengths[i] > 0.0) || !(link_widths[i] > 0.0)) {
            throw ConfigError("link " + std::to_string(i) + " has non-positive length or width");
        }
        const JointLimit& lim = joint_limits[i];
        if (!(lim.lo < lim.hi) || lim.lo < -std::numbers::pi || lim.hi > std::numbers::pi) {
            throw ConfigError("joint " + std::to_string(i) + " has invalid limits");
        }
    }
    if (reach() > 0.95) throw ConfigError("total link length exceeds 0.95");
}

ArmModel make_arm(RobotId id) {
    ArmModel m;
    m.robot_id = id;
    switch (id) {
        case RobotId::Panda: m.link_lengths = {0.30, 0.25, 0.20, 0.10}; break;
        case RobotId::Sawyer: m.link_lengths = {0.35, 0.30, 0.15}; break;
        case RobotId::IIWA: m.link_lengths = {0.25, 0.20, 0.20, 0.15, 0.10}; break;
        case RobotId::Jaco: m.link_lengths = {0.28, 0.28, 0.14, 0.10}; break;
    }
    m.link_widths = tapered_widths(m.link_lengths.size());
    m.base = {0.0, -0.8};
    m.joint_limits.assign(m.link_lengths.size(), JointLimit{-kJointLimit, kJointLimit});
    return m;
}

FkResult forward_kinematics_unchecked(const ArmModel& model, const JointState& joints) {
    const std::size_t k = model.joint_count();
    if (joints.angles.size() != k) {
        throw ConfigError("expected " + std::to_string(k) + " joint angles, got " +
                          std::to_string(joints.angles.size()));
    }
    FkResult out;
    out.chain.reserve(k + 1);
    out.chain.push_back(model.base);
    Vec2 p = model.base;
    double theta = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        theta += joints.angles[i];
        p = p + model.link_lengths[i] * Vec2{std::cos(theta), std::sin(theta)};
        out.chain.push_back(p);
    }
    out.ee = p;
    return out;
}

FkResult forward_kinematics(const ArmModel& model, const JointState& joints) {
    for (std::size_t i = 0; i < joints.angles.size() && i < model.joint_limits.size(); ++i) {
        const JointLimit& lim = model.joint_limits[i];
        const double a = joints.angles[i];
        if (!(a >= lim.lo && a <= lim.hi)) throw LimitViolation(i, a, lim.lo, lim.hi);
    }
    return forward_kinematics_unchecked(model, joints);
}

namespace {

/// One damped-least-squares descent from `q`. Returns true on convergence,
/// leaving the solution in `q`; `best` tracks the smallest residual seen.
bool dls_descent(const ArmModel& model, EEPose target, JointState& q, const IkOptions& opts, double& best) {
    const std::size_t k = model.joint_count();
    const double lambda2 = opts.damping * opts.damping;
    std::vector<double> jx(k), jy(k), step(k);
    std::vector<bool> pinned(k);
    for (int iter = 0;; ++iter) {
        const FkResult fk = forward_kinematics_unchecked(model, q);
        const Vec2 err = target - fk.ee;
        const double residual = norm(err);
        best = std::min(best, residual);
        if (residual <= opts.tolerance) return true;
        if (iter >= opts.max_iters) return false;

        // Column i: rotating joint i swings everything past chain[i] about chain[i].
        for (std::size_t i = 0; i < k; ++i) {
            jx[i] = -(fk.ee.y - fk.chain[i].y);
            jy[i] = fk.ee.x - fk.chain[i].x;
        }
        // Joints pinned at a limit and pushed outward drop out of the
        // Jacobian; the step is re-solved over the rest.
        std::fill(pinned.begin(), pinned.end(), false);
        for (std::size_t pass = 0; pass <= k; ++pass) {
            double a = lambda2, b = 0.0, d = lambda2;
            for (std::size_t i = 0; i < k; ++i) {
                if (pinned[i]) continue;
                a += jx[i] * jx[i];
                b += jx[i] * jy[i];
                d += jy[i] * jy[i];
            }
            const double det = a * d - b * b;
            const double zx = (d * err.x - b * err.y) / det;
            const double zy = (a * err.y - b * err.x) / det;
            bool changed = false;
            for (std::size_t i = 0; i < k; ++i) {
                step[i] = pinned[i] ? 0.0 : jx[i] * zx + jy[i] * zy;
                const JointLimit& lim = model.joint_limits[i];
                const bool outward = (q.angles[i] >= lim.hi && step[i] > 0.0) || (q.angles[i] <= lim.lo && step[i] < 0.0);
                if (!pinned[i] && outward) {
                    pinned[i] = true;
                    changed = true;
                }
            }
            if (!changed) break;
        }
        for (std::size_t i = 0; i < k; ++i) {
            const double s = std::clamp(step[i], -opts.max_step, opts.max_step);
            q.angles[i] = std::clamp(q.angles[i] + s, model.joint_limits[i].lo, model.joint_limits[i].hi);
        }
    }
}

JointState project(const ArmModel& model, JointState q) {
    for (std::size_t i = 0; i < q.angles.size(); ++i) {
        q.angles[i] = std::clamp(q.angles[i], model.joint_limits[i].lo, model.joint_limits[i].hi);
    }
    return q;
}

}  // namespace

JointState inverse_kinematics(const ArmModel& model, EEPose target, const JointState& seed,
                              const IkOptions& opts) {
    if (!(std::abs(target.x) <= 1.0 && std::abs(target.y) <= 1.0)) {
        throw ConfigError("IK target outside the [-1,1]^2 workspace");
    }
    const std::size_t k = model.joint_count();
    if (seed.angles.size() != k) throw ConfigError("IK seed has the wrong joint count");

    double best = INFINITY;
    JointState q = project(model, seed);
    if (dls_descent(model, target, q, opts, best)) return q;

    // A straight or folded seed can park the descent on a singular
    // stationary point. Retry from bent copies of the seed.
    for (int r = 0; r < opts.restarts; ++r) {
        const double sign = (r % 2 == 0) ? 1.0 : -1.0;
        const double mag = opts.restart_bend * static_cast<double>(r / 2 + 1);
        JointState bent = seed;
        for (std::size_t i = 0; i < k; ++i) {
            bent.angles[i] += (i % 2 == 0 || r >= 2 ? sign : -sign) * mag;
        }
        q = project(model, bent);
        if (dls_descent(model, target, q, opts, best)) return q;
    }
    throw NotConverged(best);
}

Vec2 pixel_to_world(const RenderConfig& cfg, int px, int py) {
    const double nx = (px + 0.5) / cfg.width * 2.0 - 1.0;
    const double ny = 1.0 - (py + 0.5) / cfg.height * 2.0;
    return {nx / cfg.camera_scale + cfg.camera_offset.x, ny / cfg.camera_scale + cfg.camera_offset.y};
}

Image render(const ArmModel& model, const JointState& joints, const RenderConfig& cfg, int threads) {
    const FkResult fk = forward_kinematics_unchecked(model, joints);
    std::vector<Capsule> caps;
    caps.reserve(model.joint_count());
    for (std::size_t i = 0; i < model.joint_count(); ++i) {
        const Rgb jitter = i < kMaxLinks ? cfg.per_link_color_jitter[i] : Rgb{};
        const Rgb color = clamp01(Rgb{cfg.arm_color.r + jitter.r, cfg.arm_color.g + jitter.g,
                                      cfg.arm_color.b + jitter.b});
        caps.push_back({fk.chain[i], fk.chain[i + 1], 0.5 * model.link_widths[i], color});
    }
    const Rgb background = clamp01(cfg.background_color);

    Image img(cfg.height, cfg.width);
    if (threads <= 1) {
        for (int py = 0; py < cfg.height; ++py) render_row(caps, cfg, background, py, img);
    } else {
#pragma omp parallel for num_threads(threads) schedule(static)
        for (int py = 0; py < cfg.height; ++py) render_row(caps, cfg, background, py, img);
    }
    return img;
}

RenderConfig randomize_domain(Rng& rng, const RenderConfig& base) {
    RenderConfig cfg = base;
    Rng child(rng.next());
    do {
        cfg.arm_color = sample_rgb(child);
        cfg.background_color = sample_rgb(child);
    } while (max_channel_diff(cfg.arm_color, cfg.background_color) < kMinColorContrast);
    for (Rgb& j : cfg.per_link_color_jitter) {
        j.r = child.uniform(-kColorJitter, kColorJitter);
        j.g = child.uniform(-kColorJitter, kColorJitter);
        j.b = child.uniform(-kColorJitter, kColorJitter);
    }
    cfg.camera_offset.x = rng.uniform(-0.1, 0.1);
    cfg.camera_offset.y = rng.uniform(-0.1, 0.1);
    cfg.camera_scale = rng.uniform(0.9, 1.1);
    cfg.brightness = rng.uniform(0.7, 1.3);
    return cfg;
}

}  // namespace imitate
