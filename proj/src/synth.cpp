#include "gtanet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gtanet {

namespace {

using Vec3 = std::array<double, 3>;
using Rot = std::array<std::array<double, 3>, 3>;

Rot matmul3(const Rot& a, const Rot& b) {
    Rot out{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 3; ++k) out[i][j] += a[i][k] * b[k][j];
        }
    }
    return out;
}

Vec3 rotate(const Rot& r, const Vec3& v) {
    return {r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2], r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2]};
}

// Rz(c) Ry(b) Rx(a).
Rot euler(double a, double b, double c) {
    const double ca = std::cos(a), sa = std::sin(a);
    const double cb = std::cos(b), sb = std::sin(b);
    const double cc = std::cos(c), sc = std::sin(c);
    const Rot rx{{{1, 0, 0}, {0, ca, -sa}, {0, sa, ca}}};
    const Rot ry{{{cb, 0, sb}, {0, 1, 0}, {-sb, 0, cb}}};
    const Rot rz{{{cc, -sc, 0}, {sc, cc, 0}, {0, 0, 1}}};
    return matmul3(rz, matmul3(ry, rx));
}

std::vector<JointMotion> draw_motion(const SynthConfig& cfg) {
    Rng rng(cfg.seed);
    std::vector<JointMotion> out(cfg.topology.joint_count());
    for (auto& m : out) {
        for (int a = 0; a < 3; ++a) {
            m.amplitude[a] = rng.uniform(0.0, cfg.amplitude_rad);
            m.frequency[a] = rng.uniform(cfg.min_frequency_hz, cfg.max_frequency_hz);
            m.phase[a] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
    }
    return out;
}

}  // namespace

std::vector<std::array<double, 3>> default_rest_offsets(const SkeletonTopology& topo) {
    if (topo == SkeletonTopology::h36m17()) {
        return {{0, 0, 0},      {-130, 0, 0},   {0, -440, 0}, {0, -440, 0}, {130, 0, 0},  {0, -440, 0},
                {0, -440, 0},   {0, 230, 0},    {0, 250, 0},  {0, 110, 0},  {0, 110, 0},  {150, 0, 0},
                {0, -280, 0},   {0, -250, 0},   {-150, 0, 0}, {0, -280, 0}, {0, -250, 0}};
    }
    // Generic fallback: every bone points up by 200 mm, fanned out by child index.
    std::vector<std::array<double, 3>> out(topo.joint_count(), {0, 0, 0});
    for (const auto& b : topo.bones()) {
        const double angle = 0.5 * static_cast<double>(b.child);
        out[b.child] = {200.0 * std::sin(angle), 200.0 * std::cos(angle), 0.0};
    }
    return out;
}

double mean_bone_length(const SkeletonTopology& topo, const std::vector<std::array<double, 3>>& offsets) {
    double total = 0.0;
    for (const auto& b : topo.bones()) {
        const auto& o = offsets.at(b.child);
        total += std::sqrt(o[0] * o[0] + o[1] * o[1] + o[2] * o[2]);
    }
    return total / static_cast<double>(topo.bone_count());
}

void SynthConfig::validate() const {
    topology.validate();
    if (frames == 0) throw std::invalid_argument("synth: frames must be positive");
    if (!(fps > 0.0)) throw std::invalid_argument("synth: fps must be positive");
    if (!rest_offsets.empty()) {
        if (rest_offsets.size() != topology.joint_count()) {
            throw std::invalid_argument("synth: one rest offset per joint required");
        }
        for (const auto& b : topology.bones()) {
            const auto& o = rest_offsets[b.child];
            if (!(o[0] * o[0] + o[1] * o[1] + o[2] * o[2] > 0.0)) {
                throw std::invalid_argument("synth: bone lengths must be positive");
            }
        }
    }
    if (!motion.empty() && motion.size() != topology.joint_count()) {
        throw std::invalid_argument("synth: one motion entry per joint required");
    }
    if (amplitude_rad < 0.0 || min_frequency_hz < 0.0 || max_frequency_hz < min_frequency_hz) {
        throw std::invalid_argument("synth: invalid motion ranges");
    }
    if (!(camera_distance_mm > 0.0)) throw std::invalid_argument("synth: camera must be in front of the subject");
}

nlohmann::json SynthConfig::to_json() const {
    return {{"seed", seed},
            {"frames", frames},
            {"fps", fps},
            {"amplitude_rad", amplitude_rad},
            {"min_frequency_hz", min_frequency_hz},
            {"max_frequency_hz", max_frequency_hz},
            {"camera", camera.to_json()},
            {"camera_distance_mm", camera_distance_mm},
            {"camera_yaw_deg", camera_yaw_deg},
            {"action", action}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    SynthConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.frames = j.value("frames", c.frames);
        c.fps = j.value("fps", c.fps);
        c.amplitude_rad = j.value("amplitude_rad", c.amplitude_rad);
        c.min_frequency_hz = j.value("min_frequency_hz", c.min_frequency_hz);
        c.max_frequency_hz = j.value("max_frequency_hz", c.max_frequency_hz);
        if (j.contains("camera")) c.camera = PinholeCamera::from_json(j.at("camera"));
        c.camera_distance_mm = j.value("camera_distance_mm", c.camera_distance_mm);
        c.camera_yaw_deg = j.value("camera_yaw_deg", c.camera_yaw_deg);
        c.action = j.value("action", c.action);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed synth config: ") + e.what());
    }
    c.validate();
    return c;
}

SynthResult synth_generate(const SynthConfig& config) {
    config.validate();
    const auto& topo = config.topology;
    const std::size_t joints = topo.joint_count();
    const auto offsets = config.rest_offsets.empty() ? default_rest_offsets(topo) : config.rest_offsets;
    const auto motion = config.motion.empty() ? draw_motion(config) : config.motion;

    // Parents before children.
    std::vector<std::size_t> order;
    {
        std::vector<std::size_t> depth(joints, 0);
        for (std::size_t j = 0; j < joints; ++j) {
            for (int p = topo.parent[j]; p >= 0; p = topo.parent[static_cast<std::size_t>(p)]) ++depth[j];
            order.push_back(j);
        }
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return depth[a] < depth[b]; });
    }

    const double yaw = config.camera_yaw_deg * std::numbers::pi / 180.0;
    const Rot view = euler(0.0, yaw, 0.0);

    SynthResult out;
    out.gt3d.topology = topo;
    out.gt3d.fps = config.fps;
    out.gt3d.units = Units::mm;
    out.gt3d.dims = 3;
    out.gt3d.action = config.action;
    out.gt3d.camera = config.camera;
    out.gt3d.frames = config.frames;
    out.gt3d.values.resize(config.frames * joints * 3);
    out.obs2d = out.gt3d;
    out.obs2d.units = Units::normalized;
    out.obs2d.dims = 2;
    out.obs2d.values.resize(config.frames * joints * 2);

    std::vector<Rot> world_rot(joints);
    std::vector<Vec3> world_pos(joints);
    for (std::size_t t = 0; t < config.frames; ++t) {
        const double time = static_cast<double>(t) / config.fps;
        for (std::size_t j : order) {
            const auto& m = motion[j];
            double ang[3];
            for (int a = 0; a < 3; ++a) {
                ang[a] = m.amplitude[a] * std::sin(2.0 * std::numbers::pi * m.frequency[a] * time + m.phase[a]);
            }
            const Rot local = euler(ang[0], ang[1], ang[2]);
            const int p = topo.parent[j];
            if (p < 0) {
                world_rot[j] = matmul3(view, local);
                world_pos[j] = {0.0, 0.0, 0.0};
            } else {
                const auto pp = static_cast<std::size_t>(p);
                const Vec3 d = rotate(world_rot[pp], offsets[j]);
                world_pos[j] = {world_pos[pp][0] + d[0], world_pos[pp][1] + d[1], world_pos[pp][2] + d[2]};
                world_rot[j] = matmul3(world_rot[pp], local);
            }
        }
        for (std::size_t j = 0; j < joints; ++j) {
            const Vec3 cam{world_pos[j][0], world_pos[j][1], world_pos[j][2] + config.camera_distance_mm};
            const auto uv = project_normalized(config.camera, cam);
            for (int c = 0; c < 3; ++c) out.gt3d.values[(t * joints + j) * 3 + c] = cam[c];
            out.obs2d.values[(t * joints + j) * 2] = uv[0];
            out.obs2d.values[(t * joints + j) * 2 + 1] = uv[1];
        }
    }
    return out;
}

PoseSequence add_detector_noise(const PoseSequence& obs2d, double sigma, double outlier_rate, Rng& rng) {
    if (obs2d.dims != 2) throw std::invalid_argument("add_detector_noise expects 2D keypoints");
    if (sigma < 0.0 || outlier_rate < 0.0 || outlier_rate > 1.0) {
        throw std::invalid_argument("add_detector_noise: sigma must be >= 0 and outlier_rate in [0, 1]");
    }
    PoseSequence out = obs2d;
    const std::size_t n = out.frames * out.joints();
    if (outlier_rate > 0.0 && out.confidence.empty()) out.confidence.assign(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (outlier_rate > 0.0 && rng.bernoulli(outlier_rate)) {
            out.values[2 * i] = rng.uniform();
            out.values[2 * i + 1] = rng.uniform();
            out.confidence[i] = 0.1;
        } else if (sigma > 0.0) {
            out.values[2 * i] += rng.normal(0.0, sigma);
            out.values[2 * i + 1] += rng.normal(0.0, sigma);
        }
    }
    return out;
}

}  // namespace gtanet
