#pragma once

#include "gtanet/pose_io.hpp"
#include "gtanet/skeleton.hpp"
#include "gtanet/tensor.hpp"

#include "json.hpp"

#include <array>
#include <vector>

namespace gtanet {

// theta(t) = amplitude * sin(2 pi frequency t + phase), per Euler axis (radians, Hz).
struct JointMotion {
    std::array<double, 3> amplitude{};
    std::array<double, 3> frequency{};
    std::array<double, 3> phase{};
};

struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t frames = 200;
    double fps = 50.0;
    SkeletonTopology topology = SkeletonTopology::h36m17();
    // Offset of each joint from its parent in the parent's rest frame (mm, y up).
    // Empty selects the built-in human proportions (h36m17 only).
    std::vector<std::array<double, 3>> rest_offsets;
    // Explicit per-joint motion; empty draws it from the seed.
    std::vector<JointMotion> motion;
    double amplitude_rad = 0.4;  // upper bound of drawn amplitudes
    double min_frequency_hz = 0.1;
    double max_frequency_hz = 0.6;
    PinholeCamera camera;
    double camera_distance_mm = 4500.0;  // depth of the root at rest
    double camera_yaw_deg = 0.0;         // subject rotation about the vertical axis
    std::string action = "synthetic";

    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; only scalar fields are read.
    static SynthConfig from_json(const nlohmann::json& j);
};

std::vector<std::array<double, 3>> default_rest_offsets(const SkeletonTopology& topo);
double mean_bone_length(const SkeletonTopology& topo, const std::vector<std::array<double, 3>>& offsets);

struct SynthResult {
    PoseSequence gt3d;   // camera frame, mm
    PoseSequence obs2d;  // normalized image coordinates
};

// Throws std::domain_error if any joint ends up behind the camera.
SynthResult synth_generate(const SynthConfig& config);

// Gaussian jitter on every coordinate plus uniform outliers in [0, 1]^2.
// With outlier_rate > 0 a confidence channel is attached (1 inliers, 0.1 outliers).
PoseSequence add_detector_noise(const PoseSequence& obs2d, double sigma, double outlier_rate, Rng& rng);

}  // namespace gtanet
