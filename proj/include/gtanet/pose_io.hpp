#pragma once

#include "gtanet/byte_io.hpp"
#include "gtanet/skeleton.hpp"
#include "gtanet/tensor.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gtanet {

enum class Units { mm, m, normalized, px };

std::string units_name(Units u);
Units parse_units(const std::string& s);

// Ideal pinhole intrinsics. Pixel v grows downwards, camera y grows upwards.
struct PinholeCamera {
    double fx = 1000.0;
    double fy = 1000.0;
    double cx = 500.0;
    double cy = 500.0;
    double width = 1000.0;
    double height = 1000.0;

    bool operator==(const PinholeCamera&) const = default;
    nlohmann::json to_json() const;
    static PinholeCamera from_json(const nlohmann::json& j);
};

// Camera-frame point (mm; x right, y up, z forward) to normalized image
// coordinates. Throws std::domain_error for z <= 0.
std::array<double, 2> project_normalized(const PinholeCamera& cam, const std::array<double, 3>& p);

struct PoseSequence {
    SkeletonTopology topology;
    double fps = 50.0;
    Units units = Units::normalized;
    std::size_t dims = 2;  // 2 or 3
    std::string action = "unknown";
    std::optional<PinholeCamera> camera;
    std::size_t frames = 0;
    std::vector<double> values;      // [T, J, dims]
    std::vector<double> confidence;  // empty or [T, J]

    std::size_t joints() const { return topology.joint_count(); }
    bool has_confidence() const { return !confidence.empty(); }
    double& at(std::size_t t, std::size_t j, std::size_t d) { return values[(t * joints() + j) * dims + d]; }
    double at(std::size_t t, std::size_t j, std::size_t d) const { return values[(t * joints() + j) * dims + d]; }

    // Throws std::invalid_argument on inconsistent shape, NaN, T = 0, D not in {2, 3}.
    void validate() const;
    // [T, J, D] or, with confidence, [T, J, D + 1].
    Tensor to_tensor(bool with_confidence = false) const;
    // Copy of frames [begin, end).
    PoseSequence slice(std::size_t begin, std::size_t end) const;
    // 3D values converted to mm.
    std::vector<double> values_mm() const;

    bool operator==(const PoseSequence&) const = default;
};

class PoseFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json pose_to_json(const PoseSequence& seq);
PoseSequence pose_from_json(const nlohmann::json& j);
std::vector<std::uint8_t> pose_to_binary(const PoseSequence& seq);
// Structural errors raise FormatError with the offending byte offset.
PoseSequence pose_from_binary(std::span<const std::uint8_t> bytes);

// Extension .json selects the text form; anything else the binary form.
void save_pose(const std::filesystem::path& path, const PoseSequence& seq);
PoseSequence load_pose(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Pixel <-> [0, 1] coordinates. Pixels outside [-0.5 dim, 1.5 dim] are rejected.
PoseSequence normalize_keypoints(const PoseSequence& pixels, double image_w, double image_h);
PoseSequence denormalize_keypoints(const PoseSequence& normalized, double image_w, double image_h);

}  // namespace gtanet
