#pragma once

#include "gtanet/pose_io.hpp"

#include <string>

namespace gtanet {

struct PlotOptions {
    std::size_t max_panels = 8;
    double panel_size = 240.0;  // px
    double joint_radius = 3.0;
};

// Deterministic SVG of up to max_panels evenly spaced frames. Bones carry the
// stroke class "left", "right" or "center" after their child joint; 3D poses
// use a front orthographic view (x right, y up).
std::string render_svg(const PoseSequence& seq, const PlotOptions& options = {});

}  // namespace gtanet
