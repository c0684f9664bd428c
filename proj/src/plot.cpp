#include "gtanet/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <set>

namespace gtanet {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

std::string render_svg(const PoseSequence& seq, const PlotOptions& options) {
    seq.validate();
    if (options.max_panels == 0 || !(options.panel_size > 0.0)) throw std::invalid_argument("plot: invalid options");
    const std::size_t j = seq.joints();
    const bool image_axes = seq.dims == 2;

    std::vector<std::size_t> frames;
    const std::size_t panels = std::min(options.max_panels, seq.frames);
    for (std::size_t p = 0; p < panels; ++p) {
        frames.push_back(panels == 1 ? 0 : p * (seq.frames - 1) / (panels - 1));
    }

    // 2D: image coordinates already grow downwards. 3D: flip y.
    auto point = [&](std::size_t t, std::size_t joint) {
        const double x = seq.at(t, joint, 0);
        const double y = seq.at(t, joint, 1);
        return std::pair<double, double>{x, image_axes ? y : -y};
    };
    double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x, lo_y = lo_x, hi_y = -lo_x;
    for (auto t : frames) {
        for (std::size_t i = 0; i < j; ++i) {
            const auto [x, y] = point(t, i);
            lo_x = std::min(lo_x, x);
            hi_x = std::max(hi_x, x);
            lo_y = std::min(lo_y, y);
            hi_y = std::max(hi_y, y);
        }
    }
    const double extent = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
    const double margin = 0.1 * options.panel_size;
    const double scale = (options.panel_size - 2.0 * margin) / extent;
    const double cx = 0.5 * (lo_x + hi_x), cy = 0.5 * (lo_y + hi_y);

    std::set<std::size_t> left, right;
    for (auto [l, r] : seq.topology.left_right_pairs) {
        left.insert(l);
        right.insert(r);
    }
    auto side = [&](std::size_t joint) -> const char* {
        if (left.contains(joint)) return "left";
        if (right.contains(joint)) return "right";
        return "center";
    };

    const double width = options.panel_size * static_cast<double>(frames.size());
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
           fmt(options.panel_size) + "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(options.panel_size) + "\">\n";
    svg += "<style>line{stroke-width:2}.left{stroke:#1f77b4}.right{stroke:#d62728}.center{stroke:#444}"
           "circle{fill:#222}</style>\n";
    for (std::size_t p = 0; p < frames.size(); ++p) {
        const std::size_t t = frames[p];
        const double ox = options.panel_size * (static_cast<double>(p) + 0.5);
        const double oy = 0.5 * options.panel_size;
        auto px = [&](std::size_t joint) {
            const auto [x, y] = point(t, joint);
            return std::pair<double, double>{ox + (x - cx) * scale, oy + (y - cy) * scale};
        };
        svg += "<g data-frame=\"" + std::to_string(t) + "\">\n";
        for (const auto& b : seq.topology.bones()) {
            const auto [x1, y1] = px(b.parent);
            const auto [x2, y2] = px(b.child);
            svg += "<line class=\"" + std::string(side(b.child)) + "\" x1=\"" + fmt(x1) + "\" y1=\"" + fmt(y1) +
                   "\" x2=\"" + fmt(x2) + "\" y2=\"" + fmt(y2) + "\"/>\n";
        }
        for (std::size_t i = 0; i < j; ++i) {
            const auto [x, y] = px(i);
            svg += "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"" + fmt(options.joint_radius) + "\"/>\n";
        }
        svg += "</g>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace gtanet
