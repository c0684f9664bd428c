#include "gtanet/pose_io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <iterator>

namespace gtanet {

namespace {

constexpr int kSchemaVersion = 1;
constexpr char kBinaryMagic[4] = {'G', 'P', 'S', 'Q'};
constexpr std::uint16_t kBinaryVersion = 1;

nlohmann::json header_json(const PoseSequence& seq) {
    nlohmann::json topo;
    bool is_builtin = false;
    try {
        is_builtin = SkeletonTopology::builtin(seq.topology.name) == seq.topology;
    } catch (const std::exception&) {
    }
    topo = is_builtin ? nlohmann::json(seq.topology.name) : seq.topology.to_json();
    nlohmann::json h = {
        {"schema_version", kSchemaVersion},
        {"topology", topo},
        {"fps", seq.fps},
        {"units", units_name(seq.units)},
        {"dims", seq.dims},
        {"action", seq.action},
        {"frames", seq.frames},
        {"joints", seq.joints()},
        {"has_confidence", seq.has_confidence()},
    };
    if (seq.camera) h["camera"] = seq.camera->to_json();
    return h;
}

// Fills every field except the value arrays.
PoseSequence parse_header(const nlohmann::json& h) {
    static const std::set<std::string> known = {"schema_version", "topology", "fps",    "units",         "dims",
                                                 "action",         "frames",   "joints", "has_confidence", "camera"};
    if (!h.is_object()) throw PoseFormatError("pose header must be a JSON object");
    for (auto it = h.begin(); it != h.end(); ++it) {
        if (!known.contains(it.key())) throw PoseFormatError("unknown pose header key '" + it.key() + "'");
    }
    try {
        const int version = h.at("schema_version").get<int>();
        if (version != kSchemaVersion) {
            throw PoseFormatError("unsupported pose schema_version " + std::to_string(version));
        }
        PoseSequence seq;
        const auto& topo = h.at("topology");
        seq.topology = topo.is_string() ? SkeletonTopology::builtin(topo.get<std::string>())
                                        : SkeletonTopology::from_json(topo);
        seq.fps = h.at("fps").get<double>();
        seq.units = parse_units(h.at("units").get<std::string>());
        seq.dims = h.at("dims").get<std::size_t>();
        seq.action = h.value("action", std::string("unknown"));
        seq.frames = h.at("frames").get<std::size_t>();
        if (h.at("joints").get<std::size_t>() != seq.joints()) {
            throw PoseFormatError("header declares " + std::to_string(h.at("joints").get<std::size_t>()) +
                                  " joints but topology '" + seq.topology.name + "' has " +
                                  std::to_string(seq.joints()));
        }
        if (seq.dims != 2 && seq.dims != 3) throw PoseFormatError("dims must be 2 or 3, got " + std::to_string(seq.dims));
        if (h.at("has_confidence").get<bool>()) seq.confidence.assign(seq.frames * seq.joints(), 0.0);
        if (h.contains("camera")) seq.camera = PinholeCamera::from_json(h.at("camera"));
        return seq;
    } catch (const nlohmann::json::exception& e) {
        throw PoseFormatError(std::string("malformed pose header: ") + e.what());
    }
}

}  // namespace

std::string units_name(Units u) {
    switch (u) {
        case Units::mm: return "mm";
        case Units::m: return "m";
        case Units::normalized: return "normalized";
        case Units::px: return "px";
    }
    return "?";
}

Units parse_units(const std::string& s) {
    if (s == "mm") return Units::mm;
    if (s == "m") return Units::m;
    if (s == "normalized") return Units::normalized;
    if (s == "px") return Units::px;
    throw PoseFormatError("unknown units '" + s + "' (expected mm, m, normalized or px)");
}

nlohmann::json PinholeCamera::to_json() const {
    return {{"fx", fx}, {"fy", fy}, {"cx", cx}, {"cy", cy}, {"width", width}, {"height", height}};
}

PinholeCamera PinholeCamera::from_json(const nlohmann::json& j) {
    PinholeCamera c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<double>();
    c.height = j.at("height").get<double>();
    if (!(c.fx > 0 && c.fy > 0 && c.width > 0 && c.height > 0)) {
        throw PoseFormatError("camera focal lengths and image size must be positive");
    }
    return c;
}

std::array<double, 2> project_normalized(const PinholeCamera& cam, const std::array<double, 3>& p) {
    if (!(p[2] > 0.0)) throw std::domain_error("point behind camera (z = " + std::to_string(p[2]) + " mm)");
    const double u = cam.fx * p[0] / p[2] + cam.cx;
    const double v = cam.cy - cam.fy * p[1] / p[2];
    return {u / cam.width, v / cam.height};
}

void PoseSequence::validate() const {
    topology.validate();
    if (dims != 2 && dims != 3) throw std::invalid_argument("pose dims must be 2 or 3, got " + std::to_string(dims));
    if (frames == 0) throw std::invalid_argument("pose sequence has no frames");
    if (values.size() != frames * joints() * dims) {
        throw std::invalid_argument("pose values hold " + std::to_string(values.size()) + " numbers, expected " +
                                    std::to_string(frames * joints() * dims));
    }
    if (!confidence.empty() && confidence.size() != frames * joints()) {
        throw std::invalid_argument("confidence must hold one value per joint and frame");
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument("pose values contain NaN or infinity");
    }
    for (double v : confidence) {
        if (!std::isfinite(v)) throw std::invalid_argument("confidence contains NaN or infinity");
    }
    if (!(fps > 0.0)) throw std::invalid_argument("fps must be positive");
}

Tensor PoseSequence::to_tensor(bool with_confidence) const {
    if (!with_confidence) return Tensor::from({frames, joints(), dims}, values);
    if (confidence.empty()) throw std::invalid_argument("sequence has no confidence channel");
    std::vector<double> out;
    out.reserve(frames * joints() * (dims + 1));
    for (std::size_t i = 0; i < frames * joints(); ++i) {
        for (std::size_t d = 0; d < dims; ++d) out.push_back(values[i * dims + d]);
        out.push_back(confidence[i]);
    }
    return Tensor::from({frames, joints(), dims + 1}, std::move(out));
}

PoseSequence PoseSequence::slice(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > frames) throw std::out_of_range("slice: bad frame range");
    PoseSequence out = *this;
    const std::size_t row = joints() * dims;
    out.frames = end - begin;
    out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * row),
                      values.begin() + static_cast<std::ptrdiff_t>(end * row));
    if (!confidence.empty()) {
        out.confidence.assign(confidence.begin() + static_cast<std::ptrdiff_t>(begin * joints()),
                              confidence.begin() + static_cast<std::ptrdiff_t>(end * joints()));
    }
    return out;
}

std::vector<double> PoseSequence::values_mm() const {
    if (dims != 3) throw std::invalid_argument("expected a 3D sequence");
    if (units == Units::mm) return values;
    if (units == Units::m) {
        std::vector<double> out(values);
        for (auto& v : out) v *= 1000.0;
        return out;
    }
    throw std::invalid_argument("3D sequence must be in mm or m, got " + units_name(units));
}

nlohmann::json pose_to_json(const PoseSequence& seq) {
    seq.validate();
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t t = 0; t < seq.frames; ++t) {
        nlohmann::json frame = nlohmann::json::array();
        for (std::size_t j = 0; j < seq.joints(); ++j) {
            nlohmann::json p = nlohmann::json::array();
            for (std::size_t d = 0; d < seq.dims; ++d) p.push_back(seq.at(t, j, d));
            frame.push_back(std::move(p));
        }
        frames.push_back(std::move(frame));
    }
    nlohmann::json out = {{"header", header_json(seq)}, {"frames", std::move(frames)}};
    if (seq.has_confidence()) {
        nlohmann::json conf = nlohmann::json::array();
        for (std::size_t t = 0; t < seq.frames; ++t) {
            conf.push_back(std::vector<double>(seq.confidence.begin() + static_cast<std::ptrdiff_t>(t * seq.joints()),
                                               seq.confidence.begin() + static_cast<std::ptrdiff_t>((t + 1) * seq.joints())));
        }
        out["confidence"] = std::move(conf);
    }
    return out;
}

PoseSequence pose_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("header") || !j.contains("frames")) {
        throw PoseFormatError("pose JSON must contain 'header' and 'frames'");
    }
    PoseSequence seq = parse_header(j.at("header"));
    try {
        const auto& frames = j.at("frames");
        if (!frames.is_array() || frames.size() != seq.frames) {
            throw PoseFormatError("pose JSON declares " + std::to_string(seq.frames) + " frames but holds " +
                                  std::to_string(frames.size()));
        }
        seq.values.reserve(seq.frames * seq.joints() * seq.dims);
        for (std::size_t t = 0; t < seq.frames; ++t) {
            const auto& frame = frames[t];
            if (!frame.is_array() || frame.size() != seq.joints()) {
                throw PoseFormatError("frame " + std::to_string(t) + " does not hold " + std::to_string(seq.joints()) +
                                      " joints");
            }
            for (std::size_t jj = 0; jj < seq.joints(); ++jj) {
                const auto& p = frame[jj];
                if (!p.is_array() || p.size() != seq.dims) {
                    throw PoseFormatError("frame " + std::to_string(t) + " joint " + std::to_string(jj) + " does not hold " +
                                          std::to_string(seq.dims) + " coordinates");
                }
                for (const auto& v : p) seq.values.push_back(v.get<double>());
            }
        }
        if (seq.has_confidence()) {
            const auto& conf = j.at("confidence");
            if (!conf.is_array() || conf.size() != seq.frames) throw PoseFormatError("confidence frame count mismatch");
            for (std::size_t t = 0; t < seq.frames; ++t) {
                const auto row = conf[t].get<std::vector<double>>();
                if (row.size() != seq.joints()) throw PoseFormatError("confidence joint count mismatch");
                std::copy(row.begin(), row.end(), seq.confidence.begin() + static_cast<std::ptrdiff_t>(t * seq.joints()));
            }
        } else if (j.contains("confidence")) {
            throw PoseFormatError("confidence present but header says has_confidence = false");
        }
    } catch (const nlohmann::json::exception& e) {
        throw PoseFormatError(std::string("malformed pose JSON: ") + e.what());
    }
    try {
        seq.validate();
    } catch (const std::invalid_argument& e) {
        throw PoseFormatError(e.what());
    }
    return seq;
}

std::vector<std::uint8_t> pose_to_binary(const PoseSequence& seq) {
    seq.validate();
    ByteWriter w;
    w.bytes(std::string_view(kBinaryMagic, 4));
    w.u16le(kBinaryVersion);
    const std::string header = header_json(seq).dump();
    w.u32le(static_cast<std::uint32_t>(header.size()));
    w.bytes(header);
    for (double v : seq.values) w.f64le(v);
    for (double v : seq.confidence) w.f64le(v);
    return w.take();
}

PoseSequence pose_from_binary(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "pose file");
    if (r.str(4) != std::string_view(kBinaryMagic, 4)) r.fail("bad magic, not a GPSQ pose file");
    const auto version = r.u16le();
    if (version != kBinaryVersion) r.fail("unsupported pose file version " + std::to_string(version));
    const auto header_len = r.u32le();
    const auto header_text = r.str(header_len);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw PoseFormatError(std::string("pose file header is not valid JSON: ") + e.what());
    }
    PoseSequence seq = parse_header(header);
    seq.values.resize(seq.frames * seq.joints() * seq.dims);
    for (auto& v : seq.values) v = r.f64le();
    for (auto& v : seq.confidence) v = r.f64le();
    if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes after the frame block");
    try {
        seq.validate();
    } catch (const std::invalid_argument& e) {
        throw PoseFormatError(e.what());
    }
    return seq;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void save_pose(const std::filesystem::path& path, const PoseSequence& seq) {
    if (path.extension() == ".json") {
        write_text_file(path, pose_to_json(seq).dump() + "\n");
    } else {
        write_file_bytes(path, pose_to_binary(seq));
    }
}

PoseSequence load_pose(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (path.extension() == ".json") {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes.begin(), bytes.end());
        } catch (const nlohmann::json::exception& e) {
            throw PoseFormatError(path.string() + ": " + e.what());
        }
        return pose_from_json(j);
    }
    return pose_from_binary(bytes);
}

PoseSequence normalize_keypoints(const PoseSequence& pixels, double image_w, double image_h) {
    if (!(image_w > 0.0 && image_h > 0.0)) throw std::invalid_argument("image size must be positive");
    if (pixels.dims != 2) throw std::invalid_argument("normalize_keypoints expects 2D keypoints");
    PoseSequence out = pixels;
    for (std::size_t i = 0; i < out.values.size(); i += 2) {
        const double x = out.values[i];
        const double y = out.values[i + 1];
        if (x < -0.5 * image_w || x > 1.5 * image_w || y < -0.5 * image_h || y > 1.5 * image_h) {
            throw std::out_of_range("keypoint (" + std::to_string(x) + ", " + std::to_string(y) +
                                    ") lies far outside the image");
        }
        out.values[i] = x / image_w;
        out.values[i + 1] = y / image_h;
    }
    out.units = Units::normalized;
    return out;
}

PoseSequence denormalize_keypoints(const PoseSequence& normalized, double image_w, double image_h) {
    if (!(image_w > 0.0 && image_h > 0.0)) throw std::invalid_argument("image size must be positive");
    if (normalized.dims != 2) throw std::invalid_argument("denormalize_keypoints expects 2D keypoints");
    PoseSequence out = normalized;
    for (std::size_t i = 0; i < out.values.size(); i += 2) {
        out.values[i] *= image_w;
        out.values[i + 1] *= image_h;
    }
    out.units = Units::px;
    return out;
}

}  // namespace gtanet
