#include "gtanet/wire.hpp"

#include <string>

namespace gtanet {

std::size_t wire_dims(MsgType type) {
    switch (type) {
        case MsgType::keypoints2d: return 2;
        case MsgType::pose3d: return 3;
        case MsgType::end:
        case MsgType::error: return 0;
    }
    throw ProtocolError("unknown message type " + std::to_string(static_cast<int>(type)));
}

std::size_t payload_size(MsgType type, std::size_t joint_count) {
    return kWireHeaderBytes + joint_count * wire_dims(type) * 4;
}

std::vector<std::uint8_t> encode_frame(const WireFrame& frame) {
    const std::size_t dims = wire_dims(frame.type);
    if (frame.values.size() != static_cast<std::size_t>(frame.joint_count) * dims) {
        throw ProtocolError("frame carries " + std::to_string(frame.values.size()) + " values, expected " +
                            std::to_string(frame.joint_count * dims));
    }
    ByteWriter w;
    w.u32be(static_cast<std::uint32_t>(payload_size(frame.type, frame.joint_count)));
    w.bytes(std::string_view("GTAP"));
    w.u8(kWireVersion);
    w.u8(static_cast<std::uint8_t>(frame.type));
    w.u32be(frame.frame_index);
    w.u16be(frame.joint_count);
    for (float v : frame.values) w.f32le(v);
    return w.take();
}

WireFrame decode_payload(std::span<const std::uint8_t> payload) {
    try {
        ByteReader r(payload, "wire payload");
        if (r.str(4) != "GTAP") throw ProtocolError("bad magic");
        const auto version = r.u8();
        if (version != kWireVersion) throw ProtocolError("unsupported protocol version " + std::to_string(version));
        const auto type = r.u8();
        if (type < 1 || type > 4) throw ProtocolError("unknown message type " + std::to_string(type));
        WireFrame f;
        f.type = static_cast<MsgType>(type);
        f.frame_index = r.u32be();
        f.joint_count = r.u16be();
        const std::size_t expected = payload_size(f.type, f.joint_count);
        if (payload.size() != expected) {
            throw ProtocolError("payload is " + std::to_string(payload.size()) + " bytes, header implies " +
                                std::to_string(expected));
        }
        f.values.resize(static_cast<std::size_t>(f.joint_count) * wire_dims(f.type));
        for (auto& v : f.values) v = r.f32le();
        return f;
    } catch (const FormatError& e) {
        throw ProtocolError(e.what());
    }
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
    if (consumed_ > 0 && consumed_ == buffer_.size()) {
        buffer_.clear();
        consumed_ = 0;
    }
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<WireFrame> FrameDecoder::next() {
    if (pending() < 4) return std::nullopt;
    const std::uint8_t* p = buffer_.data() + consumed_;
    const std::uint32_t len = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
    if (len < kWireHeaderBytes || len > kMaxPayloadBytes) {
        throw ProtocolError("declared payload length " + std::to_string(len) + " is out of range");
    }
    if (pending() < 4 + static_cast<std::size_t>(len)) return std::nullopt;
    auto frame = decode_payload({p + 4, len});
    consumed_ += 4 + len;
    return frame;
}

}  // namespace gtanet
