#pragma once

#include "gtanet/byte_io.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace gtanet {

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class MsgType : std::uint8_t { keypoints2d = 1, pose3d = 2, end = 3, error = 4 };

// Frame = u32 BE payload length, then payload:
//   "GTAP" | version u8 (1) | type u8 | frame_index u32 BE | joint_count u16 BE |
//   joint_count * D float32 LE, D = 2 (type 1), 3 (type 2), 0 (types 3, 4).
struct WireFrame {
    MsgType type = MsgType::keypoints2d;
    std::uint32_t frame_index = 0;
    std::uint16_t joint_count = 0;
    std::vector<float> values;

    bool operator==(const WireFrame&) const = default;
};

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kWireHeaderBytes = 12;
inline constexpr std::size_t kMaxPayloadBytes = 1u << 20;

std::size_t wire_dims(MsgType type);
std::size_t payload_size(MsgType type, std::size_t joint_count);

// Length prefix included. Throws ProtocolError if values do not match joint_count * D.
std::vector<std::uint8_t> encode_frame(const WireFrame& frame);
// Payload only (no length prefix).
WireFrame decode_payload(std::span<const std::uint8_t> payload);

// Incremental decoder over a byte stream.
class FrameDecoder {
public:
    void feed(std::span<const std::uint8_t> bytes);
    // Next complete frame, if any. Throws ProtocolError on malformed input.
    std::optional<WireFrame> next();
    // Bytes received but not yet consumed.
    std::size_t pending() const { return buffer_.size() - consumed_; }

private:
    std::vector<std::uint8_t> buffer_;
    std::size_t consumed_ = 0;
};

}  // namespace gtanet
