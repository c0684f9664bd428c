#pragma once

#include "gtanet/model.hpp"
#include "gtanet/pose_io.hpp"
#include "gtanet/wire.hpp"

#include <atomic>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace gtanet {

// Causal per-connection inference state. Holds the last temporal_span(config)
// frames, which is exactly the history one output frame depends on, so every
// pose equals the offline forward() output at the same frame.
class StreamSession {
public:
    explicit StreamSession(GtaNetModel& model);

    // frame2d: J x 2 normalized keypoints (a confidence of 1 is appended when
    // the model expects one). Returns the J x 3 pose for this frame in mm.
    std::vector<double> push(std::span<const double> frame2d);

    std::size_t capacity() const { return capacity_; }
    std::size_t frames_seen() const { return frames_seen_; }

private:
    GtaNetModel* model_;
    std::size_t capacity_;
    std::size_t frames_seen_ = 0;
    std::deque<std::vector<double>> buffer_;
};

struct ServerOptions {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;  // 0 picks a free port
    // Called once the socket is listening, with the bound port.
    std::function<void(std::uint16_t)> on_listening;
};

// Blocks until `stop` becomes true. One thread per connection; the model is
// shared read-only.
void serve(GtaNetModel& model, const ServerOptions& options, const std::atomic<bool>& stop);

// Streams every frame of a normalized 2D sequence and collects the replies in
// order. Sends a type-3 frame at the end.
std::vector<WireFrame> run_client(const std::string& host, std::uint16_t port, const PoseSequence& obs2d);

// Low-level helpers shared with tests.
int connect_to(const std::string& host, std::uint16_t port);
void send_all(int fd, std::span<const std::uint8_t> bytes);
// Reads the next frame; nullopt on orderly EOF before any byte.
std::optional<WireFrame> read_frame(int fd);
void close_fd(int fd);

}  // namespace gtanet
