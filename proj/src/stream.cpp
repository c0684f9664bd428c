#include "gtanet/stream.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <mutex>
#include <thread>

namespace gtanet {

StreamSession::StreamSession(GtaNetModel& model) : model_(&model), capacity_(temporal_span(model.config())) {}

std::vector<double> StreamSession::push(std::span<const double> frame2d) {
    const std::size_t j = model_->topology().joint_count();
    const std::size_t din = model_->config().input_channels();
    if (frame2d.size() != j * 2) {
        throw ProtocolError("expected " + std::to_string(j) + " joints with 2 coordinates, got " +
                            std::to_string(frame2d.size()) + " values");
    }
    std::vector<double> row;
    row.reserve(j * din);
    for (std::size_t i = 0; i < j; ++i) {
        row.push_back(frame2d[2 * i]);
        row.push_back(frame2d[2 * i + 1]);
        if (din == 3) row.push_back(1.0);
    }
    buffer_.push_back(std::move(row));
    if (buffer_.size() > capacity_) buffer_.pop_front();
    ++frames_seen_;

    const std::size_t t = buffer_.size();
    std::vector<double> input;
    input.reserve(t * j * din);
    for (const auto& f : buffer_) input.insert(input.end(), f.begin(), f.end());
    Rng rng(0);
    const auto out = forward(*model_, Tensor::from({t, j, din}, std::move(input)), Mode::eval, rng);
    const auto all = out.data();
    return {all.end() - static_cast<std::ptrdiff_t>(j * 3), all.end()};
}

// ---- Sockets -------------------------------------------------------------------

namespace {

std::runtime_error socket_error(const std::string& what) {
    return std::runtime_error(what + ": " + std::strerror(errno));
}

// Reads exactly n bytes. Returns the number read before EOF.
std::size_t read_exact(int fd, std::uint8_t* out, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        const ssize_t r = ::recv(fd, out + got, n - got, 0);
        if (r == 0) return got;
        if (r < 0) {
            if (errno == EINTR) continue;
            throw socket_error("recv");
        }
        got += static_cast<std::size_t>(r);
    }
    return got;
}

void send_frame(int fd, const WireFrame& f) { send_all(fd, encode_frame(f)); }

void send_error(int fd, std::uint32_t frame_index) {
    try {
        send_frame(fd, {MsgType::error, frame_index, 0, {}});
    } catch (const std::exception&) {
        // Peer already gone.
    }
}

void handle_connection(GtaNetModel& model, int fd) {
    StreamSession session(model);
    const std::size_t joints = model.topology().joint_count();
    std::uint32_t last_index = 0;
    try {
        while (true) {
            std::optional<WireFrame> frame;
            try {
                frame = read_frame(fd);
            } catch (const ProtocolError&) {
                send_error(fd, last_index);
                break;
            }
            if (!frame) break;
            last_index = frame->frame_index;
            if (frame->type == MsgType::end) {
                send_frame(fd, {MsgType::end, frame->frame_index, 0, {}});
                break;
            }
            if (frame->type != MsgType::keypoints2d || frame->joint_count != joints) {
                send_error(fd, frame->frame_index);
                break;
            }
            const std::vector<double> in(frame->values.begin(), frame->values.end());
            std::vector<double> pose;
            try {
                pose = session.push(in);
            } catch (const std::exception&) {
                send_error(fd, frame->frame_index);
                break;
            }
            WireFrame reply{MsgType::pose3d, frame->frame_index, static_cast<std::uint16_t>(joints), {}};
            reply.values.assign(pose.begin(), pose.end());
            send_frame(fd, reply);
        }
    } catch (const std::exception&) {
        // Socket failure: drop the connection.
    }
    close_fd(fd);
}

}  // namespace

void send_all(int fd, std::span<const std::uint8_t> bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t r = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw socket_error("send");
        }
        sent += static_cast<std::size_t>(r);
    }
}

std::optional<WireFrame> read_frame(int fd) {
    std::uint8_t len_bytes[4];
    const std::size_t got = read_exact(fd, len_bytes, 4);
    if (got == 0) return std::nullopt;
    if (got < 4) throw ProtocolError("connection closed inside a length prefix");
    const std::uint32_t len = (std::uint32_t{len_bytes[0]} << 24) | (std::uint32_t{len_bytes[1]} << 16) |
                              (std::uint32_t{len_bytes[2]} << 8) | len_bytes[3];
    if (len < kWireHeaderBytes || len > kMaxPayloadBytes) {
        throw ProtocolError("declared payload length " + std::to_string(len) + " is out of range");
    }
    std::vector<std::uint8_t> payload(len);
    if (read_exact(fd, payload.data(), len) < len) throw ProtocolError("truncated payload");
    return decode_payload(payload);
}

void close_fd(int fd) {
    if (fd >= 0) ::close(fd);
}

int connect_to(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
    if (rc != 0) throw std::runtime_error("cannot resolve " + host + ": " + ::gai_strerror(rc));
    const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) {
        ::freeaddrinfo(res);
        throw socket_error("socket");
    }
    if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
        ::freeaddrinfo(res);
        ::close(fd);
        throw socket_error("connect to " + host + ":" + std::to_string(port));
    }
    ::freeaddrinfo(res);
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return fd;
}

void serve(GtaNetModel& model, const ServerOptions& options, const std::atomic<bool>& stop) {
    const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listener < 0) throw socket_error("socket");
    const int one = 1;
    ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(options.port);
    if (::inet_pton(AF_INET, options.host.c_str(), &addr.sin_addr) != 1) {
        ::close(listener);
        throw std::runtime_error("invalid listen address " + options.host);
    }
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listener, 16) != 0) {
        const auto err = socket_error("bind/listen on port " + std::to_string(options.port));
        ::close(listener);
        throw err;
    }
    socklen_t len = sizeof addr;
    ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
    if (options.on_listening) options.on_listening(ntohs(addr.sin_port));

    std::vector<std::thread> workers;
    while (!stop.load()) {
        pollfd pfd{listener, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, 50);
        if (ready <= 0) continue;
        const int fd = ::accept(listener, nullptr, nullptr);
        if (fd < 0) continue;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        workers.emplace_back(handle_connection, std::ref(model), fd);
    }
    ::close(listener);
    for (auto& w : workers) w.join();
}

std::vector<WireFrame> run_client(const std::string& host, std::uint16_t port, const PoseSequence& obs2d) {
    if (obs2d.dims != 2 || obs2d.units != Units::normalized) {
        throw std::invalid_argument("client input must be normalized 2D keypoints");
    }
    const int fd = connect_to(host, port);
    std::vector<WireFrame> replies;
    try {
        const std::size_t j = obs2d.joints();
        for (std::size_t t = 0; t < obs2d.frames; ++t) {
            WireFrame f{MsgType::keypoints2d, static_cast<std::uint32_t>(t), static_cast<std::uint16_t>(j), {}};
            for (std::size_t i = 0; i < j * 2; ++i) f.values.push_back(static_cast<float>(obs2d.values[t * j * 2 + i]));
            send_frame(fd, f);
            auto reply = read_frame(fd);
            if (!reply) throw ProtocolError("server closed the connection at frame " + std::to_string(t));
            if (reply->type == MsgType::error) {
                throw ProtocolError("server rejected frame " + std::to_string(reply->frame_index));
            }
            replies.push_back(std::move(*reply));
        }
        send_frame(fd, {MsgType::end, static_cast<std::uint32_t>(obs2d.frames), 0, {}});
        read_frame(fd);
    } catch (...) {
        close_fd(fd);
        throw;
    }
    close_fd(fd);
    return replies;
}

}  // namespace gtanet
