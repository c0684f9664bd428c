#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gtanet {

/// Malformed or truncated binary input; the message carries the byte offset.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16le(std::uint16_t v) { put_le(v, 2); }
    void u32le(std::uint32_t v) { put_le(v, 4); }
    void u16be(std::uint16_t v) { put_be(v, 2); }
    void u32be(std::uint32_t v) { put_be(v, 4); }
    void f64le(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
    void f32le(float v) { put_le(std::bit_cast<std::uint32_t>(v), 4); }
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void bytes(std::span<const std::uint8_t> s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    std::vector<std::uint8_t>& buffer() { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void put_be(std::uint64_t v, int n) {
        for (int i = n - 1; i >= 0; --i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> data, std::string context) : data_(data), context_(std::move(context)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1, "u8")); }
    std::uint16_t u16le() { return static_cast<std::uint16_t>(get_le(2, "u16")); }
    std::uint32_t u32le() { return static_cast<std::uint32_t>(get_le(4, "u32")); }
    std::uint16_t u16be() { return static_cast<std::uint16_t>(get_be(2, "u16")); }
    std::uint32_t u32be() { return static_cast<std::uint32_t>(get_be(4, "u32")); }
    double f64le() { return std::bit_cast<double>(get_le(8, "f64")); }
    float f32le() { return std::bit_cast<float>(static_cast<std::uint32_t>(get_le(4, "f32"))); }

    std::string str(std::size_t n) {
        need(n, "string");
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    [[noreturn]] void fail(const std::string& what) const { throw FormatError(context_ + ": " + what, pos_); }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw FormatError(context_ + ": truncated input while reading " + what + " (" + std::to_string(n) +
                                  " bytes needed, " + std::to_string(remaining()) + " available)",
                              pos_);
        }
    }
    std::uint64_t get_le(std::size_t n, const char* what) {
        need(n, what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }
    std::uint64_t get_be(std::size_t n, const char* what) {
        need(n, what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) v = (v << 8) | data_[pos_ + i];
        pos_ += n;
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::string context_;
    std::size_t pos_ = 0;
};

}  // namespace gtanet
