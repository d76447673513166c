#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "detpp/errors.hpp"

namespace detpp {

// Little-endian primitives shared by the calibration and checkpoint
// binary formats. Doubles travel as their IEEE-754 bit patterns, so a
// round-trip restores values bit-exactly, NaN payloads included.

inline void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline void append_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(bits));
    append_u64(out, bits);
}

// Cursor over a byte buffer. Every read is bounds-checked; running past
// the end raises ParseError rather than reading garbage.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const std::vector<std::uint8_t>& bytes)
        : ByteReader(bytes.data(), bytes.size()) {}

    std::uint64_t u64() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    double f64() {
        const std::uint64_t bits = u64();
        double v = 0.0;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    void raw(void* dst, std::size_t n) {
        require(n);
        std::memcpy(dst, data_ + pos_, n);
        pos_ += n;
    }

    bool done() const { return pos_ == size_; }
    std::size_t remaining() const { return size_ - pos_; }

private:
    void require(std::size_t n) const {
        if (size_ - pos_ < n) {
            throw ParseError("serialized state truncated");
        }
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

} // namespace detpp
