#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "iadccn/error.hpp"

namespace iadccn::detail {

template <typename U>
void write_le(std::ostream& os, U value) {
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
    }
    os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

inline void write_f32(std::ostream& os, float value) {
    write_le(os, std::bit_cast<std::uint32_t>(value));
}

/// Reader that tracks the byte offset for error messages.
class LeReader {
public:
    LeReader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

    template <typename U>
    U read(const char* what) {
        unsigned char bytes[sizeof(U)];
        read_bytes(reinterpret_cast<char*>(bytes), sizeof(U), what);
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            value |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
        }
        return value;
    }

    float read_f32(const char* what) { return std::bit_cast<float>(read<std::uint32_t>(what)); }

    void read_bytes(char* dst, std::size_t n, const char* what) {
        is_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) {
            throw ParseError(source_ + ": truncated while reading " + what + " at byte " +
                                 std::to_string(offset_ + static_cast<std::size_t>(is_.gcount())),
                             offset_ + static_cast<std::size_t>(is_.gcount()));
        }
        offset_ += n;
    }

    std::size_t offset() const noexcept { return offset_; }
    const std::string& source() const noexcept { return source_; }

    [[noreturn]] void fail(const std::string& message, std::size_t at) const {
        throw ParseError(source_ + ": " + message + " at byte " + std::to_string(at), at);
    }

    void expect_end() {
        if (is_.peek() != std::char_traits<char>::eof()) {
            fail("trailing bytes", offset_);
        }
    }

private:
    std::istream& is_;
    std::string source_;
    std::size_t offset_ = 0;
};

}  // namespace iadccn::detail
