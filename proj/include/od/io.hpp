#pragma once

// Little-endian binary primitives shared by every file format in the project.
// Byte order is written out explicitly so files are portable across hosts.

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "od/errors.hpp"

namespace od::io {

inline void write_u8(std::ostream& os, uint8_t v) { os.put(char(v)); }

inline void write_u16(std::ostream& os, uint16_t v) {
    os.put(char(v & 0xff));
    os.put(char((v >> 8) & 0xff));
}

inline void write_u32(std::ostream& os, uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(char((v >> (8 * i)) & 0xff));
}

inline void write_u64(std::ostream& os, uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(char((v >> (8 * i)) & 0xff));
}

inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<uint32_t>(v)); }
inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<uint64_t>(v)); }

inline uint8_t read_u8(std::istream& is) {
    int c = is.get();
    if (c == std::char_traits<char>::eof()) throw TruncatedPayloadError("unexpected end of file");
    return uint8_t(c);
}

inline uint16_t read_u16(std::istream& is) {
    uint16_t lo = read_u8(is), hi = read_u8(is);
    return uint16_t(lo | (hi << 8));
}

inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(read_u8(is)) << (8 * i);
    return v;
}

inline uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(read_u8(is)) << (8 * i);
    return v;
}

inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline void write_magic(std::ostream& os, const char* magic4) {
    os.write(magic4, 4);
}

// Throws CorruptHeaderError when the stream does not start with the expected
// four-byte magic; `what` names the format for the message.
inline void expect_magic(std::istream& is, const char* magic4, const char* what) {
    char buf[4] = {};
    is.read(buf, 4);
    if (is.gcount() != 4 || std::char_traits<char>::compare(buf, magic4, 4) != 0)
        throw CorruptHeaderError(std::string(what) + ": bad magic");
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open for reading: " + path);
    return is;
}

// Rejects trailing bytes after a parser consumed what the header promised.
inline void expect_eof(std::istream& is, const char* what) {
    if (is.peek() != std::char_traits<char>::eof())
        throw HeaderMismatchError(std::string(what) + ": trailing bytes after declared payload");
}

} // namespace od::io
