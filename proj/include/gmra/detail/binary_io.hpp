#pragma once

// Little-endian scalar packing and a CRC-32 (IEEE 802.3) used by the shelf
// region format and the cover-tree stream format.

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>

#include "gmra/errors.hpp"

namespace gmra::detail {

template <typename T>
inline void store_le(uint8_t* dst, T value) {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        dst[i] = static_cast<uint8_t>(u >> (8 * i));
    }
}

template <typename T>
inline T load_le(const uint8_t* src) {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        u |= static_cast<U>(src[i]) << (8 * i);
    }
    return static_cast<T>(u);
}

inline void store_le_f64(uint8_t* dst, double value) {
    uint64_t bits;
    std::memcpy(&bits, &value, 8);
    store_le<uint64_t>(dst, bits);
}

inline double load_le_f64(const uint8_t* src) {
    uint64_t bits = load_le<uint64_t>(src);
    double value;
    std::memcpy(&value, &bits, 8);
    return value;
}

template <typename T>
inline void write_le(std::ostream& out, T value) {
    uint8_t buf[sizeof(T)];
    store_le(buf, value);
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
inline T read_le(std::istream& in, const char* what) {
    uint8_t buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw FormatError(std::string("truncated stream while reading ") + what);
    return load_le<T>(buf);
}

inline constexpr std::array<uint32_t, 256> make_crc32_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
        }
        table[i] = c;
    }
    return table;
}

inline constexpr auto kCrc32Table = make_crc32_table();

inline uint32_t crc32_update(uint32_t crc, const uint8_t* data, std::size_t len) {
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) {
        crc = kCrc32Table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    }
    return crc ^ 0xFFFFFFFFu;
}

inline uint32_t crc32(std::span<const uint8_t> data) {
    return crc32_update(0, data.data(), data.size());
}

} // namespace gmra::detail
