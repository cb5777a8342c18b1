#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "microspot/errors.hpp"

// Little-endian scalar encoding shared by the binary file formats.
namespace microspot::binio {

template <typename T>
void put(std::ostream& out, T value) {
    static_assert(std::is_arithmetic_v<T>);
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    U bits;
    std::memcpy(&bits, &value, sizeof(T));
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("unexpected end of binary file");
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
    const auto n = get<std::uint32_t>(in);
    if (n > (1u << 20)) throw FormatError("implausible string length in binary file");
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), n)) throw FormatError("unexpected end of binary file");
    return s;
}

inline void put_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
    char buf[4];
    if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
        throw FormatError(what + ": bad magic, expected " + std::string(magic, 4));
    }
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace microspot::binio
