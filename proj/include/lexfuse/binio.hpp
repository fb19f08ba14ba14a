#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "lexfuse/errors.hpp"

namespace lexfuse {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

template <typename T>
void write_pod(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw io_error(std::string("truncated file while reading ") + what);
    return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what) {
    auto len = read_pod<std::uint32_t>(in, what);
    // No sane token or name is this long; reject instead of allocating.
    if (len > (1u << 24))
        throw io_error(std::string("implausible string length while reading ") + what);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw io_error(std::string("truncated file while reading ") + what);
    return s;
}

inline void expect_magic(std::istream& in, const char magic[4], const char* format_name) {
    char got[4];
    in.read(got, 4);
    if (!in || std::memcmp(got, magic, 4) != 0)
        throw io_error(std::string("not a ") + format_name + " file (bad magic)");
}

} // namespace lexfuse
