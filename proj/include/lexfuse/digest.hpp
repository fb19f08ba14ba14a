#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace lexfuse {

// SHA-256 digests identify vocabularies and derived artifacts in file
// headers, so that a mapping refuses to load against the wrong session.
using Digest = std::array<std::uint8_t, 32>;

class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t len);
    void update_u32(std::uint32_t v);
    void update_u64(std::uint64_t v);
    void update_string(const std::string& s);  // length-prefixed

    Digest finish();

private:
    void* ctx_;
};

Digest sha256(const void* data, std::size_t len);
Digest sha256_file(const std::string& path);

std::string to_hex(const Digest& d);

} // namespace lexfuse
