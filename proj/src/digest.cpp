#include "lexfuse/digest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <vector>

#include "lexfuse/errors.hpp"

namespace lexfuse {

Sha256::Sha256() {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("failed to initialize SHA-256 context");
    ctx_ = ctx;
}

Sha256::~Sha256() {
    if (ctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Sha256::update(const void* data, std::size_t len) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, len) != 1)
        throw std::runtime_error("SHA-256 update failed");
}

void Sha256::update_u32(std::uint32_t v) { update(&v, sizeof(v)); }
void Sha256::update_u64(std::uint64_t v) { update(&v, sizeof(v)); }

void Sha256::update_string(const std::string& s) {
    update_u32(static_cast<std::uint32_t>(s.size()));
    update(s.data(), s.size());
}

Digest Sha256::finish() {
    Digest d{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), d.data(), &len) != 1 || len != d.size())
        throw std::runtime_error("SHA-256 finalize failed");
    return d;
}

Digest sha256(const void* data, std::size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.finish();
}

Digest sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open file for hashing: " + path);
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.finish();
}

std::string to_hex(const Digest& d) {
    std::string out;
    out.reserve(d.size() * 2);
    for (std::uint8_t b : d) {
        char tmp[3];
        std::snprintf(tmp, sizeof(tmp), "%02x", b);
        out += tmp;
    }
    return out;
}

} // namespace lexfuse
