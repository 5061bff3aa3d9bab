#pragma once

#include <memory>
#include <string>
#include <string_view>

namespace lsda {

// Incremental SHA-256 (OpenSSL EVP) producing lowercase hex digests.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::string_view bytes);
    Sha256& update(const void* data, std::size_t size);
    std::string hex_digest();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);

}  // namespace lsda
