#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lsda/config.hpp"
#include "lsda/tensor.hpp"

// Versioned binary checkpoint:
//   "LSDACKPT" u32 version
//   kind, config JSON, config hash, meta JSON (length-prefixed strings)
//   u64 step
//   named tensors, optimizer states
//   64-byte hex SHA-256 of everything before it
// Loading rejects a bad magic, version, trailing digest or config hash.

namespace lsda {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerState {
    std::uint64_t t = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments;
};

struct Checkpoint {
    std::string kind = "lsda";  // "lsda" or "real-encoder"
    Json config = Json::object();
    std::string config_hash;    // filled by save() when empty
    Json meta = Json::object(); // not covered by config_hash
    std::uint64_t step = 0;
    std::map<std::string, Tensor> tensors;
    std::vector<OptimizerState> optimizers;

    std::string serialize() const;
    static Checkpoint parse(std::string_view bytes);

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    const Tensor& tensor(const std::string& name) const;
};

}  // namespace lsda
