#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lsda/config.hpp"
#include "lsda/evaluation.hpp"

// One function per CLI subcommand. Each writes its artifacts plus exactly one
// run_manifest.json into `out`.

namespace lsda {

struct RunManifest {
    std::string command;
    Json config = Json::object();  // resolved
    std::uint64_t seed = 0;
    std::string input_hash;        // SHA-256 over the inputs (config, upstream artifacts)
    std::map<std::string, std::string> outputs;  // path relative to out -> SHA-256 of its bytes
    Json results = Json::object();
    Json timings = Json::object();  // wall clock, excluded from the hash

    std::string hash() const;
    Json to_json() const;
    void write(const std::filesystem::path& out_dir) const;
    static RunManifest read(const std::filesystem::path& path);
};

inline constexpr const char* kManifestFile = "run_manifest.json";

// Dataset directories may be given as the directory or as its manifest.tsv.
std::filesystem::path dataset_dir(const std::filesystem::path& p);

RunManifest run_generate_data(const RunConfig& config, const std::filesystem::path& out);
RunManifest run_pretrain_real(const RunConfig& config, const std::filesystem::path& data,
                              const std::filesystem::path& out);
RunManifest run_train(const RunConfig& config, const std::filesystem::path& data, const std::filesystem::path& real,
                      const std::filesystem::path& out,
                      const std::optional<std::filesystem::path>& resume = {});
RunManifest run_infer(const std::filesystem::path& ckpt, const std::vector<std::filesystem::path>& images,
                      const std::filesystem::path& out);
// hold_out < 0: taken from the checkpoint's config.
RunManifest run_evaluate(const std::filesystem::path& ckpt, const std::filesystem::path& data, int hold_out,
                         const std::filesystem::path& out);
RunManifest run_perturb_eval(const RunConfig& config, const std::filesystem::path& ckpt,
                             const std::filesystem::path& data, int hold_out, const std::filesystem::path& out);
RunManifest run_ablate(const RunConfig& config, const std::filesystem::path& data, const std::filesystem::path& real,
                       const std::vector<AblationVariant>& grid, const std::vector<std::uint64_t>& seeds,
                       const std::filesystem::path& out);
RunManifest run_export_embeddings(const std::filesystem::path& ckpt, const std::filesystem::path& data, Split split,
                                  const std::vector<int>& domains, const std::filesystem::path& out);

}  // namespace lsda
