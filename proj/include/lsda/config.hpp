#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "lsda/encoders.hpp"
#include "lsda/latent_aug.hpp"
#include "lsda/losses.hpp"
#include "lsda/synth_data.hpp"

// Experiment configuration: a JSON key/value tree with named base profiles.
// A config file is merged (RFC 7386 merge patch) over its profile, so a file
// only needs the keys it changes.

namespace lsda {

using Json = nlohmann::json;

struct TrainConfig {
    int epochs = 30;
    int batch_identities = 8;
    double learning_rate = 2e-4;
    std::string optimizer = "adam";
    LossWeights weights;
    AugmentConfig augment;
    std::uint64_t seed = 1;
    int hold_out = 5;
    bool detach_targets = false;
    int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
    bool two_phase = false;    // alternate teacher / student updates
    bool student_only = false; // baseline: binary loss on the student only
    bool trace_augment = false;
    int max_steps = 0;         // 0 = no cap

    void validate() const;
};

struct EvalConfig {
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<PerturbKind> perturb_kinds{kAllPerturbKinds.begin(), kAllPerturbKinds.end()};
    int max_severity = 5;
    std::uint64_t perturb_seed = 7;
};

struct RunConfig {
    std::string profile = "desk";
    DatasetConfig data;
    EncoderSpec encoder;
    PretrainOptions pretrain;
    TrainConfig train;
    EvalConfig eval;

    void validate() const;
};

Json to_json(const RunConfig& config);
RunConfig run_config_from_json(const Json& j);

Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const AugmentConfig& config);
AugmentConfig augment_config_from_json(const Json& j);
Json to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const Json& j);

// Base profiles: "tiny" (CI) and "desk" (acceptance runs).
Json profile_json(const std::string& name);
std::vector<std::string> profile_names();

// Profile named by the file's "profile" key (default "desk") patched with the file.
RunConfig load_config(const std::filesystem::path& path);
// Applies "a.b.c=value" overrides; value is parsed as JSON, else taken as a string.
Json apply_overrides(Json base, const std::vector<std::string>& assignments);

// Canonical serialization (sorted keys, no whitespace) and its SHA-256.
std::string canonical_dump(const Json& j);
std::string config_hash(const Json& j);

}  // namespace lsda
