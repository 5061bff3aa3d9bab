#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "lsda/rng.hpp"

// Synthetic multi-domain forgery benchmark.
//
// Domain 0 holds procedurally rendered "identities"; domains 1..m apply one
// forgery artifact family each to the central region of a real image. Every
// fake is derived from a real image of the same (identity, frame), which makes
// batches identity-aligned across domains.

namespace lsda {

/// H x W x 3 image, row-major interleaved RGB, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    double& at(int y, int x, int c) noexcept {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    double at(int y, int x, int c) const noexcept {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    bool operator==(const Image&) const = default;
};

enum class Split { Train, Val, Test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct Sample {
    Image image;
    int identity_id = 0;
    int domain = 0;
    int group_id = 0;
    int frame = 0;
    Split split = Split::Train;
};

// Forgery methods 1..4 are primitive artifact families; 5 is the composite.
inline constexpr int kMaxForgeryMethod = 5;

struct ForgeryRegion {
    int top = 8, left = 8, height = 16, width = 16;
    bool contains(int y, int x) const noexcept {
        return y >= top && y < top + height && x >= left && x < left + width;
    }
};

struct ForgeryParams {
    ForgeryRegion region;
    double seam_strong = 0.6;      // checkerboard weights of the donor patch
    double seam_weak = 0.25;
    int seam_cell = 4;             // checkerboard cell size in pixels
    int blur_radius = 2;           // box blur half width
    double stripe_amplitude = 0.06;
    int stripe_cycles = 8;         // cycles per image width
    double permute_strength = 0.6; // blend towards the channel-rotated region
    double composite_strength = 0.5;
};

struct RenderParams {
    double max_shift = 1.5;       // per-image translation jitter (pixels)
    double max_brightness = 0.05; // per-image brightness jitter
    double pixel_noise = 0.02;
};

/// Real image of one identity; the base pattern depends only on (seed, identity_id).
Image render_identity(int identity_id, int frame, std::uint64_t seed, int height = 32, int width = 32,
                      const RenderParams& params = {});

std::vector<Sample> generate_real(int identity_count, int images_per_identity, std::uint64_t seed,
                                  int height = 32, int width = 32, int group_size = 4);

Sample apply_forgery(const Sample& sample, int method, std::uint64_t seed,
                     const ForgeryParams& params = {});

// Stripe residual frequency (cycles per image width) used by method 3.
int stripe_frequency(const ForgeryParams& params = {});

enum class PerturbKind { Blur, GaussianNoise, BlockQuantize, Rescale, Contrast };

inline constexpr std::array<PerturbKind, 5> kAllPerturbKinds = {
    PerturbKind::Blur, PerturbKind::GaussianNoise, PerturbKind::BlockQuantize, PerturbKind::Rescale,
    PerturbKind::Contrast};

std::string_view perturb_name(PerturbKind kind);
PerturbKind parse_perturb_kind(std::string_view name);

/// Parameter applied at severity 1..5: sigma or step for blur/noise/quantize,
/// a shrinking factor for rescale/contrast. Strength strictly increases.
double perturb_parameter(PerturbKind kind, int severity);

Sample perturb(const Sample& sample, PerturbKind kind, int severity, std::uint64_t seed);
Image perturb_image(const Image& image, PerturbKind kind, int severity, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Persisted dataset

struct DatasetConfig {
    int identities = 200;
    int images_per_identity = 4;
    int group_size = 4;
    int m = 5;          // forgery domains generated (1..m)
    int hold_out = 0;   // 0: none, else the domain reserved for test
    int height = 32;
    int width = 32;
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    std::uint64_t seed = 1;
    ForgeryParams forgery;

    // Throws Error(Config) on invalid values.
    void validate() const;
};

nlohmann::json to_json(const DatasetConfig& config);
// Missing keys keep their defaults.
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

struct ManifestRecord {
    std::string path;  // relative to the dataset directory
    int identity_id = 0;
    int domain = 0;
    int group_id = 0;
    Split split = Split::Train;
    int frame = 0;
};

struct DatasetManifest {
    DatasetConfig config;
    std::vector<ManifestRecord> records;
    std::string checksum;  // SHA-256 over manifest text and image bytes

    std::map<std::pair<Split, int>, int> counts() const;
    std::vector<int> domains_in(Split split) const;
};

inline constexpr std::string_view kManifestHeader = "#lsda-manifest v1\tpath\tidentity_id\tdomain\tgroup_id\tsplit\tframe";

std::string serialize_manifest(const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> parse_manifest(const std::string& text);

// Throws Error(Consistency) when an identity appears in more than one split or
// a (split, identity, frame) is missing a domain present in that split.
void validate_manifest(const std::vector<ManifestRecord>& records);

/// Generates, writes and returns the manifest (`manifest.tsv`, `dataset.json`, images/).
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

/// Read-only in-memory view of a persisted dataset.
class Dataset {
public:
    static Dataset load(const std::filesystem::path& dir);
    static Dataset from_samples(DatasetConfig config, std::vector<Sample> samples);

    const DatasetConfig& config() const noexcept { return config_; }
    const std::vector<Sample>& samples() const noexcept { return samples_; }
    const std::string& checksum() const noexcept { return checksum_; }

    std::vector<int> identities(Split split) const;
    std::vector<int> domains(Split split) const;
    // Forgery domains used for training, sorted: domains(Train) without 0.
    std::vector<int> training_fake_domains() const;
    std::vector<const Sample*> select(Split split, const std::vector<int>& domains) const;
    const Sample* find(int identity_id, int frame, int domain) const;
    int frames_per_identity() const noexcept { return config_.images_per_identity; }

private:
    void index();

    DatasetConfig config_;
    std::vector<Sample> samples_;
    std::string checksum_;
    std::map<std::tuple<int, int, int>, std::size_t> by_key_;
};

/// list[d][b]: domain-d image of the b-th drawn identity; identities are distinct.
using IdentityBatch = std::vector<std::vector<const Sample*>>;

IdentityBatch sample_identity_batch(const Dataset& dataset, Split split, int batch_identities,
                                    const std::vector<int>& domains, Rng& rng);

// Identity subsets for one epoch of `batch_identities`-sized batches.
std::vector<std::vector<int>> epoch_identity_batches(const std::vector<int>& identities,
                                                     int batch_identities, Rng& rng);

IdentityBatch assemble_batch(const Dataset& dataset, const std::vector<int>& identity_ids,
                             const std::vector<int>& domains, Rng& rng);

// PPM (P6, 8-bit) image I/O; values are quantised to k/255.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
std::string encode_ppm(const Image& image);
Image quantize(const Image& image);

}  // namespace lsda
