#pragma once

#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lsda/autograd.hpp"
#include "lsda/rng.hpp"

// Latent-space augmentation of forgery features.
//
// Within-domain (WD) ops act on one forgery domain's feature batch z [B,C,h,w]:
// centrifugal (direct: away from the batch centroid; indirect: towards the
// sample farthest from it), affine rotation of the spatial grid, and additive
// Gaussian-mixture noise. The cross-domain (CD) op mixes features of two
// different forgery domains. Two 1x1 fusion convolutions combine the results
// with the original features into the distillation target.
//
// Every op comes as a plain tensor function and as a recorded Tape op sharing
// the same forward kernel.

namespace lsda {

enum class WdOp { CentrifugalDirect, CentrifugalIndirect, Affine, Additive };

std::string_view wd_op_name(WdOp op);
WdOp parse_wd_op(std::string_view name);

struct GmmConfig {
    std::vector<double> weights{1.0 / 3, 1.0 / 3, 1.0 / 3};
    std::vector<double> sigmas{0.05, 0.1, 0.2};
    // Multiply sigmas by the standard deviation of the feature batch.
    bool relative_to_feature_std = true;

    void validate() const;
    // sum_k weights[k] * sigmas[k]^2
    double mixture_variance() const;
};

struct AugmentConfig {
    bool wd_enabled = true;
    bool cd_enabled = true;
    std::vector<WdOp> wd_ops{WdOp::CentrifugalDirect, WdOp::CentrifugalIndirect, WdOp::Affine, WdOp::Additive};
    double theta_max = std::numbers::pi / 6;
    GmmConfig gmm;
    bool detach_centroid = false;
    // Second fusion input: false = original z (default), true = WD-augmented z.
    bool fuse_literal = false;

    void validate() const;
};

namespace aug {

// Batch mean, shape [1, C, h, w].
Tensor centroid(const Tensor& z);
// z + beta_j (z_j - mu); beta holds one value per sample (or one for all).
Tensor centrifugal_direct(const Tensor& z, const Tensor& mu, std::span<const double> beta);
// Index of the sample farthest (Euclidean, flattened) from mu; ties go to the lowest index.
int hardest_index(const Tensor& z, const Tensor& mu);
Tensor hardest_example(const Tensor& z, const Tensor& mu);
// z + beta_j (a - z_j)
Tensor centrifugal_indirect(const Tensor& z, const Tensor& a, std::span<const double> beta);

// For each output cell (row-major over h*w) the source cell index, or -1 for zero fill.
std::vector<int> rotation_source_map(int height, int width, double theta);
Tensor affine_rotate(const Tensor& z, double theta);

struct GmmDraw {
    Tensor noise;                 // epsilon, same shape as z
    std::vector<int> components;  // mixture component per sample
};
// Draws epsilon: per sample a component k ~ weights, then N(0, (sigma_k * scale)^2) elementwise.
GmmDraw sample_gmm(const Shape& shape, const GmmConfig& gmm, double scale, Rng& rng);
// Population standard deviation over all elements.
double feature_std(const Tensor& z);
// z + beta_j * epsilon_j
Tensor additive(const Tensor& z, std::span<const double> beta, const Tensor& noise);
Tensor additive_gmm(const Tensor& z, std::span<const double> beta, const GmmConfig& gmm, Rng& rng);

// alpha_j z_i + (1 - alpha_j) z_k
Tensor mixup_cross(const Tensor& zi, const Tensor& zk, std::span<const double> alpha);

// Recorded variants.
Var centroid(Tape& tape, Var z);
Var centrifugal_direct(Tape& tape, Var z, Var mu, std::vector<double> beta);
Var hardest_example(Tape& tape, Var z, Var mu);
// Sample idx of z as a [1, C, h, w] batch.
Var select_sample(Tape& tape, Var z, int idx);
Var centrifugal_indirect(Tape& tape, Var z, Var a, std::vector<double> beta);
Var affine_rotate(Tape& tape, Var z, double theta);
// z + beta_j * s(z) * unit_noise_j where s is feature_std(z) if scale_by_std, else 1.
Var additive(Tape& tape, Var z, std::vector<double> beta, Tensor unit_noise, bool scale_by_std);
Var mixup_cross(Tape& tape, Var zi, Var zk, std::vector<double> alpha);

}  // namespace aug

/// Two learnable 1x1 convolutions mapping 2C -> C channels, shared across forgery domains.
struct FusionLayers {
    Parameter aug_weight, aug_bias;      // combines (z_wd || z_cd)
    Parameter final_weight, final_bias;  // combines (z_aug || z)

    FusionLayers() = default;
    FusionLayers(int channels, std::uint64_t init_seed);

    int channels() const noexcept { return aug_bias.value.dim(0); }
    std::vector<Parameter*> parameters() { return {&aug_weight, &aug_bias, &final_weight, &final_bias}; }

    // conv_final passes its second input through; conv_aug is left unchanged.
    void set_selector();
    // Both convs average their two input blocks.
    void set_average();
};

Var fuse(Tape& tape, Var z, Var z_wd, Var z_cd, FusionLayers& layers, bool literal = false);

struct DomainAugmentTrace {
    int domain = 0;       // position among the forgery domains
    std::string op;       // WD op name, or "none"
    std::vector<double> betas;
    double theta = 0.0;
    int hard_index = -1;  // centrifugal_indirect only
    std::vector<int> components;
    int partner = -1;     // CD partner position, -1 when CD is off
    std::vector<double> alphas;
};

/// Augments each forgery domain's features and fuses them into F_i.
/// Only forgery features are passed in; real features never reach this function.
/// Random draws depend only on `seed`. With `replay` (the trace of an earlier
/// call with the same seed) the data-dependent hard-example choice is pinned
/// too, so the output is a smooth function of the features.
std::vector<Var> augment_domain_batch(Tape& tape, const std::vector<Var>& fake_features,
                                      const AugmentConfig& config, FusionLayers& layers,
                                      std::uint64_t seed, std::vector<DomainAugmentTrace>* trace = nullptr,
                                      const std::vector<DomainAugmentTrace>* replay = nullptr);

}  // namespace lsda
