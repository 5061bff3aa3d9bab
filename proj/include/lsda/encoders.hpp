#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsda/autograd.hpp"
#include "lsda/synth_data.hpp"

namespace lsda {

/// Shared trunk geometry: stride-2 3x3 conv blocks, SiLU between blocks.
struct EncoderSpec {
    int image_h = 32;
    int image_w = 32;
    int in_channels = 3;
    std::vector<int> widths{16, 32};  // hidden block widths; latent block follows
    int latent_c = 32;

    int blocks() const noexcept { return static_cast<int>(widths.size()) + 1; }
    int latent_h() const noexcept;
    int latent_w() const noexcept;
    Shape latent_shape(int batch) const { return {batch, latent_c, latent_h(), latent_w()}; }

    void validate() const;
    bool operator==(const EncoderSpec&) const = default;
};

class Encoder {
public:
    Encoder() = default;
    Encoder(std::string name, const EncoderSpec& spec, std::uint64_t init_seed);

    // images [B, 3, H, W] -> features [B, C, h, w]
    Var forward(Tape& tape, Var images);
    Tensor forward(const Tensor& images);

    const std::string& name() const noexcept { return name_; }
    const EncoderSpec& spec() const noexcept { return spec_; }
    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }

    void freeze();
    bool frozen() const noexcept;

private:
    std::string name_;
    EncoderSpec spec_;
    std::vector<Parameter> params_;  // w0, b0, w1, b1, ...
};

/// Affine head on features. With `pool`, features are global-average-pooled first.
class LinearHead {
public:
    LinearHead() = default;
    LinearHead(std::string name, int in_features, int out_features, bool pool, std::uint64_t init_seed);

    Var forward(Tape& tape, Var features);
    Tensor forward(const Tensor& features);

    int out_features() const noexcept { return weight_.value.dim(0); }
    Parameter& weight() noexcept { return weight_; }
    Parameter& bias() noexcept { return bias_; }
    const Parameter& weight() const noexcept { return weight_; }
    const Parameter& bias() const noexcept { return bias_; }
    std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }

private:
    Parameter weight_;
    Parameter bias_;
    bool pool_ = true;
};

/// Stacks images into [N, 3, H, W], mapping pixel values from [0,1] to [-1,1].
Tensor images_to_tensor(std::span<const Sample* const> samples);
Tensor images_to_tensor(std::span<const Image> images);

struct PretrainOptions {
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
    int held_out_frame = -1;  // frame index excluded from training; -1 = last frame
    // Rescale the final conv so training reals have unit mean squared feature norm.
    bool unit_norm_output = true;
};

struct PretrainResult {
    Encoder encoder;        // frozen
    double train_accuracy = 0.0;
    double held_out_accuracy = 0.0;
    int identities = 0;
    double output_scale = 1.0;
};

/// Trains the real-image encoder to classify identity_id, then freezes it.
PretrainResult pretrain_real_encoder(const std::vector<const Sample*>& reals, const EncoderSpec& spec,
                                     const PretrainOptions& options);

}  // namespace lsda
