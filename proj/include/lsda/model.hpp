#pragma once

#include <cstdint>
#include <vector>

#include "lsda/checkpoint.hpp"
#include "lsda/encoders.hpp"
#include "lsda/latent_aug.hpp"

namespace lsda {

/// Inference-time network: the student encoder and the binary head.
class Detector {
public:
    Detector() = default;
    Detector(const EncoderSpec& spec, std::uint64_t seed);

    // Loads only student.* and binary_head.* tensors.
    static Detector from_checkpoint(const Checkpoint& ckpt);

    Encoder& student() noexcept { return student_; }
    LinearHead& binary_head() noexcept { return binary_head_; }
    const EncoderSpec& spec() const noexcept { return student_.spec(); }

    // Fake probability sigmoid(score) per image; images [N,3,H,W].
    std::vector<double> predict(const Tensor& images);
    std::vector<double> predict(const std::vector<const Sample*>& samples, int chunk = 64);
    // Student features [N,C,h,w].
    Tensor embed(const std::vector<const Sample*>& samples, int chunk = 64);

private:
    Encoder student_;
    LinearHead binary_head_;
};

/// Every network of one training run.
///
/// Domain positions: 0 is real, p = 1..M is fake_domains[p-1]. Teachers are
/// named by their domain id ("teacher0", "teacher3", ...); the domain head
/// scores positions.
class LsdaModel {
public:
    LsdaModel(const EncoderSpec& spec, std::vector<int> fake_domains, Encoder real_encoder, std::uint64_t seed);

    const EncoderSpec& spec() const noexcept { return spec_; }
    const std::vector<int>& fake_domains() const noexcept { return fake_domains_; }
    int positions() const noexcept { return static_cast<int>(fake_domains_.size()) + 1; }

    Encoder& teacher(int position) { return teachers_.at(static_cast<std::size_t>(position)); }
    Encoder& real_encoder() noexcept { return real_; }
    Detector& detector() noexcept { return detector_; }
    Encoder& student() noexcept { return detector_.student(); }
    LinearHead& binary_head() noexcept { return detector_.binary_head(); }
    LinearHead& domain_head() noexcept { return domain_head_; }
    FusionLayers& fusion() noexcept { return fusion_; }

    // Fixed order: teachers, domain head, student, binary head, fusion, real encoder.
    std::vector<Parameter*> all_parameters();
    std::vector<Parameter*> trainable_parameters();
    std::vector<Parameter*> frozen_parameters();
    // Two-phase groups: teachers + domain head; student + binary head + fusion.
    std::vector<Parameter*> teacher_group();
    std::vector<Parameter*> student_group();
    // Student + binary head only.
    std::vector<Parameter*> detector_parameters();

    void export_tensors(Checkpoint& ckpt);
    void import_tensors(const Checkpoint& ckpt);

private:
    EncoderSpec spec_;
    std::vector<int> fake_domains_;
    std::vector<Encoder> teachers_;
    Encoder real_;
    Detector detector_;
    LinearHead domain_head_;
    FusionLayers fusion_;
};

}  // namespace lsda
