#include "lsda/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "lsda/error.hpp"

namespace lsda {

namespace {

void load_into(Parameter& p, const Checkpoint& ckpt) {
    const Tensor& t = ckpt.tensor(p.name);
    if (t.shape() != p.value.shape()) {
        fail(ErrorKind::CorruptCheckpoint, "checkpoint: tensor '" + p.name + "' has shape " + shape_str(t.shape()) +
                                               ", expected " + shape_str(p.value.shape()));
    }
    p.value = t;
    p.zero_grad();
}

}  // namespace

Detector::Detector(const EncoderSpec& spec, std::uint64_t seed)
    : student_("student", spec, derive_seed(seed, Stream::Init, {2})),
      binary_head_("binary_head", spec.latent_c, 1, true, derive_seed(seed, Stream::Init, {5})) {}

Detector Detector::from_checkpoint(const Checkpoint& ckpt) {
    require(ckpt.kind == "lsda", ErrorKind::CorruptCheckpoint, "checkpoint kind '" + ckpt.kind + "' has no student");
    if (!ckpt.config.contains("encoder")) fail(ErrorKind::CorruptCheckpoint, "checkpoint: no encoder spec");
    Detector d(encoder_spec_from_json(ckpt.config.at("encoder")), 0);
    for (Parameter& p : d.student_.parameters()) load_into(p, ckpt);
    for (Parameter* p : d.binary_head_.parameters()) load_into(*p, ckpt);
    return d;
}

std::vector<double> Detector::predict(const Tensor& images) {
    const Tensor scores = binary_head_.forward(student_.forward(images));
    std::vector<double> probs(scores.numel());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double s = scores[i];
        probs[i] = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
    }
    return probs;
}

std::vector<double> Detector::predict(const std::vector<const Sample*>& samples, int chunk) {
    std::vector<double> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(chunk));
        const std::vector<double> p =
            predict(images_to_tensor(std::span<const Sample* const>(samples.data() + start, end - start)));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

Tensor Detector::embed(const std::vector<const Sample*>& samples, int chunk) {
    require(!samples.empty(), ErrorKind::Argument, "embed: no samples");
    Tensor out(spec().latent_shape(static_cast<int>(samples.size())));
    const std::size_t per = out.slice_size();
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(chunk));
        const Tensor f =
            student_.forward(images_to_tensor(std::span<const Sample* const>(samples.data() + start, end - start)));
        std::copy(f.data(), f.data() + f.numel(), out.data() + start * per);
    }
    return out;
}

LsdaModel::LsdaModel(const EncoderSpec& spec, std::vector<int> fake_domains, Encoder real_encoder,
                     std::uint64_t seed)
    : spec_(spec),
      fake_domains_(std::move(fake_domains)),
      real_(std::move(real_encoder)),
      detector_(spec, seed),
      domain_head_("domain_head", spec.latent_c, static_cast<int>(fake_domains_.size()) + 1, true,
                   derive_seed(seed, Stream::Init, {4})),
      fusion_(spec.latent_c, derive_seed(seed, Stream::Init, {3})) {
    require(!fake_domains_.empty(), ErrorKind::Argument, "model: need at least one forgery domain");
    require(std::is_sorted(fake_domains_.begin(), fake_domains_.end()) &&
                std::adjacent_find(fake_domains_.begin(), fake_domains_.end()) == fake_domains_.end() &&
                fake_domains_.front() >= 1,
            ErrorKind::Argument, "model: forgery domains must be distinct, sorted and >= 1");
    require(real_.frozen(), ErrorKind::Precondition, "model: the real encoder must be pretrained and frozen");
    require(real_.spec() == spec, ErrorKind::Precondition,
            "model: real encoder latent shape differs from the shared encoder spec");

    teachers_.emplace_back("teacher0", spec, derive_seed(seed, Stream::Init, {1, 0}));
    for (int d : fake_domains_) {
        teachers_.emplace_back("teacher" + std::to_string(d), spec,
                               derive_seed(seed, Stream::Init, {1, static_cast<std::uint64_t>(d)}));
    }

    // No two networks may share a parameter object.
    std::set<const Parameter*> seen;
    for (Parameter* p : all_parameters()) {
        require(seen.insert(p).second, ErrorKind::Consistency, "model: parameter '" + p->name + "' is shared");
    }
}

std::vector<Parameter*> LsdaModel::teacher_group() {
    std::vector<Parameter*> out;
    for (Encoder& t : teachers_)
        for (Parameter& p : t.parameters()) out.push_back(&p);
    for (Parameter* p : domain_head_.parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> LsdaModel::detector_parameters() {
    std::vector<Parameter*> out;
    for (Parameter& p : student().parameters()) out.push_back(&p);
    for (Parameter* p : binary_head().parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> LsdaModel::student_group() {
    std::vector<Parameter*> out = detector_parameters();
    for (Parameter* p : fusion_.parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> LsdaModel::all_parameters() {
    std::vector<Parameter*> out = teacher_group();
    for (Parameter* p : student_group()) out.push_back(p);
    for (Parameter& p : real_.parameters()) out.push_back(&p);
    return out;
}

std::vector<Parameter*> LsdaModel::trainable_parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : all_parameters())
        if (p->trainable) out.push_back(p);
    return out;
}

std::vector<Parameter*> LsdaModel::frozen_parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : all_parameters())
        if (!p->trainable) out.push_back(p);
    return out;
}

void LsdaModel::export_tensors(Checkpoint& ckpt) {
    for (Parameter* p : all_parameters()) ckpt.tensors[p->name] = p->value;
}

void LsdaModel::import_tensors(const Checkpoint& ckpt) {
    for (Parameter* p : all_parameters()) load_into(*p, ckpt);
}

}  // namespace lsda
