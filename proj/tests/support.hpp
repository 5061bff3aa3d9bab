#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "lsda/config.hpp"
#include "lsda/model.hpp"
#include "lsda/rng.hpp"
#include "lsda/synth_data.hpp"
#include "lsda/trainer.hpp"

namespace lsda::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double sd = 1.0) {
    Tensor t(shape);
    for (double& v : t.values()) v = normal(rng, 0.0, sd);
    return t;
}


inline double l2(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() /
                ("lsda_" + name + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

// C=2, h=w=2 from 16x16 inputs.
inline EncoderSpec tiny_spec() {
    EncoderSpec s;
    s.image_h = 16;
    s.image_w = 16;
    s.widths = {4, 4};
    s.latent_c = 2;
    return s;
}

// In-memory training-only dataset: `identities` x `frames` units over domains 0..m.
inline Dataset memory_dataset(int identities, int frames, int m, int size, std::uint64_t seed) {
    DatasetConfig c;
    c.identities = identities;
    c.images_per_identity = frames;
    c.m = m;
    c.hold_out = 0;
    c.height = size;
    c.width = size;
    c.seed = seed;
    c.forgery.region = {size / 4, size / 4, size / 2, size / 2};
    std::vector<Sample> samples;
    for (const Sample& r : generate_real(identities, frames, seed, size, size)) {
        samples.push_back(r);
        for (int d = 1; d <= m; ++d)
            samples.push_back(apply_forgery(
                r, d, derive_seed(seed, Stream::Forgery, {static_cast<std::uint64_t>(r.identity_id),
                                                          static_cast<std::uint64_t>(r.frame)}),
                c.forgery));
    }
    return Dataset::from_samples(c, std::move(samples));
}

// Small on-disk setup: 16x16 images, tiny encoder, m = 3 with domain 3 held out.
inline RunConfig small_run_config(std::uint64_t seed = 1) {
    RunConfig c = run_config_from_json(profile_json("tiny"));
    c.data.identities = 16;
    c.data.m = 3;
    c.data.hold_out = 3;
    c.data.height = c.data.width = 16;
    c.data.forgery.region = {4, 4, 8, 8};
    c.data.seed = seed;
    c.encoder = tiny_spec();
    c.pretrain.epochs = 3;
    c.train.hold_out = 3;
    c.train.batch_identities = 2;
    c.train.epochs = 2;
    c.train.seed = seed;
    c.validate();
    return c;
}

inline std::vector<int> range_domains(int m) {
    std::vector<int> d(static_cast<std::size_t>(m) + 1);
    for (int i = 0; i <= m; ++i) d[static_cast<std::size_t>(i)] = i;
    return d;
}

inline Encoder frozen_encoder(const EncoderSpec& spec, std::uint64_t seed) {
    Encoder e("real_encoder", spec, seed);
    e.freeze();
    return e;
}

struct GradCheck {
    std::size_t checked = 0;
    std::size_t within = 0;  // relative error <= tight
    double worst = 0.0;
    std::string worst_name;
    double fraction() const { return checked ? static_cast<double>(within) / checked : 0.0; }
};

// |a - n| / max(|a|, |n|, floor): the floor keeps entries whose gradient is
// numerically zero from turning round-off into huge relative errors.
inline double relative_error(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Analytic total-loss gradient vs central differences for every trainable scalar.
inline GradCheck gradient_check(LsdaModel& model, const IdentityBatch& batch, const TrainConfig& config,
                                std::uint64_t aug_seed, double step = 1e-3, double tight = 1e-4) {
    const std::vector<Parameter*> params = model.trainable_parameters();
    for (Parameter* p : params) p->zero_grad();
    std::vector<DomainAugmentTrace> trace;
    {
        Tape tape;
        ForwardPass f = forward_losses(tape, model, batch, config, aug_seed);
        tape.backward(f.total);
        trace = f.trace;
    }
    // Hard-example ties (always present at B = 2) would otherwise flip under the probe.
    auto loss = [&] {
        Tape tape;
        return tape.scalar(forward_losses(tape, model, batch, config, aug_seed, Phase::Joint, &trace).total);
    };
    GradCheck r;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + step;
            const double up = loss();
            p->value[i] = keep - step;
            const double down = loss();
            p->value[i] = keep;
            const double numeric = (up - down) / (2 * step);
            const double e = relative_error(p->grad[i], numeric);
            r.checked += 1;
            r.within += e <= tight;
            if (e > r.worst) {
                r.worst = e;
                r.worst_name = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return r;
}

}  // namespace lsda::testing
