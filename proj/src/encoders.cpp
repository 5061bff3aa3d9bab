#include "lsda/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lsda/error.hpp"
#include "lsda/kernels.hpp"
#include "lsda/losses.hpp"
#include "lsda/optim.hpp"
#include "lsda/rng.hpp"

namespace lsda {

namespace {

int conv_out(int size) { return (size + 2 - 3) / 2 + 1; }

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(2.0 / fan_in);
    for (double& v : t.values()) v = normal(rng, 0.0, sd);
    return t;
}

}  // namespace

int EncoderSpec::latent_h() const noexcept {
    int h = image_h;
    for (int i = 0; i < blocks(); ++i) h = conv_out(h);
    return h;
}

int EncoderSpec::latent_w() const noexcept {
    int w = image_w;
    for (int i = 0; i < blocks(); ++i) w = conv_out(w);
    return w;
}

void EncoderSpec::validate() const {
    require(image_h >= 4 && image_w >= 4 && in_channels >= 1 && latent_c >= 1, ErrorKind::Config,
            "encoder spec: invalid sizes");
    for (int w : widths) require(w >= 1, ErrorKind::Config, "encoder spec: block widths must be positive");
}

Encoder::Encoder(std::string name, const EncoderSpec& spec, std::uint64_t init_seed)
    : name_(std::move(name)), spec_(spec) {
    spec.validate();
    Rng rng(init_seed);
    int in_c = spec.in_channels;
    std::vector<int> outs = spec.widths;
    outs.push_back(spec.latent_c);
    for (std::size_t i = 0; i < outs.size(); ++i) {
        const int out_c = outs[i];
        params_.emplace_back(name_ + ".conv" + std::to_string(i) + ".weight",
                             he_normal({out_c, in_c, 3, 3}, in_c * 9, rng));
        params_.emplace_back(name_ + ".conv" + std::to_string(i) + ".bias", Tensor({out_c}));
        in_c = out_c;
    }
}

Var Encoder::forward(Tape& tape, Var images) {
    const Tensor& x = tape.value(images);
    require(x.rank() == 4 && x.dim(1) == spec_.in_channels && x.dim(2) == spec_.image_h &&
                x.dim(3) == spec_.image_w,
            ErrorKind::Argument, name_ + ": expected images [B,3," + std::to_string(spec_.image_h) + "," +
                                     std::to_string(spec_.image_w) + "], got " + shape_str(x.shape()));
    Var h = images;
    const std::size_t layers = params_.size() / 2;
    for (std::size_t i = 0; i < layers; ++i) {
        Var w = tape.parameter(params_[2 * i]);
        Var b = tape.parameter(params_[2 * i + 1]);
        h = ops::conv2d(tape, h, w, b, 2, 1);
        if (i + 1 < layers) h = ops::silu(tape, h);
    }
    return h;
}

Tensor Encoder::forward(const Tensor& images) {
    require(images.rank() == 4 && images.dim(1) == spec_.in_channels && images.dim(2) == spec_.image_h &&
                images.dim(3) == spec_.image_w,
            ErrorKind::Argument, name_ + ": image shape mismatch " + shape_str(images.shape()));
    Tensor h = images;
    const std::size_t layers = params_.size() / 2;
    for (std::size_t i = 0; i < layers; ++i) {
        h = kernels::conv2d_forward(h, params_[2 * i].value, params_[2 * i + 1].value, 2, 1);
        if (i + 1 < layers) h = kernels::silu_forward(h);
    }
    return h;
}

void Encoder::freeze() {
    for (Parameter& p : params_) {
        p.trainable = false;
        p.grad.fill(0.0);
    }
}

bool Encoder::frozen() const noexcept {
    return std::none_of(params_.begin(), params_.end(), [](const Parameter& p) { return p.trainable; });
}

LinearHead::LinearHead(std::string name, int in_features, int out_features, bool pool, std::uint64_t init_seed)
    : pool_(pool) {
    require(in_features >= 1 && out_features >= 1, ErrorKind::Argument, "head: invalid feature counts");
    Rng rng(init_seed);
    Tensor w({out_features, in_features});
    const double sd = std::sqrt(1.0 / in_features);
    for (double& v : w.values()) v = normal(rng, 0.0, sd);
    weight_ = Parameter(name + ".weight", std::move(w));
    bias_ = Parameter(name + ".bias", Tensor({out_features}));
}

Var LinearHead::forward(Tape& tape, Var features) {
    const Tensor& f = tape.value(features);
    if (pool_) {
        check_rank(f, 4, "head input");
        require(f.dim(1) == weight_.value.dim(1), ErrorKind::Argument,
                weight_.name + ": feature channels do not match " + shape_str(f.shape()));
    }
    Var x = pool_ ? ops::global_avg_pool(tape, features) : features;
    return ops::linear(tape, x, tape.parameter(weight_), tape.parameter(bias_));
}

Tensor LinearHead::forward(const Tensor& features) {
    if (pool_) {
        check_rank(features, 4, "head input");
        require(features.dim(1) == weight_.value.dim(1), ErrorKind::Argument,
                weight_.name + ": feature channels do not match " + shape_str(features.shape()));
    }
    const Tensor x = pool_ ? kernels::global_avg_pool(features) : features;
    return kernels::linear_forward(x, weight_.value, bias_.value);
}

Tensor images_to_tensor(std::span<const Sample* const> samples) {
    require(!samples.empty(), ErrorKind::Argument, "images_to_tensor: empty batch");
    const int h = samples.front()->image.height, w = samples.front()->image.width;
    Tensor t({static_cast<int>(samples.size()), 3, h, w});
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const Image& img = samples[n]->image;
        require(img.height == h && img.width == w, ErrorKind::Argument, "images_to_tensor: mixed image sizes");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = 2.0 * img.at(y, x, c) - 1.0;
    }
    return t;
}

Tensor images_to_tensor(std::span<const Image> images) {
    std::vector<Sample> holders(images.size());
    std::vector<const Sample*> ptrs;
    for (std::size_t i = 0; i < images.size(); ++i) {
        holders[i].image = images[i];
        ptrs.push_back(&holders[i]);
    }
    return images_to_tensor(ptrs);
}

PretrainResult pretrain_real_encoder(const std::vector<const Sample*>& reals, const EncoderSpec& spec,
                                     const PretrainOptions& options) {
    std::map<int, int> class_of;
    int max_frame = 0;
    for (const Sample* s : reals) {
        require(s->domain == 0, ErrorKind::Precondition, "pretrain_real_encoder: non-real sample supplied");
        class_of.emplace(s->identity_id, 0);
        max_frame = std::max(max_frame, s->frame);
    }
    require(class_of.size() >= 2, ErrorKind::Argument, "pretrain_real_encoder: need at least 2 identities");
    require(options.epochs >= 1 && options.batch_size >= 1, ErrorKind::Argument,
            "pretrain_real_encoder: epochs and batch_size must be positive");
    int next = 0;
    for (auto& [id, cls] : class_of) cls = next++;
    const int classes = next;

    const int held_frame = options.held_out_frame >= 0 ? options.held_out_frame : max_frame;
    std::vector<const Sample*> train, held;
    for (const Sample* s : reals) {
        (max_frame > 0 && s->frame == held_frame ? held : train).push_back(s);
    }

    PretrainResult result;
    result.identities = classes;
    Encoder encoder("real_encoder", spec, derive_seed(options.seed, Stream::Init, {1000}));
    const int features = spec.latent_c * spec.latent_h() * spec.latent_w();
    LinearHead head("identity_head", features, classes, false, derive_seed(options.seed, Stream::Init, {1001}));

    std::vector<Parameter*> params;
    for (Parameter& p : encoder.parameters()) params.push_back(&p);
    for (Parameter* p : head.parameters()) params.push_back(p);
    Adam adam(params, Adam::Options{options.learning_rate});

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::vector<const Sample*> order = train;
        Rng rng = make_rng(options.seed, Stream::Pretrain, {static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t end = std::min(order.size(), start + options.batch_size);
            std::span<const Sample* const> chunk(order.data() + start, end - start);
            std::vector<int> labels;
            for (const Sample* s : chunk) labels.push_back(class_of.at(s->identity_id));
            Tape tape;
            Var x = tape.constant(images_to_tensor(chunk));
            Var logits = head.forward(tape, encoder.forward(tape, x));
            Var loss = losses::cross_entropy(tape, logits, labels);
            adam.zero_grad();
            tape.backward(loss);
            adam.step();
        }
    }

    auto accuracy = [&](const std::vector<const Sample*>& set) {
        if (set.empty()) return 0.0;
        int correct = 0;
        for (std::size_t start = 0; start < set.size(); start += 64) {
            const std::size_t end = std::min(set.size(), start + 64);
            std::span<const Sample* const> chunk(set.data() + start, end - start);
            const Tensor logits = head.forward(encoder.forward(images_to_tensor(chunk)));
            for (std::size_t i = 0; i < chunk.size(); ++i) {
                const double* row = logits.data() + i * classes;
                const int pred = static_cast<int>(std::max_element(row, row + classes) - row);
                correct += pred == class_of.at(chunk[i]->identity_id);
            }
        }
        return static_cast<double>(correct) / static_cast<double>(set.size());
    };
    result.train_accuracy = accuracy(train);
    result.held_out_accuracy = held.empty() ? result.train_accuracy : accuracy(held);

    if (options.unit_norm_output) {
        // The identity head sees the flattened latent, so scaling the last conv
        // is exact. Target: mean squared L2 norm per training real of 1.
        double ss = 0.0;
        for (std::size_t start = 0; start < train.size(); start += 64) {
            const std::size_t end = std::min(train.size(), start + 64);
            const Tensor f = encoder.forward(images_to_tensor(std::span<const Sample* const>(train.data() + start, end - start)));
            for (double v : f.values()) ss += v * v;
        }
        const double norm = std::sqrt(ss / static_cast<double>(train.size()));
        require(norm > 0.0, ErrorKind::Divergence, "pretrain_real_encoder: real features collapsed to zero");
        result.output_scale = 1.0 / norm;
        auto& ps = encoder.parameters();
        for (std::size_t i = ps.size() - 2; i < ps.size(); ++i)
            for (double& v : ps[i].value.values()) v *= result.output_scale;
    }
    encoder.freeze();
    result.encoder = std::move(encoder);
    return result;
}

}  // namespace lsda
