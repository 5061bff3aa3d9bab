#include "lsda/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lsda/error.hpp"
#include "lsda/metrics.hpp"

namespace lsda {

namespace fs = std::filesystem;

namespace {

std::string describe_draws(const std::vector<DomainAugmentTrace>& trace, const std::vector<double>& norms) {
    std::ostringstream out;
    out << "last draws:";
    for (const DomainAugmentTrace& t : trace) {
        out << " [domain " << t.domain << " op=" << t.op;
        if (!t.betas.empty()) out << " beta0=" << t.betas.front();
        if (t.op == "affine") out << " theta=" << t.theta;
        if (t.partner >= 0) out << " partner=" << t.partner << " alpha0=" << t.alphas.front();
        out << "]";
    }
    out << "; teacher feature norms:";
    for (double n : norms) out << " " << n;
    return out.str();
}

Tensor stack_positions(const IdentityBatch& batch) {
    std::vector<const Sample*> all;
    for (const auto& list : batch) all.insert(all.end(), list.begin(), list.end());
    return images_to_tensor(all);
}

Json trace_json(std::uint64_t step, const DomainAugmentTrace& t, const std::vector<int>& fake_domains) {
    Json j = {{"step", step},
              {"domain", fake_domains.at(static_cast<std::size_t>(t.domain))},
              {"op", t.op},
              {"betas", t.betas},
              {"theta", t.theta},
              {"components", t.components},
              {"alphas", t.alphas}};
    j["partner"] = t.partner >= 0 ? Json(fake_domains.at(static_cast<std::size_t>(t.partner))) : Json(nullptr);
    return j;
}

}  // namespace

ForwardPass forward_losses(Tape& tape, LsdaModel& model, const IdentityBatch& batch, const TrainConfig& config,
                           std::uint64_t augment_seed, Phase phase, const std::vector<DomainAugmentTrace>* replay) {
    const int positions = model.positions();
    require(static_cast<int>(batch.size()) == positions, ErrorKind::Argument,
            "forward_losses: batch has " + std::to_string(batch.size()) + " domain lists, model expects " +
                std::to_string(positions));
    const int b = static_cast<int>(batch.front().size());
    for (const auto& list : batch) {
        require(static_cast<int>(list.size()) == b && b >= 1, ErrorKind::Argument,
                "forward_losses: domain lists must be non-empty and of equal length");
    }
    const LossWeights& w = config.weights;
    ForwardPass fp;

    std::vector<Tensor> images;
    for (const auto& list : batch) images.push_back(images_to_tensor(list));

    // Teachers and the domain loss.
    std::vector<Var> z;
    if (!config.student_only) {
        for (int p = 0; p < positions; ++p) {
            Encoder& teacher = model.teacher(p);
            z.push_back(phase == Phase::Student ? tape.constant(teacher.forward(images[static_cast<std::size_t>(p)]))
                                                : teacher.forward(tape, tape.constant(images[static_cast<std::size_t>(p)])));
            fp.feature_norms.push_back(std::sqrt(squared_norm(tape.value(z.back()))));
        }
        if (phase != Phase::Student) {
            std::vector<int> labels;
            for (int p = 0; p < positions; ++p) labels.insert(labels.end(), static_cast<std::size_t>(b), p);
            fp.domain = losses::cross_entropy(tape, model.domain_head().forward(tape, ops::concat_batch(tape, z)),
                                              std::move(labels));
        }
    }

    if (phase == Phase::Teacher) {
        const double d = tape.scalar(fp.domain);
        fp.breakdown = losses::total_loss(0.0, d, 0.0, w);
        fp.total = ops::weighted_sum(tape, {fp.domain}, {w.domain});
        return fp;
    }

    // Student on all positions at once.
    Var student_all = model.student().forward(tape, tape.constant(stack_positions(batch)));
    for (int p = 0; p < positions; ++p) fp.student_features.push_back(ops::slice_batch(tape, student_all, p * b, b));
    std::vector<int> binary_labels(static_cast<std::size_t>(b), 0);
    binary_labels.insert(binary_labels.end(), static_cast<std::size_t>(b) * (positions - 1), 1);
    fp.binary = losses::binary_cross_entropy(tape, model.binary_head().forward(tape, student_all),
                                             std::move(binary_labels));

    if (!config.student_only) {
        // Distillation targets: frozen real encoder for reals, fused augmentations for fakes.
        fp.targets.push_back(tape.constant(model.real_encoder().forward(images.front())));
        std::vector<Var> fakes(z.begin() + 1, z.end());
        for (Var f : fakes) {
            require(f.id != z.front().id, ErrorKind::Consistency, "real features routed into augmentation");
        }
        std::vector<Var> fused =
            augment_domain_batch(tape, fakes, config.augment, model.fusion(), augment_seed, &fp.trace, replay);
        for (Var f : fused) fp.targets.push_back(config.detach_targets ? ops::detach(tape, f) : f);
        fp.distill = losses::distill_loss(tape, fp.student_features, fp.targets);
    }

    const double bin = tape.scalar(fp.binary);
    const double dom = fp.domain.valid() ? tape.scalar(fp.domain) : 0.0;
    const double dis = fp.distill.valid() ? tape.scalar(fp.distill) : 0.0;
    try {
        fp.breakdown = losses::total_loss(bin, dom, dis, w);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::Divergence) throw;
        throw Error(ErrorKind::Divergence, std::string(e.what()) + "; " + describe_draws(fp.trace, fp.feature_norms));
    }

    std::vector<Var> terms{fp.binary};
    std::vector<double> weights{w.binary};
    if (fp.domain.valid()) {
        terms.push_back(fp.domain);
        weights.push_back(w.domain);
    }
    if (fp.distill.valid()) {
        terms.push_back(fp.distill);
        weights.push_back(w.distill);
    }
    fp.total = ops::weighted_sum(tape, terms, weights);
    return fp;
}

double distill_probe(LsdaModel& model, const IdentityBatch& batch, const TrainConfig& config,
                     std::uint64_t augment_seed) {
    TrainConfig probe = config;
    probe.student_only = false;
    Tape tape;
    const ForwardPass fp = forward_losses(tape, model, batch, probe, augment_seed, Phase::Student);
    return fp.breakdown.distill / static_cast<double>(model.positions());
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, const Dataset& dataset, const EncoderSpec& spec, Encoder real_encoder)
    : config_(std::move(config)), dataset_(&dataset) {
    config_.validate();
    require(dataset.config().hold_out == config_.hold_out, ErrorKind::Config,
            "train.hold_out=" + std::to_string(config_.hold_out) + " but the dataset holds out domain " +
                std::to_string(dataset.config().hold_out));
    const std::vector<int> fakes = dataset.training_fake_domains();
    if (config_.augment.cd_enabled && !config_.student_only && fakes.size() < 2) {
        fail(ErrorKind::Config, "cross-domain augmentation needs at least 2 training forgery domains");
    }
    model_ = std::make_unique<LsdaModel>(spec, fakes, std::move(real_encoder), config_.seed);

    train_identities_ = dataset.identities(Split::Train);
    steps_per_epoch_ = static_cast<int>(train_identities_.size()) / config_.batch_identities;
    require(steps_per_epoch_ >= 1, ErrorKind::Precondition,
            "need at least " + std::to_string(config_.batch_identities) + " training identities, have " +
                std::to_string(train_identities_.size()));

    const Adam::Options opts{config_.learning_rate};
    if (config_.student_only) {
        optimizers_.push_back(std::make_unique<Adam>(model_->detector_parameters(), opts));
    } else if (config_.two_phase) {
        optimizers_.push_back(std::make_unique<Adam>(model_->teacher_group(), opts));
        optimizers_.push_back(std::make_unique<Adam>(model_->student_group(), opts));
    } else {
        optimizers_.push_back(std::make_unique<Adam>(model_->trainable_parameters(), opts));
    }
}

std::uint64_t Trainer::total_steps() const noexcept {
    const std::uint64_t full = static_cast<std::uint64_t>(config_.epochs) * static_cast<std::uint64_t>(steps_per_epoch_);
    return config_.max_steps > 0 ? std::min<std::uint64_t>(full, static_cast<std::uint64_t>(config_.max_steps)) : full;
}

std::vector<int> Trainer::domain_list() const {
    std::vector<int> ds{0};
    for (int d : model_->fake_domains()) ds.push_back(d);
    return ds;
}

IdentityBatch Trainer::batch_for(std::uint64_t step) const {
    const std::uint64_t epoch = step / static_cast<std::uint64_t>(steps_per_epoch_);
    const std::uint64_t index = step % static_cast<std::uint64_t>(steps_per_epoch_);
    Rng order_rng = make_rng(config_.seed, Stream::Batch, {epoch});
    const auto batches = epoch_identity_batches(train_identities_, config_.batch_identities, order_rng);
    Rng frame_rng = make_rng(config_.seed, Stream::Batch, {epoch, index + 1});
    return assemble_batch(*dataset_, batches.at(index), domain_list(), frame_rng);
}

Phase Trainer::phase_for(std::uint64_t step) const {
    if (!config_.two_phase || config_.student_only) return Phase::Joint;
    return step % 2 == 0 ? Phase::Teacher : Phase::Student;
}

StepRecord Trainer::train_step() { return train_step(batch_for(step_)); }

StepRecord Trainer::train_step(const IdentityBatch& batch) {
    const Phase phase = phase_for(step_);
    Tape tape;
    ForwardPass fp = forward_losses(tape, *model_, batch, config_,
                                    derive_seed(config_.seed, Stream::Augment, {step_}), phase);
    for (Parameter* p : model_->all_parameters()) p->grad.fill(0.0);
    tape.backward(fp.total);
    for (Parameter* p : model_->frozen_parameters()) {
        require(squared_norm(p->grad) == 0.0, ErrorKind::Consistency,
                "frozen parameter '" + p->name + "' received gradient");
    }
    Adam& opt = *optimizers_.at(phase == Phase::Student ? 1 : 0);
    opt.step();

    StepRecord rec;
    rec.epoch = static_cast<int>(step_ / static_cast<std::uint64_t>(steps_per_epoch_));
    rec.step = ++step_;
    rec.loss = fp.breakdown;
    rec.trace = std::move(fp.trace);
    return rec;
}

double Trainer::validation_auc() {
    const std::vector<const Sample*> samples = dataset_->select(Split::Val, domain_list());
    std::vector<int> labels;
    for (const Sample* s : samples) labels.push_back(s->domain > 0 ? 1 : 0);
    const std::vector<double> probs = model_->detector().predict(samples);
    return metrics::auc(probs, labels);
}

Checkpoint Trainer::checkpoint(const Json& run_config) const {
    Checkpoint c;
    c.kind = "lsda";
    c.config = run_config;
    c.meta = {{"fake_domains", model_->fake_domains()},
              {"dataset_checksum", dataset_->checksum()},
              {"steps_per_epoch", steps_per_epoch_}};
    c.step = step_;
    model_->export_tensors(c);
    for (const auto& opt : optimizers_) {
        OptimizerState s;
        s.t = opt->step_count();
        s.moments = opt->state();
        c.optimizers.push_back(std::move(s));
    }
    return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
    require(ckpt.kind == "lsda", ErrorKind::CorruptCheckpoint, "cannot resume from a '" + ckpt.kind + "' checkpoint");
    require(ckpt.meta.value("fake_domains", std::vector<int>{}) == model_->fake_domains(), ErrorKind::Consistency,
            "checkpoint was trained on different forgery domains");
    require(ckpt.meta.value("dataset_checksum", std::string()) == dataset_->checksum(), ErrorKind::Consistency,
            "checkpoint was trained on a different dataset");
    require(ckpt.optimizers.size() == optimizers_.size(), ErrorKind::CorruptCheckpoint,
            "checkpoint optimizer count does not match the training mode");
    model_->import_tensors(ckpt);
    for (std::size_t i = 0; i < optimizers_.size(); ++i) {
        optimizers_[i]->load_state(ckpt.optimizers[i].moments, ckpt.optimizers[i].t);
    }
    step_ = ckpt.step;
}

// ---------------------------------------------------------------------------

TrainOutputs train(const RunConfig& config, const Dataset& dataset, const Encoder& real_encoder,
                   const fs::path& out_dir, const std::optional<fs::path>& resume) {
    config.validate();
    fs::create_directories(out_dir);
    const Json cfg = to_json(config);
    Trainer trainer(config.train, dataset, config.encoder, real_encoder);
    const auto spe = static_cast<std::uint64_t>(trainer.steps_per_epoch());

    TrainOutputs out;
    std::vector<Json> kept_metrics, kept_trace;
    if (resume) {
        const Checkpoint ckpt = Checkpoint::load(*resume);
        require(ckpt.config_hash == config_hash(cfg), ErrorKind::Config,
                "resume: checkpoint config hash differs from the current config");
        trainer.restore(ckpt);
        auto keep = [&](const fs::path& path, std::vector<Json>& into) {
            std::ifstream in(path);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                Json j = Json::parse(line);
                const bool ok = j.contains("step") ? j.at("step").get<std::uint64_t>() <= ckpt.step
                                                   : static_cast<std::uint64_t>(j.at("epoch").get<int>() + 1) * spe <= ckpt.step;
                if (ok) into.push_back(std::move(j));
            }
        };
        keep(out_dir / "metrics.jsonl", kept_metrics);
        if (config.train.trace_augment) keep(out_dir / "augment_trace.jsonl", kept_trace);
        for (const Json& j : kept_metrics) {
            if (j.contains("step")) {
                StepRecord r;
                r.step = j.at("step");
                r.epoch = j.at("epoch");
                r.loss = {j.at("binary"), j.at("domain"), j.at("distill"), j.at("total")};
                out.steps.push_back(r);
            } else {
                out.val_auc.emplace_back(j.at("epoch").get<int>(), j.at("val_auc").get<double>());
            }
        }
    }

    std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
    require(static_cast<bool>(metrics), ErrorKind::Io, "cannot write metrics.jsonl in " + out_dir.string());
    for (const Json& j : kept_metrics) metrics << j.dump() << '\n';
    std::ofstream trace;
    if (config.train.trace_augment) {
        trace.open(out_dir / "augment_trace.jsonl", std::ios::trunc);
        for (const Json& j : kept_trace) trace << j.dump() << '\n';
    }

    while (!trainer.done()) {
        StepRecord rec = trainer.train_step();
        metrics << Json{{"step", rec.step},
                        {"epoch", rec.epoch},
                        {"binary", rec.loss.binary},
                        {"domain", rec.loss.domain},
                        {"distill", rec.loss.distill},
                        {"total", rec.loss.total}}
                       .dump()
                << '\n';
        if (trace.is_open()) {
            for (const DomainAugmentTrace& t : rec.trace) {
                trace << trace_json(rec.step, t, trainer.model().fake_domains()).dump() << '\n';
            }
        }
        out.steps.push_back(rec);
        if (rec.step % spe == 0 || trainer.done()) {
            const double val = trainer.validation_auc();
            metrics << Json{{"epoch", rec.epoch}, {"val_auc", val}}.dump() << '\n';
            metrics.flush();
            out.val_auc.emplace_back(rec.epoch, val);
            const int finished = rec.epoch + 1;
            if (config.train.checkpoint_every > 0 && rec.step % spe == 0 &&
                finished % config.train.checkpoint_every == 0) {
                trainer.checkpoint(cfg).save(out_dir / ("ckpt_epoch" + std::to_string(finished) + ".bin"));
            }
        }
    }
    out.checkpoint = out_dir / "checkpoint.bin";
    trainer.checkpoint(cfg).save(out.checkpoint);
    return out;
}

Checkpoint real_encoder_checkpoint(const Encoder& encoder, const Json& run_config, const Json& meta) {
    Checkpoint c;
    c.kind = "real-encoder";
    c.config = run_config;
    c.meta = meta;
    for (const Parameter& p : encoder.parameters()) c.tensors[p.name] = p.value;
    return c;
}

Encoder load_real_encoder(const fs::path& path) {
    const Checkpoint ckpt = Checkpoint::load(path);
    require(ckpt.kind == "real-encoder", ErrorKind::CorruptCheckpoint,
            path.string() + " is a '" + ckpt.kind + "' checkpoint, not a real encoder");
    Encoder enc("real_encoder", encoder_spec_from_json(ckpt.config.at("encoder")), 0);
    for (Parameter& p : enc.parameters()) {
        const Tensor& t = ckpt.tensor(p.name);
        require(t.shape() == p.value.shape(), ErrorKind::CorruptCheckpoint, "real encoder: shape mismatch for " + p.name);
        p.value = t;
    }
    enc.freeze();
    return enc;
}

std::vector<double> infer(const Checkpoint& ckpt, const Tensor& images) {
    return Detector::from_checkpoint(ckpt).predict(images);
}

}  // namespace lsda
