#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "lsda/checkpoint.hpp"
#include "lsda/config.hpp"
#include "lsda/losses.hpp"
#include "lsda/model.hpp"
#include "lsda/optim.hpp"

namespace lsda {

// Which loss groups one update covers. Joint is the default; the two-phase
// mode alternates Teacher (domain loss) and Student (binary + distillation,
// teachers treated as constants).
enum class Phase { Joint, Teacher, Student };

struct ForwardPass {
    Var total, binary, domain, distill;  // binary/domain/distill may be invalid when skipped
    std::vector<Var> student_features;   // per domain position
    std::vector<Var> targets;            // F_0 then F_i
    std::vector<DomainAugmentTrace> trace;
    std::vector<double> feature_norms;   // teacher feature norm per position
    LossBreakdown breakdown;
};

/// Records the overall loss of one identity-aligned batch on `tape`.
/// batch[p][b] is position p (0 = real, p = fake_domains[p-1]).
/// `replay` pins the hard-example choices to an earlier pass (see augment_domain_batch).
ForwardPass forward_losses(Tape& tape, LsdaModel& model, const IdentityBatch& batch, const TrainConfig& config,
                           std::uint64_t augment_seed, Phase phase = Phase::Joint,
                           const std::vector<DomainAugmentTrace>* replay = nullptr);

/// Mean per-domain MSE between student features and distillation targets on a
/// batch, with augmentation drawn from `augment_seed`. No parameters change.
double distill_probe(LsdaModel& model, const IdentityBatch& batch, const TrainConfig& config,
                     std::uint64_t augment_seed);

struct StepRecord {
    std::uint64_t step = 0;  // 1-based count of completed updates
    int epoch = 0;
    LossBreakdown loss;
    std::vector<DomainAugmentTrace> trace;
};

/// Owns a model and its optimizer state and walks the seed-determined batch schedule.
class Trainer {
public:
    Trainer(TrainConfig config, const Dataset& dataset, const EncoderSpec& spec, Encoder real_encoder);

    const TrainConfig& config() const noexcept { return config_; }
    LsdaModel& model() noexcept { return *model_; }
    std::uint64_t step() const noexcept { return step_; }
    int steps_per_epoch() const noexcept { return steps_per_epoch_; }
    std::uint64_t total_steps() const noexcept;
    bool done() const noexcept { return step_ >= total_steps(); }

    // Batch used by update number `step` (0-based).
    IdentityBatch batch_for(std::uint64_t step) const;
    std::vector<int> domain_list() const;

    // One update on the scheduled batch.
    StepRecord train_step();
    // One update on an explicit batch, using update number step() for augmentation draws.
    StepRecord train_step(const IdentityBatch& batch);

    // Frame-level AUC of the student on val reals vs val training-domain fakes.
    double validation_auc();

    Checkpoint checkpoint(const Json& run_config) const;
    void restore(const Checkpoint& ckpt);

private:
    Phase phase_for(std::uint64_t step) const;

    TrainConfig config_;
    const Dataset* dataset_;
    std::unique_ptr<LsdaModel> model_;
    std::vector<std::unique_ptr<Adam>> optimizers_;
    std::vector<int> train_identities_;
    int steps_per_epoch_ = 0;
    std::uint64_t step_ = 0;
};

struct TrainOutputs {
    std::filesystem::path checkpoint;
    std::vector<StepRecord> steps;
    std::vector<std::pair<int, double>> val_auc;  // (epoch, auc)
};

/// Full training run writing metrics.jsonl, periodic and final checkpoints
/// (and augment_trace.jsonl when tracing) into out_dir. With `resume`, training
/// continues from that checkpoint and earlier metrics lines are kept.
TrainOutputs train(const RunConfig& config, const Dataset& dataset, const Encoder& real_encoder,
                   const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& resume = {});

// Real-encoder checkpoints produced by the pretraining stage.
Checkpoint real_encoder_checkpoint(const Encoder& encoder, const Json& run_config, const Json& meta);
Encoder load_real_encoder(const std::filesystem::path& path);

// sigmoid(student score) per image; only the student and the binary head are read.
std::vector<double> infer(const Checkpoint& ckpt, const Tensor& images);

}  // namespace lsda
