#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lsda/config.hpp"
#include "lsda/model.hpp"

namespace lsda {

struct MetricsReport {
    double auc = 0.0;
    double ap = 0.0;
    double eer = 0.0;
    int n_pos = 0;
    int n_neg = 0;
    std::string split;          // e.g. "test:0v5"
    std::string level = "frame";
    std::optional<PerturbKind> perturbation;
    int severity = 0;           // 0 = clean

    Json to_json() const;
};

MetricsReport make_report(const std::vector<double>& scores, const std::vector<int>& labels, std::string split);

struct EvalReport {
    MetricsReport frame;
    // Mean probability per (domain, group_id), the video-level analogue.
    MetricsReport group;
};

// Scores `samples` (label = domain > 0) and reports frame- and group-level metrics.
EvalReport evaluate_samples(Detector& detector, const std::vector<const Sample*>& samples, const std::string& split);

/// Test reals vs test fakes of the held-out domain j (absent from training).
EvalReport evaluate_held_out(Detector& detector, const Dataset& dataset, int hold_out);
/// Reals vs fakes of `domains` (default: the training forgery domains) on `split`.
EvalReport evaluate_in_domain(Detector& detector, const Dataset& dataset, Split split,
                              std::optional<std::vector<int>> domains = {});

/// Held-out frame-level AUC per (kind, severity); the first row is the clean run (severity 0).
std::vector<MetricsReport> robustness_sweep(Detector& detector, const Dataset& dataset, int hold_out,
                                            const std::vector<PerturbKind>& kinds, int max_severity,
                                            std::uint64_t seed);

struct EmbeddingExport {
    Tensor features;                  // [N, C*h*w]
    std::vector<const Sample*> samples;
    std::vector<double> mean;         // [D]
    std::vector<std::vector<double>> components;  // 2 x [D], unit length
    std::vector<double> explained_variance;       // 2, descending
    std::vector<std::array<double, 2>> coords;    // [N]
};

EmbeddingExport export_embeddings(Detector& detector, const std::vector<const Sample*>& samples);
// embeddings.tsv (metadata, pc1, pc2, features) and pca.json (mean, components, variances).
void write_embeddings(const EmbeddingExport& e, const std::filesystem::path& out_dir);

struct AblationVariant {
    std::string name;
    bool wd = false;
    bool cd = false;
    bool student_only = false;
};

// (off,off), WD, CD, WD+CD; optionally the student-only baseline.
std::vector<AblationVariant> ablation_grid(bool with_baseline);
TrainConfig apply_variant(TrainConfig config, const AblationVariant& v);

struct AblationRow {
    AblationVariant variant;
    std::vector<std::uint64_t> seeds;
    std::vector<MetricsReport> held_out;  // per seed
    std::vector<std::filesystem::path> checkpoints;
    double mean(double MetricsReport::*field) const;
    double sd(double MetricsReport::*field) const;  // sample standard deviation
};

struct AblationResult {
    std::vector<AblationRow> rows;
    const AblationRow& row(const std::string& name) const;
    std::string table() const;  // human-readable, mean +- sd
    Json to_json() const;
};

/// Trains every variant for every seed (out_dir/<variant>/seed<k>) and evaluates held-out metrics.
AblationResult ablate(const RunConfig& config, const Dataset& dataset, const Encoder& real_encoder,
                      const std::vector<AblationVariant>& grid, const std::vector<std::uint64_t>& seeds,
                      const std::filesystem::path& out_dir);

}  // namespace lsda
