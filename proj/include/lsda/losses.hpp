#pragma once

#include <span>
#include <vector>

#include "lsda/autograd.hpp"

// Training objectives: domain classification, feature distillation, binary
// real/fake classification and their weighted total. Each loss has a value
// form on plain tensors and a recorded form on a Tape that shares the forward
// code.

namespace lsda {

struct LossWeights {
    double binary = 0.5;
    double domain = 1.0;
    double distill = 1.0;

    void validate() const;
};

struct LossBreakdown {
    double binary = 0.0;
    double domain = 0.0;
    double distill = 0.0;
    double total = 0.0;
};

namespace losses {

// Probabilities entering a log are clamped to [kProbClamp, 1 - kProbClamp].
inline constexpr double kProbClamp = 1e-7;

// Mean over rows of -log softmax(scores)[label]. scores [N, K], labels in 0..K-1.
double cross_entropy(const Tensor& scores, std::span<const int> labels);
Var cross_entropy(Tape& tape, Var scores, std::vector<int> labels);

// Mean over rows of binary cross-entropy of sigmoid(score). scores [N] or [N, 1]; labels 0/1.
double binary_cross_entropy(const Tensor& scores, std::span<const int> labels);
Var binary_cross_entropy(Tape& tape, Var scores, std::vector<int> labels);

// Mean of squared differences over all elements.
double mse(const Tensor& a, const Tensor& b);
Var mse(Tape& tape, Var a, Var b);

// Domain loss: cross-entropy of the domain scores of all (m+1)*B samples.
inline double domain_loss(const Tensor& scores, std::span<const int> labels) {
    return cross_entropy(scores, labels);
}

// Distillation loss: per-domain mean squared error, summed over domains.
double distill_loss(std::span<const Tensor> student, std::span<const Tensor> targets);
Var distill_loss(Tape& tape, const std::vector<Var>& student, const std::vector<Var>& targets);

// Binary loss: label 0 for real (domain 0), 1 for every forgery domain.
inline double binary_loss(const Tensor& scores, std::span<const int> labels) {
    return binary_cross_entropy(scores, labels);
}

// Throws Error(Divergence) when a component is not finite.
LossBreakdown total_loss(double binary, double domain, double distill, const LossWeights& weights);

}  // namespace losses

}  // namespace lsda
