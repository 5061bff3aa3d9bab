#pragma once

#include <span>
#include <vector>

// Ranking metrics for binary detection. Label 1 is the positive (fake) class;
// higher scores mean "more likely fake". All functions require at least one
// positive and one negative and throw Error(Argument) otherwise.

namespace lsda::metrics {

// Probability that a random positive outranks a random negative; ties count 1/2.
double auc(std::span<const double> scores, std::span<const int> labels);

// Average precision: sum over distinct thresholds (descending) of
// (recall_k - recall_{k-1}) * precision_k, tied scores forming one threshold.
double ap(std::span<const double> scores, std::span<const int> labels);

// Equal error rate. Thresholds are the distinct scores (predict fake when
// score >= t) plus +inf; FAR is the fraction of negatives accepted, FRR the
// fraction of positives rejected. Linear interpolation between the two
// thresholds that bracket FAR = FRR.
double eer(std::span<const double> scores, std::span<const int> labels);

// Mean score per group, then auc over groups. Every group must have a single label.
double group_auc(std::span<const double> scores, std::span<const int> labels, std::span<const long> group_ids);

}  // namespace lsda::metrics
