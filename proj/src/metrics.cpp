#include "lsda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "lsda/error.hpp"

namespace lsda::metrics {

namespace {

struct Counts {
    std::size_t pos = 0, neg = 0;
};

Counts check(std::span<const double> scores, std::span<const int> labels, const char* what) {
    require(scores.size() == labels.size(), ErrorKind::Argument,
            std::string(what) + ": " + std::to_string(scores.size()) + " scores but " +
                std::to_string(labels.size()) + " labels");
    Counts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] == 0 || labels[i] == 1, ErrorKind::Argument, std::string(what) + ": labels must be 0/1");
        require(std::isfinite(scores[i]), ErrorKind::Argument, std::string(what) + ": non-finite score");
        (labels[i] == 1 ? c.pos : c.neg) += 1;
    }
    require(c.pos > 0 && c.neg > 0, ErrorKind::Argument,
            std::string(what) + ": need at least one positive and one negative");
    return c;
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

// Cumulative (true positives, false positives) after each distinct threshold, descending.
std::vector<std::pair<std::size_t, std::size_t>> sweep(std::span<const double> scores, std::span<const int> labels) {
    const std::vector<std::size_t> order = descending(scores);
    std::vector<std::pair<std::size_t, std::size_t>> points;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (labels[order[i]] == 1 ? tp : fp) += 1;
        if (i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]]) points.emplace_back(tp, fp);
    }
    return points;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
    const Counts c = check(scores, labels, "auc");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U from midranks.
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum += midrank;
        i = j;
    }
    const double p = static_cast<double>(c.pos), n = static_cast<double>(c.neg);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double ap(std::span<const double> scores, std::span<const int> labels) {
    const Counts c = check(scores, labels, "ap");
    double result = 0.0;
    double prev_recall = 0.0;
    for (const auto& [tp, fp] : sweep(scores, labels)) {
        const double recall = static_cast<double>(tp) / static_cast<double>(c.pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        result += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return result;
}

double eer(std::span<const double> scores, std::span<const int> labels) {
    const Counts c = check(scores, labels, "eer");
    double prev_far = 0.0, prev_d = -1.0;  // threshold +inf: nothing accepted
    for (const auto& [tp, fp] : sweep(scores, labels)) {
        const double far = static_cast<double>(fp) / static_cast<double>(c.neg);
        const double frr = 1.0 - static_cast<double>(tp) / static_cast<double>(c.pos);
        const double d = far - frr;
        if (d >= 0.0) {
            const double t = -prev_d / (d - prev_d);
            return prev_far + t * (far - prev_far);
        }
        prev_far = far;
        prev_d = d;
    }
    return 1.0;  // unreachable: the last threshold accepts everything (d = 1)
}

double group_auc(std::span<const double> scores, std::span<const int> labels, std::span<const long> group_ids) {
    require(group_ids.size() == scores.size(), ErrorKind::Argument, "group_auc: one group id per score required");
    check(scores, labels, "group_auc");
    struct Acc {
        double sum = 0.0;
        std::size_t n = 0;
        int label = -1;
    };
    std::map<long, Acc> groups;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        Acc& a = groups[group_ids[i]];
        if (a.label >= 0 && a.label != labels[i]) {
            fail(ErrorKind::Argument, "group_auc: group " + std::to_string(group_ids[i]) + " mixes labels");
        }
        a.label = labels[i];
        a.sum += scores[i];
        a.n += 1;
    }
    std::vector<double> means;
    std::vector<int> group_labels;
    for (const auto& [id, a] : groups) {
        means.push_back(a.sum / static_cast<double>(a.n));
        group_labels.push_back(a.label);
    }
    return auc(means, group_labels);
}

}  // namespace lsda::metrics
