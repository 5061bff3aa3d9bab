#pragma once

// Brute-force metric oracles: pairwise counting for AUC, direct counting at
// every distinct threshold for AP and EER. Quadratic, test-only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <vector>

#include "lsda/metrics.hpp"
#include "lsda/rng.hpp"

namespace lsda::testing {

inline double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return wins / pairs;
}

struct Operating {
    double tp = 0, fp = 0;
};

inline Operating count_at(const std::vector<double>& s, const std::vector<int>& y, double t) {
    Operating o;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] >= t) (y[i] ? o.tp : o.fp) += 1;
    return o;
}

inline std::vector<double> thresholds_desc(const std::vector<double>& s) {
    std::set<double, std::greater<>> t(s.begin(), s.end());
    return {t.begin(), t.end()};
}

inline double ap_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
    double prev_recall = 0.0, total = 0.0;
    for (double t : thresholds_desc(s)) {
        const Operating o = count_at(s, y, t);
        const double recall = o.tp / pos;
        total += (recall - prev_recall) * (o.tp / (o.tp + o.fp));
        prev_recall = recall;
    }
    return total;
}

inline double eer_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
    const double neg = static_cast<double>(y.size()) - pos;
    std::vector<double> ts{std::numeric_limits<double>::infinity()};
    for (double t : thresholds_desc(s)) ts.push_back(t);
    double prev_far = 0.0, prev_frr = 1.0;
    for (double t : ts) {
        const Operating o = count_at(s, y, t);
        const double far = o.fp / neg, frr = 1.0 - o.tp / pos;
        if (far >= frr) {
            const double d0 = prev_far - prev_frr, d1 = far - frr;
            if (d1 == d0) return far;
            return prev_far + (-d0 / (d1 - d0)) * (far - prev_far);
        }
        prev_far = far;
        prev_frr = frr;
    }
    return 1.0;
}

struct MetricInstance {
    std::vector<double> scores;
    std::vector<int> labels;
};

// n <= 30, both classes present; a third of the instances draw scores from a
// coarse grid so ties are common.
inline MetricInstance random_metric_instance(Rng& rng) {
    MetricInstance m;
    const int n = uniform_int(rng, 2, 30);
    const bool coarse = uniform_int(rng, 0, 2) == 0;
    for (int i = 0; i < n; ++i) {
        m.scores.push_back(coarse ? uniform_int(rng, 0, 4) / 4.0 : uniform(rng));
        m.labels.push_back(uniform_int(rng, 0, 1));
    }
    m.labels[0] = 1;
    m.labels[1] = 0;
    return m;
}

// Largest |metric - oracle| over all three metrics and all instances.
inline double metric_oracle_gap(int instances, std::uint64_t seed) {
    Rng rng = make_rng(seed, Stream::Test, {0x6d6574});
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        const MetricInstance m = random_metric_instance(rng);
        worst = std::max({worst, std::abs(metrics::auc(m.scores, m.labels) - auc_oracle(m.scores, m.labels)),
                          std::abs(metrics::ap(m.scores, m.labels) - ap_oracle(m.scores, m.labels)),
                          std::abs(metrics::eer(m.scores, m.labels) - eer_oracle(m.scores, m.labels))});
    }
    return worst;
}

}  // namespace lsda::testing
