#include "lsda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lsda/error.hpp"

namespace lsda {

void LossWeights::validate() const {
    require(binary >= 0 && domain >= 0 && distill >= 0, ErrorKind::Config, "loss weights must be >= 0");
}

namespace losses {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }
bool clamped(double p) { return p < kProbClamp || p > 1.0 - kProbClamp; }

double sigmoid(double s) {
    return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

void check_scores(const Tensor& scores, std::size_t n_labels, const char* what) {
    require(scores.rank() >= 1 && static_cast<std::size_t>(scores.dim(0)) == n_labels, ErrorKind::Argument,
            std::string(what) + ": " + std::to_string(n_labels) + " labels for scores " + shape_str(scores.shape()));
}

// Softmax probability of the labelled class for row i.
double row_softmax_prob(const double* row, int classes, int label, std::vector<double>* probs) {
    const double max = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (int k = 0; k < classes; ++k) denom += std::exp(row[k] - max);
    if (probs != nullptr) {
        probs->resize(classes);
        for (int k = 0; k < classes; ++k) (*probs)[k] = std::exp(row[k] - max) / denom;
    }
    return std::exp(row[label] - max) / denom;
}

}  // namespace

double cross_entropy(const Tensor& scores, std::span<const int> labels) {
    check_scores(scores, labels.size(), "cross_entropy");
    require(!labels.empty(), ErrorKind::Argument, "cross_entropy: empty batch");
    const int classes = static_cast<int>(scores.slice_size());
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && labels[i] < classes, ErrorKind::Argument,
                "cross_entropy: label " + std::to_string(labels[i]) + " out of range 0.." +
                    std::to_string(classes - 1));
        const double p = row_softmax_prob(scores.data() + i * classes, classes, labels[i], nullptr);
        total -= std::log(clamp_prob(p));
    }
    return total / static_cast<double>(labels.size());
}

Var cross_entropy(Tape& tape, Var scores, std::vector<int> labels) {
    const double value = cross_entropy(tape.value(scores), labels);
    return tape.record(Tensor({1}, value), {scores}, [=](Tape& t, const Tensor& gy) {
        const Tensor& s = t.value(scores);
        Tensor& ds = t.grad(scores);
        const int classes = static_cast<int>(s.slice_size());
        const double scale = gy[0] / static_cast<double>(labels.size());
        std::vector<double> probs;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const double p = row_softmax_prob(s.data() + i * classes, classes, labels[i], &probs);
            if (clamped(p)) continue;
            for (int k = 0; k < classes; ++k) {
                ds[i * classes + k] += scale * (probs[k] - (k == labels[i] ? 1.0 : 0.0));
            }
        }
    });
}

double binary_cross_entropy(const Tensor& scores, std::span<const int> labels) {
    check_scores(scores, labels.size(), "binary_cross_entropy");
    require(scores.numel() == labels.size() && !labels.empty(), ErrorKind::Argument,
            "binary_cross_entropy: expected one score per sample");
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] == 0 || labels[i] == 1, ErrorKind::Argument, "binary_cross_entropy: labels must be 0/1");
        const double p = clamp_prob(sigmoid(scores[i]));
        total -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
    }
    return total / static_cast<double>(labels.size());
}

Var binary_cross_entropy(Tape& tape, Var scores, std::vector<int> labels) {
    const double value = binary_cross_entropy(tape.value(scores), labels);
    return tape.record(Tensor({1}, value), {scores}, [=](Tape& t, const Tensor& gy) {
        const Tensor& s = t.value(scores);
        Tensor& ds = t.grad(scores);
        const double scale = gy[0] / static_cast<double>(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const double p = sigmoid(s[i]);
            if (clamped(p)) continue;
            ds[i] += scale * (p - labels[i]);
        }
    });
}

double mse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse");
    require(a.numel() > 0, ErrorKind::Argument, "mse: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.numel());
}

Var mse(Tape& tape, Var a, Var b) {
    const double value = mse(tape.value(a), tape.value(b));
    return tape.record(Tensor({1}, value), {a, b}, [=](Tape& t, const Tensor& gy) {
        const Tensor& va = t.value(a);
        const Tensor& vb = t.value(b);
        const double scale = 2.0 * gy[0] / static_cast<double>(va.numel());
        if (t.requires_grad(a)) {
            Tensor& da = t.grad(a);
            for (std::size_t i = 0; i < va.numel(); ++i) da[i] += scale * (va[i] - vb[i]);
        }
        if (t.requires_grad(b)) {
            Tensor& db = t.grad(b);
            for (std::size_t i = 0; i < va.numel(); ++i) db[i] -= scale * (va[i] - vb[i]);
        }
    });
}

double distill_loss(std::span<const Tensor> student, std::span<const Tensor> targets) {
    require(student.size() == targets.size() && !student.empty(), ErrorKind::Argument,
            "distill_loss: need one target per student feature map");
    double total = 0.0;
    for (std::size_t d = 0; d < student.size(); ++d) total += mse(student[d], targets[d]);
    return total;
}

Var distill_loss(Tape& tape, const std::vector<Var>& student, const std::vector<Var>& targets) {
    require(student.size() == targets.size() && !student.empty(), ErrorKind::Argument,
            "distill_loss: need one target per student feature map");
    std::vector<Var> terms;
    for (std::size_t d = 0; d < student.size(); ++d) terms.push_back(mse(tape, student[d], targets[d]));
    return ops::weighted_sum(tape, terms, std::vector<double>(terms.size(), 1.0));
}

LossBreakdown total_loss(double binary, double domain, double distill, const LossWeights& weights) {
    if (!std::isfinite(binary) || !std::isfinite(domain) || !std::isfinite(distill)) {
        std::ostringstream msg;
        msg << "non-finite loss component: binary=" << binary << " domain=" << domain << " distill=" << distill;
        fail(ErrorKind::Divergence, msg.str());
    }
    LossBreakdown out{binary, domain, distill, 0.0};
    out.total = weights.binary * binary + weights.domain * domain + weights.distill * distill;
    return out;
}

}  // namespace losses

}  // namespace lsda
