#include "doctest.h"

#include <cmath>
#include <limits>

#include "lsda/error.hpp"
#include "lsda/losses.hpp"
#include "support.hpp"

using namespace lsda;
using namespace lsda::testing;

namespace {

double ce_oracle(const Tensor& s, const std::vector<int>& labels) {
    const int n = s.dim(0), k = s.dim(1);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(s[i * k + j]);
        total += -(s[i * k + labels[i]] - std::log(z));
    }
    return total / n;
}

double bce_oracle(const Tensor& s, const std::vector<int>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < s.numel(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-s[i]));
        total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return total / static_cast<double>(s.numel());
}

}  // namespace

TEST_CASE("domain loss: limits, uniform value, loop oracle") {
    Tensor uniform_scores({4, 5}, 0.3);
    CHECK(losses::domain_loss(uniform_scores, std::vector<int>{0, 1, 2, 4}) ==
          doctest::Approx(std::log(5.0)).epsilon(1e-14));

    Tensor confident({3, 3}, 0.0);
    for (int i = 0; i < 3; ++i) confident[i * 3 + i] = 60.0;
    // Approaches 0 down to the clamp floor -log(1 - kProbClamp).
    CHECK(losses::domain_loss(confident, std::vector<int>{0, 1, 2}) <= -std::log1p(-losses::kProbClamp) + 1e-15);

    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        // B = 4 per domain, m = 2: 12 rows over 3 classes.
        const Tensor s = random_tensor({12, 3}, rng, 2.0);
        std::vector<int> labels;
        for (int d = 0; d < 3; ++d)
            for (int b = 0; b < 4; ++b) labels.push_back(d);
        CHECK(std::abs(losses::domain_loss(s, labels) - ce_oracle(s, labels)) <= 1e-10);
        Tape tape;
        CHECK(std::abs(tape.scalar(losses::cross_entropy(tape, tape.constant(s), labels)) - ce_oracle(s, labels)) <=
              1e-10);
    }
    CHECK_THROWS_AS(losses::domain_loss(uniform_scores, std::vector<int>{0, 1, 2, 5}), Error);
    CHECK_THROWS_AS(losses::domain_loss(uniform_scores, std::vector<int>{0, 1, -1, 2}), Error);
}

TEST_CASE("distill loss: zero, constant offset, oracle, per-domain mean then sum") {
    Rng rng(2);
    const Tensor a = random_tensor({2, 3, 2, 2}, rng);
    CHECK(losses::distill_loss(std::vector<Tensor>{a}, std::vector<Tensor>{a}) == 0.0);

    Tensor shifted = a;
    for (double& v : shifted.values()) v += 0.7;
    CHECK(losses::distill_loss(std::vector<Tensor>{shifted}, std::vector<Tensor>{a}) ==
          doctest::Approx(0.49).epsilon(1e-12));

    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Tensor> s, t;
        double oracle = 0.0;
        for (int d = 0; d < 3; ++d) {
            s.push_back(random_tensor({2, 3, 2, 2}, rng));
            t.push_back(random_tensor({2, 3, 2, 2}, rng));
            double sq = 0.0;
            for (int n = 0; n < 2; ++n)
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < 2; ++y)
                        for (int x = 0; x < 2; ++x) {
                            const double diff = s[d].at(n, c, y, x) - t[d].at(n, c, y, x);
                            sq += diff * diff;
                        }
            oracle += sq / 24;
        }
        CHECK(std::abs(losses::distill_loss(s, t) - oracle) <= 1e-10);
        Tape tape;
        std::vector<Var> vs, vt;
        for (int d = 0; d < 3; ++d) {
            vs.push_back(tape.constant(s[d]));
            vt.push_back(tape.constant(t[d]));
        }
        CHECK(std::abs(tape.scalar(losses::distill_loss(tape, vs, vt)) - oracle) <= 1e-10);
    }
    CHECK_THROWS_AS(losses::distill_loss(std::vector<Tensor>{a}, std::vector<Tensor>{random_tensor({2, 3, 1, 1}, rng)}),
                    Error);
}

TEST_CASE("binary loss: ln 2, separation, oracle, clamping") {
    const Tensor zero({6}, 0.0);
    CHECK(losses::binary_loss(zero, std::vector<int>{0, 1, 1, 0, 1, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    const Tensor separated({4}, {-40.0, 40.0, 40.0, -40.0});
    CHECK(losses::binary_loss(separated, std::vector<int>{0, 1, 1, 0}) < 1e-6);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor s = random_tensor({9}, rng, 3.0);
        std::vector<int> labels;
        for (int i = 0; i < 9; ++i) labels.push_back(i % 3 == 0 ? 0 : 1);
        CHECK(std::abs(losses::binary_loss(s, labels) - bce_oracle(s, labels)) <= 1e-10);
    }

    // Confidently wrong: the clamp keeps the value finite at -log(1e-7).
    const Tensor wrong({2}, {1000.0, -1000.0});
    const double v = losses::binary_loss(wrong, std::vector<int>{0, 1});
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(-std::log(losses::kProbClamp)).epsilon(1e-9));
    CHECK(losses::cross_entropy(Tensor({1, 2}, {1000.0, -1000.0}), std::vector<int>{1}) <=
          -std::log(losses::kProbClamp) + 1e-9);
}

TEST_CASE("total loss: weights, linearity, divergence") {
    const LossWeights w;
    CHECK(losses::total_loss(1, 1, 1, w).total == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(losses::total_loss(0.3, 1.7, 2.2, LossWeights{0, 0, 0}).total == 0.0);

    const LossBreakdown a = losses::total_loss(0.3, 1.7, 2.2, w);
    const LossBreakdown b = losses::total_loss(0.3, 1.7, 2.2, LossWeights{1.0, 2.0, 2.0});
    CHECK(std::abs(b.total - 2 * a.total) <= 1e-12 * a.total);
    CHECK(std::abs(a.total - (0.5 * 0.3 + 1.7 + 2.2)) <= 1e-9 * a.total);

    try {
        losses::total_loss(std::numeric_limits<double>::quiet_NaN(), 1, 1, w);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Divergence);
    }
    CHECK_THROWS_AS(losses::total_loss(1, std::numeric_limits<double>::infinity(), 1, w), Error);
    CHECK_THROWS_AS(LossWeights({-0.1, 1, 1}).validate(), Error);
}

TEST_CASE("total loss gradient on the tiny model") {
    const Dataset data = memory_dataset(4, 2, 2, 16, 7);
    const EncoderSpec spec = tiny_spec();
    for (std::uint64_t seed : {1, 2}) {
        LsdaModel model(spec, {1, 2}, frozen_encoder(spec, 40 + seed), seed);
        Rng rng(seed);
        const IdentityBatch batch = sample_identity_batch(data, Split::Train, 2, range_domains(2), rng);
        TrainConfig config;
        const GradCheck g = gradient_check(model, batch, config, 100 + seed, 1e-5, 1e-4);
        INFO("worst " << g.worst << " at " << g.worst_name);
        CHECK(g.fraction() == 1.0);
    }
}

TEST_CASE("a zero-weight term contributes no gradient") {
    const Dataset data = memory_dataset(4, 2, 2, 16, 8);
    const EncoderSpec spec = tiny_spec();
    Rng rng(4);
    const IdentityBatch batch = sample_identity_batch(data, Split::Train, 2, range_domains(2), rng);

    auto grads = [&](LossWeights w) {
        LsdaModel model(spec, {1, 2}, frozen_encoder(spec, 9), 5);
        TrainConfig config;
        config.weights = w;
        Tape tape;
        const ForwardPass f = forward_losses(tape, model, batch, config, 77);
        tape.backward(f.total);
        std::vector<double> g;
        for (Parameter* p : model.trainable_parameters())
            for (double v : p->grad.values()) g.push_back(v);
        return g;
    };
    // Full minus (distill off) equals the distill-only gradient, and so on for each term.
    const std::vector<double> full = grads({0.5, 1, 1});
    const std::vector<LossWeights> drop = {{0, 1, 1}, {0.5, 0, 1}, {0.5, 1, 0}};
    const std::vector<LossWeights> only = {{0.5, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (std::size_t t = 0; t < 3; ++t) {
        const std::vector<double> without = grads(drop[t]), alone = grads(only[t]);
        double worst = 0.0;
        for (std::size_t i = 0; i < full.size(); ++i)
            worst = std::max(worst, std::abs(full[i] - without[i] - alone[i]));
        CHECK(worst <= 1e-10);
    }
    for (double v : grads({0, 0, 0})) CHECK(v == 0.0);
}
