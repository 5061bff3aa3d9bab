#include "doctest.h"

#include <cmath>
#include <numbers>
#include <set>

#include "aug_properties.hpp"
#include "lsda/error.hpp"

using namespace lsda;
using namespace lsda::testing;

namespace {

Tensor flat(std::vector<std::vector<double>> rows) {
    const int b = static_cast<int>(rows.size()), c = static_cast<int>(rows[0].size());
    std::vector<double> v;
    for (auto& r : rows) v.insert(v.end(), r.begin(), r.end());
    return Tensor({b, c, 1, 1}, v);
}

}  // namespace

TEST_CASE("centroid") {
    Rng rng(1);
    const Tensor one = random_tensor({1, 3, 2, 2}, rng);
    CHECK(max_abs_diff(aug::centroid(one), one) == 0.0);

    const Tensor mu = aug::centroid(flat({{1, 3}, {3, 5}}));
    CHECK(mu[0] == 2.0);
    CHECK(mu[1] == 4.0);

    const Tensor z = random_tensor({8, 3, 4, 4}, rng);
    const Tensor got = aug::centroid(z);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                double s = 0.0;
                for (int n = 0; n < 8; ++n) s += z.at(n, c, y, x);
                CHECK(std::abs(got.at(0, c, y, x) - s / 8) <= 1e-12);
            }
    CHECK_THROWS_AS(aug::centroid(Tensor({0, 2, 1, 1})), Error);
}

TEST_CASE("centrifugal_direct") {
    Rng rng(2);
    const Tensor z = random_tensor({3, 2, 2, 2}, rng);
    const Tensor mu = aug::centroid(z);
    const std::vector<double> zero{0.0}, half{0.5};
    CHECK(max_abs_diff(aug::centrifugal_direct(z, mu, zero), z) == 0.0);
    CHECK(max_abs_diff(aug::centrifugal_direct(mu, mu, std::vector<double>{0.7}), mu) == 0.0);
    CHECK(aug::centrifugal_direct(flat({{2}}), flat({{1}}), half)[0] == doctest::Approx(2.5).epsilon(1e-15));
    CHECK_THROWS_AS(aug::centrifugal_direct(z, random_tensor({1, 3, 2, 2}, rng), half), Error);
    CHECK_THROWS_AS(aug::centrifugal_direct(z, mu, std::vector<double>{1.5}), Error);
}

TEST_CASE("hardest_example: farthest sample, lowest index on ties") {
    const Tensor tie = flat({{0}, {10}});
    CHECK(aug::hardest_index(tie, aug::centroid(tie)) == 0);
    CHECK(aug::hardest_example(tie, aug::centroid(tie))[0] == 0.0);

    const Tensor z = flat({{0}, {9}, {1}});
    CHECK(aug::hardest_example(z, aug::centroid(z))[0] == 9.0);

    Rng rng(3);
    const Tensor one = random_tensor({1, 2, 2, 2}, rng);
    CHECK(max_abs_diff(aug::hardest_example(one, aug::centroid(one)), one) == 0.0);

    // A duplicate of the farthest sample does not change the answer.
    const Tensor mu = flat({{10.0 / 3}});
    const Tensor dup = flat({{0}, {9}, {1}, {9}});
    CHECK(aug::hardest_example(dup, mu)[0] == 9.0);
    CHECK(aug::hardest_index(dup, mu) == 1);
}

TEST_CASE("centrifugal_indirect") {
    Rng rng(4);
    const Tensor z = random_tensor({4, 2, 2, 2}, rng);
    const Tensor a = aug::hardest_example(z, aug::centroid(z));
    CHECK(max_abs_diff(aug::centrifugal_indirect(z, a, std::vector<double>{0.0}), z) == 0.0);
    const Tensor end = aug::centrifugal_indirect(z, a, std::vector<double>{1.0});
    for (int j = 0; j < 4; ++j) CHECK(sample_distance(end, j, a, 0) <= 1e-12);
    CHECK(aug::centrifugal_indirect(flat({{2}}), flat({{6}}), std::vector<double>{0.25})[0] == 3.0);
}

TEST_CASE("affine_rotate") {
    Rng rng(5);
    const Tensor z = random_tensor({2, 3, 4, 4}, rng);
    CHECK(max_abs_diff(aug::affine_rotate(z, 0.0), z) == 0.0);
    CHECK(max_abs_diff(aug::affine_rotate(z, 2 * std::numbers::pi), z) == 0.0);

    // [[a,b],[c,d]] -> [[b,d],[a,c]]
    const Tensor q({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor r = aug::affine_rotate(q, std::numbers::pi / 2);
    CHECK(r[0] == 2.0);
    CHECK(r[1] == 4.0);
    CHECK(r[2] == 1.0);
    CHECK(r[3] == 3.0);

    // Independent oracle: rotate each integer grid point about the centre.
    for (int s : {3, 4, 5}) {
        for (double theta : {0.3, -0.45, 1.0}) {
            const std::vector<int> map = aug::rotation_source_map(s, s, theta);
            const double cc = (s - 1) / 2.0;
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    const double dy = y - cc, dx = x - cc;
                    const double sy = std::cos(theta) * dy + std::sin(theta) * dx + cc;
                    const double sx = -std::sin(theta) * dy + std::cos(theta) * dx + cc;
                    const long ry = std::lround(sy), rx = std::lround(sx);
                    const int want = ry >= 0 && ry < s && rx >= 0 && rx < s ? static_cast<int>(ry * s + rx) : -1;
                    CHECK(map[y * s + x] == want);
                }
        }
    }

    // Channel and batch axes are untouched: each plane moves on its own.
    const Tensor rz = aug::affine_rotate(z, 0.4);
    const Tensor single = aug::affine_rotate(Tensor({1, 1, 4, 4}, std::vector<double>(z.data() + 16, z.data() + 32)), 0.4);
    for (int i = 0; i < 16; ++i) CHECK(rz[16 + i] == single[i]);
}

TEST_CASE("additive_gmm: identity at beta 0, Monte Carlo mean and variance") {
    Rng rng(6);
    const Tensor z = random_tensor({2, 2, 2, 2}, rng);
    GmmConfig abs_gmm;
    abs_gmm.relative_to_feature_std = false;
    CHECK(max_abs_diff(aug::additive_gmm(z, std::vector<double>{0.0}, abs_gmm, rng), z) == 0.0);

    // 10^4 per-sample draws of a single-element feature.
    const double beta = 0.8;
    const int n = 10000;
    Rng draws(7);
    const Tensor zero({n, 1, 1, 1});
    const Tensor out = aug::additive_gmm(zero, std::vector<double>{beta}, abs_gmm, draws);
    double mean = 0.0, sq = 0.0;
    for (double v : out.values()) mean += v;
    mean /= n;
    for (double v : out.values()) sq += (v - mean) * (v - mean);
    const double var = sq / (n - 1);
    const double expected = beta * beta * abs_gmm.mixture_variance();
    CHECK(std::abs(mean) <= 4 * std::sqrt(expected / n));
    CHECK(std::abs(var - expected) <= 0.05 * expected);

    GmmConfig bad;
    bad.weights = {0.5, 0.5};
    CHECK_THROWS_AS(aug::additive_gmm(z, std::vector<double>{0.5}, bad, rng), Error);
    bad.weights = {1, 1, 1};
    bad.sigmas = {0.1, 0.0, 0.1};
    CHECK_THROWS_AS(aug::additive_gmm(z, std::vector<double>{0.5}, bad, rng), Error);
}

TEST_CASE("mixup_cross") {
    Rng rng(8);
    const Tensor a = random_tensor({2, 2, 1, 1}, rng), b = random_tensor({2, 2, 1, 1}, rng);
    CHECK(max_abs_diff(aug::mixup_cross(a, b, std::vector<double>{1.0}), a) == 0.0);
    const Tensor mid = aug::mixup_cross(flat({{2, 0}}), flat({{0, 2}}), std::vector<double>{0.5});
    CHECK(mid[0] == 1.0);
    CHECK(mid[1] == 1.0);
    CHECK(aug::mixup_cross(flat({{1}}), flat({{11}}), std::vector<double>{0.3})[0] == doctest::Approx(8.0).epsilon(1e-14));
    CHECK_THROWS_AS(aug::mixup_cross(a, random_tensor({2, 3, 1, 1}, rng), std::vector<double>{0.3}), Error);
}

TEST_CASE("fuse: shape, selector and average kernels") {
    Rng rng(9);
    const Tensor z = random_tensor({3, 4, 2, 2}, rng), zw = random_tensor({3, 4, 2, 2}, rng),
                 zc = random_tensor({3, 4, 2, 2}, rng);
    FusionLayers layers(4, 11);
    {
        Tape tape;
        const Var f = fuse(tape, tape.constant(z), tape.constant(zw), tape.constant(zc), layers);
        CHECK(tape.value(f).shape() == Shape{3, 4, 2, 2});
    }
    layers.set_selector();
    {
        Tape tape;
        const Var f = fuse(tape, tape.constant(z), tape.constant(zw), tape.constant(zc), layers);
        CHECK(max_abs_diff(tape.value(f), z) <= 1e-15);
    }
    layers.set_average();
    {
        Tape tape;
        const Tensor& f = tape.value(fuse(tape, tape.constant(z), tape.constant(zw), tape.constant(zc), layers));
        double worst = 0.0;
        for (std::size_t i = 0; i < z.numel(); ++i)
            worst = std::max(worst, std::abs(f[i] - (0.25 * zw[i] + 0.25 * zc[i] + 0.5 * z[i])));
        CHECK(worst <= 1e-12);
    }
    {
        Tape tape;
        CHECK_THROWS_AS(fuse(tape, tape.constant(z), tape.constant(random_tensor({3, 4, 1, 1}, rng)),
                             tape.constant(zc), layers),
                        Error);
    }
}

TEST_CASE("augment_domain_batch: pass-through, preconditions, reproducibility") {
    Rng rng(10);
    const Tensor z0 = random_tensor({4, 2, 2, 2}, rng), z1 = random_tensor({4, 2, 2, 2}, rng);
    FusionLayers layers(2, 3);
    layers.set_selector();
    AugmentConfig off;
    off.wd_enabled = false;
    off.cd_enabled = false;
    {
        Tape tape;
        const auto f = augment_domain_batch(tape, {tape.constant(z0), tape.constant(z1)}, off, layers, 5);
        CHECK(max_abs_diff(tape.value(f[0]), z0) <= 1e-15);
        CHECK(max_abs_diff(tape.value(f[1]), z1) <= 1e-15);
    }

    AugmentConfig on;
    {
        Tape tape;
        try {
            augment_domain_batch(tape, {tape.constant(z0)}, on, layers, 5);
            FAIL("expected an error for CD with one forgery domain");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Config);
        }
    }

    FusionLayers generic(2, 4);
    for (std::uint64_t seed : {1, 2, 3, 4, 5, 6, 7, 8}) {
        std::vector<DomainAugmentTrace> ta, tb;
        Tape a, b;
        const auto fa = augment_domain_batch(a, {a.constant(z0), a.constant(z1)}, on, generic, seed, &ta);
        const auto fb = augment_domain_batch(b, {b.constant(z0), b.constant(z1)}, on, generic, seed, &tb);
        for (int i = 0; i < 2; ++i) {
            const Tensor &x = a.value(fa[i]), &y = b.value(fb[i]);
            for (std::size_t k = 0; k < x.numel(); ++k) CHECK(x[k] == y[k]);
            CHECK(ta[i].op == tb[i].op);
            CHECK(ta[i].partner == 1 - i);
            CHECK(ta[i].alphas == tb[i].alphas);
        }
    }
    // Each WD op is reachable.
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        std::vector<DomainAugmentTrace> t;
        Tape tape;
        augment_domain_batch(tape, {tape.constant(z0), tape.constant(z1)}, on, generic, seed, &t);
        for (const auto& r : t) seen.insert(r.op);
    }
    CHECK(seen.size() == 4);
}

TEST_CASE("augmentation invariants over random instances") {
    for (const PropertyResult& r : augmentation_properties(50, 2024)) {
        INFO(r.name);
        CHECK(r.worst <= 1e-6);
    }
}

TEST_CASE("recorded ops match finite differences") {
    Rng rng(12);
    Parameter z("z", random_tensor({3, 2, 3, 3}, rng));
    const Tensor target = random_tensor(z.value.shape(), rng);
    const Tensor noise = random_tensor(z.value.shape(), rng);
    const std::vector<double> beta{0.2, 0.5, 0.9};

    using Build = std::function<Var(Tape&, Var)>;
    const std::vector<std::pair<std::string, Build>> cases = {
        {"centroid+direct", [&](Tape& t, Var v) { return aug::centrifugal_direct(t, v, aug::centroid(t, v), beta); }},
        {"indirect", [&](Tape& t, Var v) { return aug::centrifugal_indirect(t, v, aug::select_sample(t, v, 1), beta); }},
        {"rotate", [&](Tape& t, Var v) { return aug::affine_rotate(t, v, 0.5); }},
        {"additive", [&](Tape& t, Var v) { return aug::additive(t, v, beta, noise, true); }},
        {"mixup", [&](Tape& t, Var v) { return aug::mixup_cross(t, v, t.constant(target), beta); }},
    };
    for (const auto& [name, build] : cases) {
        INFO(name);
        auto loss = [&](bool backward) {
            Tape tape;
            const Var l = losses::mse(tape, build(tape, tape.parameter(z)), tape.constant(target));
            if (backward) tape.backward(l);
            return tape.scalar(l);
        };
        z.zero_grad();
        loss(true);
        double worst = 0.0;
        for (std::size_t i = 0; i < z.value.numel(); ++i) {
            const double keep = z.value[i], h = 1e-5;
            z.value[i] = keep + h;
            const double up = loss(false);
            z.value[i] = keep - h;
            const double down = loss(false);
            z.value[i] = keep;
            worst = std::max(worst, relative_error(z.grad[i], (up - down) / (2 * h)));
        }
        CHECK(worst <= 1e-6);
    }
}
