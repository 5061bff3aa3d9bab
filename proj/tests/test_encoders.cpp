#include "doctest.h"

#include <set>

#include "lsda/error.hpp"
#include "lsda/model.hpp"
#include "support.hpp"

using namespace lsda;
using namespace lsda::testing;

TEST_CASE("encoder: latent shape and spec validation") {
    const EncoderSpec spec = tiny_spec();
    CHECK(spec.latent_h() == 2);
    CHECK(spec.latent_w() == 2);
    Encoder e("enc", spec, 1);
    Rng rng(1);
    const Tensor x = random_tensor({3, 3, 16, 16}, rng);
    CHECK(e.forward(x).shape() == Shape{3, 2, 2, 2});
    Tape tape;
    const Var v = e.forward(tape, tape.constant(x));
    CHECK(max_abs_diff(tape.value(v), e.forward(x)) <= 1e-13);

    EncoderSpec bad = spec;
    bad.latent_c = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = spec;
    bad.image_h = 2;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_THROWS_AS(e.forward(random_tensor({1, 3, 8, 8}, rng)), Error);
}

TEST_CASE("teachers are distinct networks with disjoint parameters") {
    const EncoderSpec spec = tiny_spec();
    LsdaModel model(spec, {1, 2, 4}, frozen_encoder(spec, 9), 3);
    Rng rng(2);
    const Tensor x = random_tensor({2, 3, 16, 16}, rng);
    for (int a = 0; a < model.positions(); ++a)
        for (int b = a + 1; b < model.positions(); ++b)
            CHECK(max_abs_diff(model.teacher(a).forward(x), model.teacher(b).forward(x)) > 1e-6);

    std::set<const Parameter*> seen;
    std::set<std::string> names;
    for (Parameter* p : model.all_parameters()) {
        CHECK(seen.insert(p).second);
        CHECK(names.insert(p->name).second);
    }
    CHECK(names.count("teacher4.conv0.weight") == 1);
    for (const Parameter* p : model.frozen_parameters()) CHECK(p->name.rfind("real_encoder", 0) == 0);
    CHECK(model.trainable_parameters().size() + model.frozen_parameters().size() == model.all_parameters().size());
}

TEST_CASE("frozen real encoder receives no gradient") {
    const EncoderSpec spec = tiny_spec();
    Encoder e = frozen_encoder(spec, 4);
    CHECK(e.frozen());
    Rng rng(3);
    Tape tape;
    const Var f = e.forward(tape, tape.constant(random_tensor({2, 3, 16, 16}, rng)));
    CHECK_FALSE(tape.requires_grad(f));
    for (const Parameter& p : e.parameters())
        for (double g : p.grad.values()) CHECK(g == 0.0);
}

TEST_CASE("detector: only the student path matters at inference") {
    const EncoderSpec spec = tiny_spec();
    LsdaModel model(spec, {1, 2}, frozen_encoder(spec, 4), 6);
    Rng rng(4);
    const Tensor x = random_tensor({3, 3, 16, 16}, rng);
    const std::vector<double> before = model.detector().predict(x);
    for (double p : before) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }

    // Scrambling teachers, fusion and the domain head leaves scores unchanged.
    for (int pos = 0; pos < model.positions(); ++pos)
        for (Parameter& p : model.teacher(pos).parameters()) p.value = random_tensor(p.value.shape(), rng);
    for (Parameter* p : model.fusion().parameters()) p->value = random_tensor(p->value.shape(), rng);
    CHECK(model.detector().predict(x) == before);

    // A student parameter does change them.
    model.student().parameters()[0].value[0] += 0.5;
    const std::vector<double> after = model.detector().predict(x);
    bool changed = false;
    for (std::size_t i = 0; i < before.size(); ++i) changed |= after[i] != before[i];
    CHECK(changed);
}

TEST_CASE("linear head: zero features give the bias, pooling is permutation invariant") {
    LinearHead head("h", 3, 2, true, 5);
    head.bias().value = Tensor({2}, {0.25, -1.5});
    const Tensor zero({4, 3, 2, 2});
    const Tensor s = head.forward(zero);
    for (int n = 0; n < 4; ++n) {
        CHECK(s[n * 2] == 0.25);
        CHECK(s[n * 2 + 1] == -1.5);
    }

    Rng rng(6);
    const Tensor f = random_tensor({2, 3, 2, 2}, rng);
    Tensor perm = f;
    // Reverse the spatial cells of every plane.
    for (std::size_t plane = 0; plane < 6; ++plane)
        for (int i = 0; i < 4; ++i) perm[plane * 4 + i] = f[plane * 4 + 3 - i];
    CHECK(max_abs_diff(head.forward(perm), head.forward(f)) <= 1e-14);
}

TEST_CASE("pretrain_real_encoder: learns identities, frozen, deterministic") {
    const int ids = 10;
    std::vector<Sample> reals = generate_real(ids, 4, 12, 16, 16);
    std::vector<const Sample*> ptrs;
    for (const Sample& s : reals) ptrs.push_back(&s);

    const EncoderSpec spec = tiny_spec();
    PretrainOptions opt;
    opt.epochs = 40;
    opt.batch_size = 10;
    opt.learning_rate = 5e-3;
    opt.seed = 3;
    const PretrainResult a = pretrain_real_encoder(ptrs, spec, opt);
    CHECK(a.encoder.frozen());
    CHECK(a.identities == ids);
    CHECK(a.train_accuracy > 2.0 / ids);
    CHECK(a.held_out_accuracy > 2.0 / ids);

    // Unit mean squared feature norm over the training reals.
    std::vector<const Sample*> train;
    for (const Sample* s : ptrs)
        if (s->frame != 3) train.push_back(s);
    Encoder enc = a.encoder;
    const Tensor f = enc.forward(images_to_tensor(train));
    CHECK(squared_norm(f) / static_cast<double>(train.size()) == doctest::Approx(1.0).epsilon(1e-9));

    const PretrainResult b = pretrain_real_encoder(ptrs, spec, opt);
    CHECK(a.train_accuracy == b.train_accuracy);
    for (std::size_t i = 0; i < a.encoder.parameters().size(); ++i)
        CHECK(max_abs_diff(a.encoder.parameters()[i].value, b.encoder.parameters()[i].value) == 0.0);
}
