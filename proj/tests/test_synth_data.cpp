#include "doctest.h"

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <set>

#include "lsda/error.hpp"
#include "lsda/hashing.hpp"
#include "lsda/synth_data.hpp"
#include "support.hpp"

using namespace lsda;
using lsda::testing::TempDir;

namespace {

double image_l2(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    return std::sqrt(s);
}

bool in_unit_range(const Image& img) {
    for (double v : img.pixels)
        if (v < 0.0 || v > 1.0) return false;
    return true;
}

DatasetConfig small_config(int m, int hold_out) {
    DatasetConfig c;
    c.identities = 20;
    c.images_per_identity = 2;
    c.m = m;
    c.hold_out = hold_out;
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("generate_real: cardinality, determinism, distinct identities") {
    const auto a = generate_real(2, 1, 7);
    REQUIRE(a.size() == 2);
    CHECK(a[0].domain == 0);
    CHECK(a[1].domain == 0);
    CHECK(a[0].identity_id != a[1].identity_id);
    const auto b = generate_real(2, 1, 7);
    CHECK(a[0].image == b[0].image);
    CHECK(a[1].image == b[1].image);

    CHECK_THROWS_AS(generate_real(1, 1, 7), Error);
    CHECK_THROWS_AS(generate_real(2, 0, 7), Error);
}

TEST_CASE("generate_real: per-identity mean images are pairwise distinct") {
    const auto samples = generate_real(50, 4, 1);
    REQUIRE(samples.size() == 200);
    std::vector<Image> means(50, Image(32, 32));
    for (const Sample& s : samples) {
        CHECK(in_unit_range(s.image));
        for (std::size_t i = 0; i < s.image.pixels.size(); ++i) means[s.identity_id].pixels[i] += s.image.pixels[i] / 4;
    }
    for (int i = 0; i < 50; ++i)
        for (int j = i + 1; j < 50; ++j) CHECK(image_l2(means[i], means[j]) > 0.0);
}

TEST_CASE("generate_real: samples of one group share the base pattern") {
    // Frames of one identity differ only by jitter; other identities differ more.
    const auto s = generate_real(6, 4, 3, 32, 32, 4);
    double within = 0.0, across = 0.0;
    for (int id = 0; id < 6; ++id) {
        within += image_l2(s[id * 4].image, s[id * 4 + 1].image);
        across += image_l2(s[id * 4].image, s[((id + 1) % 6) * 4].image);
        CHECK(s[id * 4].group_id == s[id * 4 + 3].group_id);
    }
    CHECK(within < across);
}

TEST_CASE("apply_forgery: method 1 only touches the forgery region") {
    const ForgeryParams p;
    for (const Sample& real : generate_real(4, 1, 11)) {
        const Sample fake = apply_forgery(real, 1, 3, p);
        CHECK(fake.domain == 1);
        CHECK(fake.identity_id == real.identity_id);
        CHECK(fake.group_id == real.group_id);
        CHECK(in_unit_range(fake.image));
        bool inside_changed = false;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                for (int c = 0; c < 3; ++c) {
                    const bool same = fake.image.at(y, x, c) == real.image.at(y, x, c);
                    if (!p.region.contains(y, x)) CHECK(same);
                    else inside_changed |= !same;
                }
        CHECK(inside_changed);
    }
}

TEST_CASE("apply_forgery: deterministic, preconditions") {
    const Sample real = generate_real(2, 1, 2)[0];
    for (int method = 1; method <= kMaxForgeryMethod; ++method) {
        CHECK(apply_forgery(real, method, 9).image == apply_forgery(real, method, 9).image);
        CHECK(in_unit_range(apply_forgery(real, method, 9).image));
    }
    const Sample fake = apply_forgery(real, 2, 9);
    try {
        apply_forgery(fake, 1, 9);
        FAIL("expected a precondition error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Precondition);
    }
    try {
        apply_forgery(real, 6, 9);
        FAIL("expected an argument error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Argument);
    }
}

TEST_CASE("apply_forgery: method 3 residual peaks at the stripe frequency") {
    const ForgeryParams p;
    for (const Sample& real : generate_real(3, 1, 21)) {
        const Sample fake = apply_forgery(real, 3, 4, p);
        const int w = real.image.width;
        // Row-summed residual, then a direct DFT along x.
        std::vector<double> profile(static_cast<std::size_t>(w), 0.0);
        for (int y = 0; y < real.image.height; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) profile[x] += fake.image.at(y, x, c) - real.image.at(y, x, c);
        int best = 0;
        double best_power = -1.0;
        for (int k = 1; k <= w / 2; ++k) {
            std::complex<double> acc = 0.0;
            for (int x = 0; x < w; ++x) acc += profile[x] * std::polar(1.0, -2.0 * std::numbers::pi * k * x / w);
            if (std::norm(acc) > best_power) {
                best_power = std::norm(acc);
                best = k;
            }
        }
        CHECK(best == stripe_frequency(p));
    }
}

TEST_CASE("perturb: severity schedule, ordering, determinism, range") {
    // Rescale and contrast factors shrink towards 0 as severity grows.
    auto strength = [](PerturbKind k, int s) {
        const double p = perturb_parameter(k, s);
        return k == PerturbKind::Rescale || k == PerturbKind::Contrast ? 1.0 - p : p;
    };
    for (PerturbKind k : kAllPerturbKinds)
        for (int s = 1; s < 5; ++s) CHECK(strength(k, s + 1) > strength(k, s));

    const auto reals = generate_real(25, 4, 8);
    double d1 = 0.0, d5 = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
        const Sample& s = reals[i];
        d1 += image_l2(perturb(s, PerturbKind::GaussianNoise, 1, i).image, s.image);
        d5 += image_l2(perturb(s, PerturbKind::GaussianNoise, 5, i).image, s.image);
    }
    CHECK(d5 / 100 >= d1 / 100);

    const Sample fake = apply_forgery(reals[0], 2, 1);
    for (PerturbKind k : kAllPerturbKinds) {
        const Sample p = perturb(fake, k, 3, 17);
        CHECK(p.domain == fake.domain);
        CHECK(in_unit_range(p.image));
        CHECK(p.image == perturb(fake, k, 3, 17).image);
    }
    CHECK(image_l2(perturb(reals[0], PerturbKind::Blur, 1, 1).image, reals[0].image) > 0.0);
    CHECK_THROWS_AS(parse_perturb_kind("jpeg"), Error);
    CHECK_THROWS_AS(perturb(reals[0], PerturbKind::Blur, 0, 1), Error);
    CHECK_THROWS_AS(perturb(reals[0], PerturbKind::Blur, 6, 1), Error);
}

TEST_CASE("build_dataset: hold-out filter, counts on disk, checksum stability") {
    TempDir dir("build_dataset");
    const DatasetManifest a = build_dataset(small_config(4, 4), dir / "a");

    std::set<int> train_domains, test_domains;
    for (const auto& r : a.records) (r.split == Split::Train ? train_domains : test_domains).insert(r.domain);
    CHECK(a.domains_in(Split::Train) == std::vector<int>{0, 1, 2, 3});
    CHECK(a.domains_in(Split::Test) == std::vector<int>{0, 4});
    CHECK(a.domains_in(Split::Val) == std::vector<int>{0, 1, 2, 3});

    std::size_t files = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a" / "images"))
        files += e.is_regular_file();
    CHECK(files == a.records.size());
    for (const auto& r : a.records) CHECK(std::filesystem::exists(dir / "a" / r.path));

    const DatasetManifest b = build_dataset(small_config(4, 4), dir / "b");
    CHECK(a.checksum == b.checksum);
    std::ifstream fa(dir / "a" / "manifest.tsv"), fb(dir / "b" / "manifest.tsv");
    const std::string ta((std::istreambuf_iterator<char>(fa)), {}), tb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(sha256_hex(ta) == sha256_hex(tb));

    const Dataset loaded = Dataset::load(dir / "a");
    CHECK(loaded.checksum() == a.checksum);
    CHECK(loaded.samples().size() == a.records.size());
}

TEST_CASE("build_dataset: m < 2 is a configuration error") {
    TempDir dir("build_m1");
    try {
        build_dataset(small_config(1, 0), dir.path());
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
}

TEST_CASE("manifest: split hygiene and alignment are enforced") {
    TempDir dir("manifest_hygiene");
    const DatasetManifest m = build_dataset(small_config(3, 3), dir.path());
    validate_manifest(m.records);

    std::map<int, std::set<Split>> splits_of;
    for (const auto& r : m.records) splits_of[r.identity_id].insert(r.split);
    for (const auto& [id, s] : splits_of) CHECK(s.size() == 1);

    auto leaked = m.records;
    for (auto& r : leaked)
        if (r.split == Split::Val && r.domain == 0) {
            ManifestRecord copy = r;
            copy.split = Split::Train;
            copy.path += ".dup";
            leaked.push_back(copy);
            break;
        }
    try {
        validate_manifest(leaked);
        FAIL("expected a consistency error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Consistency);
    }

    auto missing = m.records;
    for (auto it = missing.begin(); it != missing.end(); ++it)
        if (it->split == Split::Train && it->domain == 2) {
            missing.erase(it);
            break;
        }
    CHECK_THROWS_AS(validate_manifest(missing), Error);

    CHECK(parse_manifest(serialize_manifest(m.records)).size() == m.records.size());
}

TEST_CASE("sample_identity_batch: alignment, randomness, preconditions") {
    const Dataset ds = lsda::testing::memory_dataset(30, 2, 2, 32, 4);
    Rng rng(1);
    const IdentityBatch b = sample_identity_batch(ds, Split::Train, 2, {0, 1, 2}, rng);
    REQUIRE(b.size() == 3);
    for (const auto& list : b) {
        REQUIRE(list.size() == 2);
        CHECK(list[0]->identity_id == b[0][0]->identity_id);
        CHECK(list[1]->identity_id == b[0][1]->identity_id);
        CHECK(list[0]->frame == b[0][0]->frame);
    }
    CHECK(b[0][0]->identity_id != b[0][1]->identity_id);
    CHECK(b[1][0]->domain == 1);

    std::map<std::set<int>, int> seen;
    int identical = 0;
    std::set<int> first;
    for (int draw = 0; draw < 100; ++draw) {
        const IdentityBatch d = sample_identity_batch(ds, Split::Train, 2, {0, 1, 2}, rng);
        std::set<int> ids{d[0][0]->identity_id, d[0][1]->identity_id};
        if (draw == 0) first = ids;
        else identical += ids == first;
    }
    CHECK(identical < 5);

    CHECK_THROWS_AS(sample_identity_batch(ds, Split::Train, 1, {0, 1, 2}, rng), Error);
    CHECK_THROWS_AS(sample_identity_batch(ds, Split::Train, 31, {0, 1, 2}, rng), Error);
}

TEST_CASE("held-out protocol: domain j never reaches a training batch") {
    TempDir dir("heldout_batches");
    build_dataset(small_config(4, 4), dir.path());
    const Dataset ds = Dataset::load(dir.path());
    CHECK(ds.training_fake_domains() == std::vector<int>{1, 2, 3});
    Rng rng(3);
    for (const auto& ids : epoch_identity_batches(ds.identities(Split::Train), 4, rng)) {
        const IdentityBatch b = assemble_batch(ds, ids, {0, 1, 2, 3}, rng);
        for (const auto& list : b)
            for (std::size_t i = 0; i < list.size(); ++i) {
                CHECK(list[i]->domain != 4);
                CHECK(list[i]->split == Split::Train);
                CHECK(list[i]->identity_id == b[0][i]->identity_id);
            }
    }
}

TEST_CASE("ppm round trip is exact for quantised images") {
    TempDir dir("ppm");
    const Image img = quantize(generate_real(2, 1, 5)[1].image);
    write_ppm(dir / "x.ppm", img);
    CHECK(read_ppm(dir / "x.ppm") == img);
}
