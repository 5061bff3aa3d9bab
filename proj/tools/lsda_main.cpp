// lsda: data generation, pretraining, training, evaluation and export.

#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lsda/config.hpp"
#include "lsda/error.hpp"
#include "lsda/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lsda;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitRuntime = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void need(const std::string& value, const char* flag, const CLI::App* sub) {
    if (value.empty()) throw UsageError(sub->get_name() + ": " + flag + " is required");
}

struct ConfigArgs {
    std::string file;
    std::string profile;
    std::vector<std::string> sets;

    std::vector<std::string> extra;  // shorthand flags turned into overrides

    void attach(CLI::App* app) {
        app->add_option("--config", file, "JSON config merged over the profile");
        app->add_option("--profile", profile, "built-in profile: tiny or desk (default desk)");
        app->add_option("--set", sets, "override, e.g. --set train.epochs=3 (repeatable)");
    }

    RunConfig resolve() const {
        Json patch = Json::object();
        if (!file.empty()) {
            std::ifstream in(file);
            if (!in) throw Error(ErrorKind::Config, "config-not-found", "config file not found: " + file);
            try {
                patch = Json::parse(in);
            } catch (const Json::exception& e) {
                fail(ErrorKind::Config, "cannot parse " + file + ": " + e.what());
            }
            require(patch.is_object(), ErrorKind::Config, file + ": top level must be an object");
        }
        const std::string name = !profile.empty() ? profile : patch.value("profile", std::string("desk"));
        Json j = profile_json(name);
        j.merge_patch(patch);
        j["profile"] = name;
        try {
            std::vector<std::string> all = extra;
            all.insert(all.end(), sets.begin(), sets.end());
            j = apply_overrides(j, all);
            RunConfig c = run_config_from_json(j);
            c.validate();
            return c;
        } catch (const Json::exception& e) {
            fail(ErrorKind::Config, std::string("invalid config value: ") + e.what());
        }
    }
};

void done(const RunManifest& m, const fs::path& out) {
    std::cout << m.command << ": ok manifest_hash=" << m.hash() << " out=" << out.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent-space augmentation for generalizable forgery detection", "lsda"};
    app.require_subcommand(1);

    std::string out, manifest, real, ckpt, resume, split = "test", grid = "wd-cd";
    std::vector<std::string> images;
    std::vector<int> domains;
    int hold_out = -1;
    int seeds = 0;
    bool baseline = false;

    ConfigArgs gen_cfg, pre_cfg, train_cfg, perturb_cfg, ablate_cfg;

    auto* gen = app.add_subcommand("generate-data", "render the synthetic multi-domain dataset");
    gen_cfg.attach(gen);
    std::optional<int> g_ids, g_m, g_hold;
    std::optional<std::uint64_t> g_seed;
    gen->add_option("--identities", g_ids, "number of identities (data.identities)");
    gen->add_option("--m", g_m, "forgery domains generated (data.m)");
    gen->add_option("--hold-out", g_hold, "domain kept for test only, 0 = none");
    gen->add_option("--seed", g_seed, "generator seed (data.seed)");

    auto* pre = app.add_subcommand("pretrain-real", "pretrain and freeze the real-image encoder");
    pre_cfg.attach(pre);
    pre->add_option("--manifest,--data", manifest, "dataset directory or its manifest.tsv");

    auto* tr = app.add_subcommand("train", "train teachers, fusion and the student detector");
    train_cfg.attach(tr);
    tr->add_option("--manifest,--data", manifest, "dataset directory or its manifest.tsv");
    tr->add_option("--real", real, "real encoder checkpoint from pretrain-real");
    tr->add_option("--resume", resume, "checkpoint to continue from");

    auto* inf = app.add_subcommand("infer", "score images with a trained detector");
    inf->add_option("--ckpt", ckpt, "trained checkpoint");
    inf->add_option("--images", images, "PPM files or directories");

    auto* ev = app.add_subcommand("evaluate", "held-out and training-domain metrics");
    ev->add_option("--ckpt", ckpt, "trained checkpoint");
    ev->add_option("--manifest,--data", manifest, "dataset directory or its manifest.tsv");
    ev->add_option("--hold-out", hold_out, "held-out forgery domain (default: from the checkpoint)");

    auto* pe = app.add_subcommand("perturb-eval", "held-out AUC under each perturbation and severity");
    perturb_cfg.attach(pe);
    pe->add_option("--ckpt", ckpt, "trained checkpoint");
    pe->add_option("--manifest,--data", manifest, "dataset directory or its manifest.tsv");
    pe->add_option("--hold-out", hold_out, "held-out forgery domain (default: from the checkpoint)");

    auto* ab = app.add_subcommand("ablate", "WD x CD grid over seeds");
    ablate_cfg.attach(ab);
    ab->add_option("--manifest,--data", manifest, "dataset directory or its manifest.tsv");
    ab->add_option("--real", real, "real encoder checkpoint");
    ab->add_option("--grid", grid, "wd-cd (4 rows) or wd-cd-baseline (adds the student-only row)")
        ->check(CLI::IsMember({"wd-cd", "wd-cd-baseline"}));
    ab->add_option("--seeds", seeds, "use the first k of eval.seeds (default: all)")->check(CLI::PositiveNumber);
    ab->add_flag("--baseline", baseline, "same as --grid wd-cd-baseline");

    auto* ex = app.add_subcommand("export-embeddings", "student features with a 2-D PCA projection");
    ex->add_option("--ckpt", ckpt, "trained checkpoint");
    ex->add_option("--manifest,--data", manifest, "dataset directory or its manifest.tsv");
    ex->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    ex->add_option("--domains", domains, "domains to export (default: all in the split)");

    for (CLI::App* sub : {gen, pre, tr, inf, ev, pe, ab, ex})
        sub->add_option("--out", out, "run directory for all outputs");

    if (argc <= 1) {
        std::cerr << app.help();
        return kExitUsage;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        const fs::path out_dir(out);
        RunManifest m;
        if (gen->parsed()) {
            if (g_ids) gen_cfg.extra.push_back("data.identities=" + std::to_string(*g_ids));
            if (g_m) gen_cfg.extra.push_back("data.m=" + std::to_string(*g_m));
            if (g_hold) {
                gen_cfg.extra.push_back("data.hold_out=" + std::to_string(*g_hold));
                gen_cfg.extra.push_back("train.hold_out=" + std::to_string(*g_hold));
            }
            if (g_seed) gen_cfg.extra.push_back("data.seed=" + std::to_string(*g_seed));
            const RunConfig c = gen_cfg.resolve();
            need(out, "--out", gen);
            m = run_generate_data(c, out_dir);
        } else if (pre->parsed()) {
            const RunConfig c = pre_cfg.resolve();
            need(manifest, "--manifest", pre);
            need(out, "--out", pre);
            m = run_pretrain_real(c, manifest, out_dir);
        } else if (tr->parsed()) {
            const RunConfig c = train_cfg.resolve();
            need(manifest, "--manifest", tr);
            need(real, "--real", tr);
            need(out, "--out", tr);
            std::optional<fs::path> r;
            if (!resume.empty()) r = resume;
            m = run_train(c, manifest, real, out_dir, r);
        } else if (inf->parsed()) {
            need(ckpt, "--ckpt", inf);
            need(out, "--out", inf);
            if (images.empty()) throw UsageError("infer: --images is required");
            std::vector<fs::path> paths(images.begin(), images.end());
            m = run_infer(ckpt, paths, out_dir);
        } else if (ev->parsed()) {
            need(ckpt, "--ckpt", ev);
            need(manifest, "--manifest", ev);
            need(out, "--out", ev);
            m = run_evaluate(ckpt, manifest, hold_out, out_dir);
        } else if (pe->parsed()) {
            const RunConfig c = perturb_cfg.resolve();
            need(ckpt, "--ckpt", pe);
            need(manifest, "--manifest", pe);
            need(out, "--out", pe);
            m = run_perturb_eval(c, ckpt, manifest, hold_out, out_dir);
        } else if (ab->parsed()) {
            const RunConfig c = ablate_cfg.resolve();
            need(manifest, "--manifest", ab);
            need(real, "--real", ab);
            need(out, "--out", ab);
            std::vector<std::uint64_t> s = c.eval.seeds;
            if (seeds > 0) {
                require(static_cast<std::size_t>(seeds) <= s.size(), ErrorKind::Config,
                        "--seeds " + std::to_string(seeds) + " exceeds the " + std::to_string(s.size()) +
                            " seeds in eval.seeds");
                s.resize(static_cast<std::size_t>(seeds));
            }
            m = run_ablate(c, manifest, real, ablation_grid(baseline || grid == "wd-cd-baseline"), s, out_dir);
            std::cout << m.results.size() << " rows\n";
        } else if (ex->parsed()) {
            need(ckpt, "--ckpt", ex);
            need(manifest, "--manifest", ex);
            need(out, "--out", ex);
            m = run_export_embeddings(ckpt, manifest, parse_split(split), domains, out_dir);
        }
        done(m, out_dir);
        return 0;
    } catch (const UsageError& e) {
        std::cerr << "error: usage: " << e.what() << "\nRun with --help for more information.\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << '\n';
        return e.kind() == ErrorKind::Config ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << '\n';
        return kExitRuntime;
    }
}
