#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "lsda/pipeline.hpp"
#include "support.hpp"

using namespace lsda;
using namespace lsda::testing;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(LSDA_BINARY) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Small 16x16 setup for the CLI.
void write_config(const fs::path& p) {
    Json j = {{"profile", "tiny"},
              {"data",
               {{"identities", 16},
                {"m", 3},
                {"hold_out", 3},
                {"height", 16},
                {"width", 16},
                {"forgery", {{"region", {4, 4, 8, 8}}}}}},
              {"encoder", {{"image_h", 16}, {"image_w", 16}, {"widths", {4, 4}}, {"latent_c", 2}}},
              {"pretrain", {{"epochs", 2}}},
              {"train", {{"hold_out", 3}, {"batch_identities", 2}, {"epochs", 1}}},
              {"eval", {{"seeds", {1}}, {"max_severity", 2}}}};
    std::ofstream(p) << j.dump(2);
}

}  // namespace

TEST_CASE("cli: exit codes") {
    TempDir dir("cli_codes");
    const fs::path log = dir / "log.txt";
    CHECK(run("", log) == 2);
    CHECK(run("frobnicate", log) == 2);
    CHECK(run("train --out " + (dir / "x").string(), log) == 2);
    CHECK(slurp(log).find("--manifest") != std::string::npos);
    CHECK(run("train --config " + (dir / "missing.json").string(), log) == 3);
    CHECK(slurp(log).find("error: config-not-found") != std::string::npos);
    CHECK(run("generate-data --set data.m=1 --out " + (dir / "d").string(), log) == 3);
    CHECK(run("generate-data --set data.bogus=1 --out " + (dir / "d").string(), log) == 3);
    CHECK(run("evaluate --ckpt " + (dir / "nope.bin").string() + " --manifest " + dir.path().string() + " --out " +
                  (dir / "e").string(),
              log) == 4);
    CHECK(run("--help", log) == 0);
}

TEST_CASE("cli: full pipeline and manifest idempotence") {
    TempDir dir("cli_pipeline");
    const fs::path cfg = dir / "cfg.json", log = dir / "log.txt";
    write_config(cfg);
    const std::string c = " --config " + cfg.string();
    const std::string data = (dir / "data").string(), real = (dir / "real").string(), run_dir = (dir / "run").string();

    REQUIRE(run("generate-data" + c + " --out " + data, log) == 0);
    REQUIRE(run("pretrain-real" + c + " --manifest " + data + "/manifest.tsv --out " + real, log) == 0);
    REQUIRE(run("train" + c + " --manifest " + data + " --real " + real + "/real_encoder.bin --out " + run_dir, log) ==
            0);
    const std::string ckpt = run_dir + "/checkpoint.bin";
    REQUIRE(run("evaluate --ckpt " + ckpt + " --manifest " + data + " --out " + (dir / "eval").string(), log) == 0);
    REQUIRE(run("perturb-eval" + c + " --ckpt " + ckpt + " --manifest " + data + " --out " + (dir / "rob").string(),
                log) == 0);
    REQUIRE(run("infer --ckpt " + ckpt + " --images " + data + "/images --out " + (dir / "inf").string(), log) == 0);
    REQUIRE(run("export-embeddings --ckpt " + ckpt + " --manifest " + data + " --out " + (dir / "emb").string(), log) ==
            0);
    REQUIRE(run("ablate" + c + " --manifest " + data + " --real " + real + "/real_encoder.bin --seeds 1 --out " +
                    (dir / "abl").string(),
                log) == 0);

    for (const char* sub : {"data", "real", "run", "eval", "rob", "inf", "emb", "abl"}) {
        INFO(sub);
        const fs::path m = dir / sub / kManifestFile;
        REQUIRE(fs::exists(m));
        const RunManifest rm = RunManifest::read(m);
        for (const auto& [rel, sha] : rm.outputs) CHECK(fs::exists(dir / sub / rel));
    }
    CHECK(slurp(dir / "rob" / "robustness.tsv").find("gaussian_noise") != std::string::npos);
    CHECK(slurp(dir / "eval" / "report.jsonl").find("\"split\":\"test:0v3\"") != std::string::npos);

    // Rerunning a command with the same inputs reproduces the manifest hash.
    const std::string first = RunManifest::read(dir / "run" / kManifestFile).hash();
    REQUIRE(run("train" + c + " --manifest " + data + " --real " + real + "/real_encoder.bin --out " +
                    (dir / "run2").string(),
                log) == 0);
    CHECK(RunManifest::read(dir / "run2" / kManifestFile).hash() == first);
    REQUIRE(run("generate-data" + c + " --out " + (dir / "data2").string(), log) == 0);
    CHECK(RunManifest::read(dir / "data2" / kManifestFile).hash() ==
          RunManifest::read(dir / "data" / kManifestFile).hash());

    // A checkpoint evaluated against a different dataset is refused.
    REQUIRE(run("generate-data" + c + " --seed 9 --out " + (dir / "other").string(), log) == 0);
    CHECK(run("evaluate --ckpt " + ckpt + " --manifest " + (dir / "other").string() + " --out " +
                  (dir / "bad").string(),
              log) == 4);
}
