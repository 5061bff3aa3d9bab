#include "lsda/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lsda/error.hpp"
#include "lsda/hashing.hpp"
#include "lsda/trainer.hpp"

namespace fs = std::filesystem;

namespace lsda {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex_digest();
}

void add_output(RunManifest& m, const fs::path& out, const fs::path& file) {
    m.outputs[fs::relative(file, out).generic_string()] = file_hash(file);
}

std::string inputs_hash(const std::string& command, const Json& config, const Json& upstream) {
    return sha256_hex(canonical_dump(Json{{"command", command}, {"config", config}, {"inputs", upstream}}));
}

// The dataset on disk is authoritative for the data section.
RunConfig with_dataset(RunConfig c, const Dataset& ds) {
    c.data = ds.config();
    c.validate();
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    out << text;
    require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path.string());
}

std::string jsonl(const std::vector<Json>& rows) {
    std::string s;
    for (const Json& j : rows) s += j.dump() + "\n";
    return s;
}

Checkpoint load_detector_checkpoint(const fs::path& path) {
    Checkpoint c = Checkpoint::load(path);
    require(c.kind == "lsda", ErrorKind::CorruptCheckpoint,
            path.string() + " is a '" + c.kind + "' checkpoint, not a trained model");
    return c;
}

void check_same_dataset(const Checkpoint& ckpt, const Dataset& ds) {
    if (ckpt.meta.contains("dataset_checksum")) {
        require(ckpt.meta.at("dataset_checksum").get<std::string>() == ds.checksum(), ErrorKind::Consistency,
                "checkpoint was trained on a different dataset (checksum mismatch)");
    }
}

std::string report_table(const std::vector<MetricsReport>& rows) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << "split\tlevel\tperturbation\tseverity\tauc\tap\teer\tn_pos\tn_neg\n";
    for (const MetricsReport& r : rows) {
        out << r.split << '\t' << r.level << '\t' << (r.perturbation ? std::string(perturb_name(*r.perturbation)) : "clean")
            << '\t' << r.severity << '\t' << r.auc << '\t' << r.ap << '\t' << r.eer << '\t' << r.n_pos << '\t'
            << r.n_neg << '\n';
    }
    return out.str();
}

std::vector<Json> report_rows(const std::vector<MetricsReport>& rows) {
    std::vector<Json> out;
    for (const MetricsReport& r : rows) out.push_back(r.to_json());
    return out;
}

}  // namespace

std::string RunManifest::hash() const {
    return sha256_hex(canonical_dump(Json{{"command", command},
                                          {"config", config},
                                          {"seed", seed},
                                          {"input_hash", input_hash},
                                          {"outputs", outputs},
                                          {"results", results}}));
}

Json RunManifest::to_json() const {
    return {{"command", command}, {"config", config},   {"seed", seed},     {"input_hash", input_hash},
            {"outputs", outputs}, {"results", results}, {"timings", timings}, {"manifest_hash", hash()}};
}

void RunManifest::write(const fs::path& out_dir) const {
    fs::create_directories(out_dir);
    write_text(out_dir / kManifestFile, to_json().dump(2) + "\n");
}

RunManifest RunManifest::read(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
    const Json j = Json::parse(in);
    RunManifest m;
    m.command = j.at("command");
    m.config = j.at("config");
    m.seed = j.at("seed");
    m.input_hash = j.at("input_hash");
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.results = j.at("results");
    m.timings = j.at("timings");
    return m;
}

fs::path dataset_dir(const fs::path& p) {
    if (p.filename() == "manifest.tsv" || p.filename() == "dataset.json") return p.parent_path();
    return p;
}

RunManifest run_generate_data(const RunConfig& config, const fs::path& out) {
    const auto start = Clock::now();
    config.validate();
    const DatasetManifest dm = build_dataset(config.data, out);
    RunManifest m;
    m.command = "generate-data";
    m.config = to_json(config);
    m.seed = config.data.seed;
    m.input_hash = inputs_hash(m.command, m.config, Json::object());
    add_output(m, out, out / "manifest.tsv");
    add_output(m, out, out / "dataset.json");
    Json counts = Json::object();
    for (const auto& [key, n] : dm.counts()) {
        counts[std::string(split_name(key.first)) + ":" + std::to_string(key.second)] = n;
    }
    m.results = {{"dataset_checksum", dm.checksum}, {"records", dm.records.size()}, {"counts", counts}};
    m.timings = {{"total_s", seconds_since(start)}};
    m.write(out);
    return m;
}

RunManifest run_pretrain_real(const RunConfig& base, const fs::path& data, const fs::path& out) {
    const auto start = Clock::now();
    const Dataset ds = Dataset::load(dataset_dir(data));
    const RunConfig config = with_dataset(base, ds);
    const Json cfg = to_json(config);
    const PretrainResult r = pretrain_real_encoder(ds.select(Split::Train, {0}), config.encoder, config.pretrain);

    fs::create_directories(out);
    const Json meta = {{"dataset_checksum", ds.checksum()},
                       {"train_accuracy", r.train_accuracy},
                       {"held_out_accuracy", r.held_out_accuracy},
                       {"identities", r.identities},
                       {"output_scale", r.output_scale}};
    real_encoder_checkpoint(r.encoder, cfg, meta).save(out / "real_encoder.bin");

    RunManifest m;
    m.command = "pretrain-real";
    m.config = cfg;
    m.seed = config.pretrain.seed;
    m.input_hash = inputs_hash(m.command, cfg, {{"dataset", ds.checksum()}});
    add_output(m, out, out / "real_encoder.bin");
    m.results = meta;
    m.timings = {{"total_s", seconds_since(start)}};
    m.write(out);
    return m;
}

RunManifest run_train(const RunConfig& base, const fs::path& data, const fs::path& real, const fs::path& out,
                      const std::optional<fs::path>& resume) {
    const auto start = Clock::now();
    const Dataset ds = Dataset::load(dataset_dir(data));
    const RunConfig config = with_dataset(base, ds);
    const Json cfg = to_json(config);
    const Encoder real_encoder = load_real_encoder(real);
    require(real_encoder.spec() == config.encoder, ErrorKind::Config,
            "real encoder geometry differs from the configured encoder");
    const TrainOutputs t = train(config, ds, real_encoder, out, resume);

    RunManifest m;
    m.command = "train";
    m.config = cfg;
    m.seed = config.train.seed;
    Json upstream = {{"dataset", ds.checksum()}, {"real_encoder", file_hash(real)}};
    if (resume) upstream["resume_step"] = Checkpoint::load(*resume).step;
    m.input_hash = inputs_hash(m.command, cfg, upstream);
    for (const auto& entry : fs::directory_iterator(out)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name != kManifestFile) add_output(m, out, entry.path());
    }
    m.results = {{"steps", t.steps.empty() ? 0 : t.steps.back().step},
                 {"final_loss", t.steps.empty() ? 0.0 : t.steps.back().loss.total},
                 {"val_auc", t.val_auc.empty() ? 0.0 : t.val_auc.back().second}};
    m.timings = {{"total_s", seconds_since(start)}};
    m.write(out);
    return m;
}

RunManifest run_infer(const fs::path& ckpt_path, const std::vector<fs::path>& images, const fs::path& out) {
    const auto start = Clock::now();
    const Checkpoint ckpt = load_detector_checkpoint(ckpt_path);
    Detector detector = Detector::from_checkpoint(ckpt);

    std::vector<fs::path> files;
    for (const fs::path& p : images) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::recursive_directory_iterator(p))
                if (e.is_regular_file() && e.path().extension() == ".ppm") found.push_back(e.path());
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else {
            require(fs::exists(p), ErrorKind::Io, "image not found: " + p.string());
            files.push_back(p);
        }
    }
    require(!files.empty(), ErrorKind::Argument, "infer: no images given");

    std::vector<Image> loaded;
    for (const fs::path& f : files) {
        loaded.push_back(read_ppm(f));
        require(loaded.back().height == detector.spec().image_h && loaded.back().width == detector.spec().image_w,
                ErrorKind::Argument,
                f.string() + ": image size differs from the model input " + std::to_string(detector.spec().image_h) +
                    "x" + std::to_string(detector.spec().image_w));
    }
    std::vector<double> probs;
    for (std::size_t s = 0; s < loaded.size(); s += 64) {
        const std::size_t e = std::min(loaded.size(), s + 64);
        const std::vector<double> p =
            detector.predict(images_to_tensor(std::span<const Image>(loaded.data() + s, e - s)));
        probs.insert(probs.end(), p.begin(), p.end());
    }

    fs::create_directories(out);
    std::ostringstream text;
    text << std::setprecision(17) << "path\tprobability\n";
    for (std::size_t i = 0; i < files.size(); ++i) text << files[i].generic_string() << '\t' << probs[i] << '\n';
    write_text(out / "predictions.tsv", text.str());

    RunManifest m;
    m.command = "infer";
    m.config = ckpt.config;
    m.seed = ckpt.config.at("train").at("seed");
    Json inputs = Json::array();
    for (const fs::path& f : files) inputs.push_back(file_hash(f));
    m.input_hash = inputs_hash(m.command, ckpt.config, {{"checkpoint", file_hash(ckpt_path)}, {"images", inputs}});
    add_output(m, out, out / "predictions.tsv");
    m.results = {{"images", files.size()}};
    m.timings = {{"total_s", seconds_since(start)}};
    m.write(out);
    return m;
}

RunManifest run_evaluate(const fs::path& ckpt_path, const fs::path& data, int hold_out, const fs::path& out) {
    const auto start = Clock::now();
    const Checkpoint ckpt = load_detector_checkpoint(ckpt_path);
    const Dataset ds = Dataset::load(dataset_dir(data));
    check_same_dataset(ckpt, ds);
    if (hold_out < 0) hold_out = ckpt.config.at("train").at("hold_out").get<int>();
    Detector detector = Detector::from_checkpoint(ckpt);

    const EvalReport held = evaluate_held_out(detector, ds, hold_out);
    const EvalReport seen = evaluate_in_domain(detector, ds, Split::Val);
    const std::vector<MetricsReport> rows = {held.frame, held.group, seen.frame, seen.group};

    fs::create_directories(out);
    write_text(out / "report.jsonl", jsonl(report_rows(rows)));
    write_text(out / "report.tsv",
               report_table(rows) + "# group level: mean frame probability per (domain, group_id)\n");

    RunManifest m;
    m.command = "evaluate";
    m.config = ckpt.config;
    m.seed = ckpt.config.at("train").at("seed");
    m.input_hash = inputs_hash(m.command, ckpt.config,
                               {{"checkpoint", file_hash(ckpt_path)}, {"dataset", ds.checksum()}, {"hold_out", hold_out}});
    add_output(m, out, out / "report.jsonl");
    add_output(m, out, out / "report.tsv");
    m.results = {{"held_out", held.frame.to_json()},
                 {"held_out_group", held.group.to_json()},
                 {"training_domains", seen.frame.to_json()}};
    m.timings = {{"total_s", seconds_since(start)}};
    m.write(out);
    return m;
}

RunManifest run_perturb_eval(const RunConfig& config, const fs::path& ckpt_path, const fs::path& data, int hold_out,
                             const fs::path& out) {
    const auto start = Clock::now();
    const Checkpoint ckpt = load_detector_checkpoint(ckpt_path);
    const Dataset ds = Dataset::load(dataset_dir(data));
    check_same_dataset(ckpt, ds);
    if (hold_out < 0) hold_out = ckpt.config.at("train").at("hold_out").get<int>();
    Detector detector = Detector::from_checkpoint(ckpt);
    const std::vector<MetricsReport> rows =
        robustness_sweep(detector, ds, hold_out, config.eval.perturb_kinds, config.eval.max_severity,
                         config.eval.perturb_seed);

    fs::create_directories(out);
    write_text(out / "robustness.jsonl", jsonl(report_rows(rows)));
    write_text(out / "robustness.tsv", report_table(rows));

    RunManifest m;
    m.command = "perturb-eval";
    m.config = to_json(config);
    m.seed = config.eval.perturb_seed;
    m.input_hash = inputs_hash(m.command, m.config,
                               {{"checkpoint", file_hash(ckpt_path)}, {"dataset", ds.checksum()}, {"hold_out", hold_out}});
    add_output(m, out, out / "robustness.jsonl");
    add_output(m, out, out / "robustness.tsv");
    m.results = {{"rows", rows.size()}, {"clean_auc", rows.front().auc}};
    m.timings = {{"total_s", seconds_since(start)}};
    m.write(out);
    return m;
}

RunManifest run_ablate(const RunConfig& base, const fs::path& data, const fs::path& real,
                       const std::vector<AblationVariant>& grid, const std::vector<std::uint64_t>& seeds,
                       const fs::path& out) {
    const auto start = Clock::now();
    const Dataset ds = Dataset::load(dataset_dir(data));
    const RunConfig config = with_dataset(base, ds);
    const Encoder real_encoder = load_real_encoder(real);
    const AblationResult result = ablate(config, ds, real_encoder, grid, seeds, out);

    write_text(out / "ablation.jsonl", jsonl(result.to_json().get<std::vector<Json>>()));
    write_text(out / "ablation.txt", result.table());

    RunManifest m;
    m.command = "ablate";
    m.config = to_json(config);
    m.seed = config.train.seed;
    Json grid_json = Json::array();
    for (const AblationVariant& v : grid) grid_json.push_back(v.name);
    m.input_hash = inputs_hash(m.command, m.config,
                               {{"dataset", ds.checksum()}, {"real_encoder", file_hash(real)},
                                {"grid", grid_json}, {"seeds", seeds}});
    add_output(m, out, out / "ablation.jsonl");
    add_output(m, out, out / "ablation.txt");
    for (const AblationRow& row : result.rows)
        for (const fs::path& c : row.checkpoints) {
            add_output(m, out, c);
            add_output(m, out, c.parent_path() / "metrics.jsonl");
        }
    m.results = result.to_json();
    m.timings = {{"total_s", seconds_since(start)}};
    m.write(out);
    return m;
}

RunManifest run_export_embeddings(const fs::path& ckpt_path, const fs::path& data, Split split,
                                  const std::vector<int>& domains, const fs::path& out) {
    const auto start = Clock::now();
    const Checkpoint ckpt = load_detector_checkpoint(ckpt_path);
    const Dataset ds = Dataset::load(dataset_dir(data));
    check_same_dataset(ckpt, ds);
    Detector detector = Detector::from_checkpoint(ckpt);
    const std::vector<int> wanted = domains.empty() ? ds.domains(split) : domains;
    const std::vector<const Sample*> samples = ds.select(split, wanted);
    const EmbeddingExport e = export_embeddings(detector, samples);
    write_embeddings(e, out);

    RunManifest m;
    m.command = "export-embeddings";
    m.config = ckpt.config;
    m.seed = ckpt.config.at("train").at("seed");
    m.input_hash = inputs_hash(m.command, ckpt.config,
                               {{"checkpoint", file_hash(ckpt_path)},
                                {"dataset", ds.checksum()},
                                {"split", split_name(split)},
                                {"domains", wanted}});
    add_output(m, out, out / "embeddings.tsv");
    add_output(m, out, out / "pca.json");
    m.results = {{"samples", samples.size()}, {"explained_variance", e.explained_variance}};
    m.timings = {{"total_s", seconds_since(start)}};
    m.write(out);
    return m;
}

}  // namespace lsda
