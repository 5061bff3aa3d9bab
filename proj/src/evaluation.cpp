#include "lsda/evaluation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "lsda/error.hpp"
#include "lsda/metrics.hpp"
#include "lsda/trainer.hpp"

namespace fs = std::filesystem;

namespace lsda {

Json MetricsReport::to_json() const {
    Json j = {{"split", split}, {"level", level}, {"auc", auc}, {"ap", ap},
              {"eer", eer},     {"n_pos", n_pos}, {"n_neg", n_neg}};
    if (perturbation) {
        j["perturbation"] = std::string(perturb_name(*perturbation));
        j["severity"] = severity;
    } else {
        j["perturbation"] = "clean";
        j["severity"] = 0;
    }
    return j;
}

MetricsReport make_report(const std::vector<double>& scores, const std::vector<int>& labels, std::string split) {
    MetricsReport r;
    r.auc = metrics::auc(scores, labels);
    r.ap = metrics::ap(scores, labels);
    r.eer = metrics::eer(scores, labels);
    r.n_pos = static_cast<int>(std::count(labels.begin(), labels.end(), 1));
    r.n_neg = static_cast<int>(labels.size()) - r.n_pos;
    r.split = std::move(split);
    return r;
}

namespace {

EvalReport report_from_scores(const std::vector<const Sample*>& samples, const std::vector<double>& scores,
                              const std::string& split) {
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const Sample* s : samples) labels.push_back(s->domain > 0 ? 1 : 0);

    EvalReport out;
    out.frame = make_report(scores, labels, split);

    // group ids are only unique within a domain
    std::map<std::pair<int, int>, std::pair<double, int>> groups;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& acc = groups[{samples[i]->domain, samples[i]->group_id}];
        acc.first += scores[i];
        acc.second += 1;
    }
    std::vector<double> means;
    std::vector<int> group_labels;
    for (const auto& [key, acc] : groups) {
        means.push_back(acc.first / acc.second);
        group_labels.push_back(key.first > 0 ? 1 : 0);
    }
    out.group = make_report(means, group_labels, split);
    out.group.level = "group";
    return out;
}

std::vector<const Sample*> held_out_samples(const Dataset& dataset, int hold_out) {
    require(hold_out >= 1 && hold_out <= dataset.config().m, ErrorKind::Argument,
            "hold-out domain must be in 1.." + std::to_string(dataset.config().m) + ", got " +
                std::to_string(hold_out));
    const std::vector<int> train = dataset.domains(Split::Train);
    require(std::find(train.begin(), train.end(), hold_out) == train.end(), ErrorKind::Precondition,
            "domain " + std::to_string(hold_out) + " is present in the training split");
    std::vector<const Sample*> samples = dataset.select(Split::Test, {0, hold_out});
    const auto fakes = std::count_if(samples.begin(), samples.end(), [](const Sample* s) { return s->domain > 0; });
    require(fakes > 0, ErrorKind::Precondition, "no test samples of domain " + std::to_string(hold_out));
    return samples;
}

std::string held_out_split(int hold_out) { return "test:0v" + std::to_string(hold_out); }

}  // namespace

EvalReport evaluate_samples(Detector& detector, const std::vector<const Sample*>& samples, const std::string& split) {
    return report_from_scores(samples, detector.predict(samples), split);
}

EvalReport evaluate_held_out(Detector& detector, const Dataset& dataset, int hold_out) {
    return evaluate_samples(detector, held_out_samples(dataset, hold_out), held_out_split(hold_out));
}

EvalReport evaluate_in_domain(Detector& detector, const Dataset& dataset, Split split,
                              std::optional<std::vector<int>> domains) {
    std::vector<int> fakes = domains ? *domains : dataset.training_fake_domains();
    require(!fakes.empty(), ErrorKind::Argument, "evaluate_in_domain: no forgery domains");
    std::string name = std::string(split_name(split)) + ":0v";
    std::vector<int> wanted{0};
    for (std::size_t i = 0; i < fakes.size(); ++i) {
        require(fakes[i] > 0, ErrorKind::Argument, "evaluate_in_domain: domain 0 is not a forgery domain");
        name += (i ? "+" : "") + std::to_string(fakes[i]);
        wanted.push_back(fakes[i]);
    }
    return evaluate_samples(detector, dataset.select(split, wanted), name);
}

std::vector<MetricsReport> robustness_sweep(Detector& detector, const Dataset& dataset, int hold_out,
                                            const std::vector<PerturbKind>& kinds, int max_severity,
                                            std::uint64_t seed) {
    require(max_severity >= 1 && max_severity <= 5, ErrorKind::Argument, "severity must be in 1..5");
    const std::vector<const Sample*> samples = held_out_samples(dataset, hold_out);
    const std::string split = held_out_split(hold_out);

    std::vector<MetricsReport> rows;
    rows.push_back(evaluate_samples(detector, samples, split).frame);
    for (PerturbKind kind : kinds) {
        for (int severity = 1; severity <= max_severity; ++severity) {
            std::vector<Sample> perturbed(samples.size());
            #pragma omp parallel for schedule(static)
            for (std::size_t i = 0; i < samples.size(); ++i) {
                const Sample& s = *samples[i];
                const std::uint64_t k = derive_seed(
                    seed, Stream::Perturb,
                    {static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(severity),
                     static_cast<std::uint64_t>(s.identity_id), static_cast<std::uint64_t>(s.frame),
                     static_cast<std::uint64_t>(s.domain)});
                perturbed[i] = perturb(s, kind, severity, k);
            }
            std::vector<const Sample*> ptrs;
            for (const Sample& s : perturbed) ptrs.push_back(&s);
            MetricsReport r = evaluate_samples(detector, ptrs, split).frame;
            r.perturbation = kind;
            r.severity = severity;
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

EmbeddingExport export_embeddings(Detector& detector, const std::vector<const Sample*>& samples) {
    require(samples.size() >= 2, ErrorKind::Argument, "export_embeddings: need at least 2 samples");
    EmbeddingExport e;
    e.samples = samples;
    e.features = detector.embed(samples);
    const int n = e.features.dim(0);
    const int d = static_cast<int>(e.features.slice_size());
    e.features.reshape({n, d});

    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> x(e.features.data(), n, d);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const RowMat centered = x.rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    require(solver.info() == Eigen::Success, ErrorKind::Consistency, "export_embeddings: eigendecomposition failed");

    e.mean.assign(mean.data(), mean.data() + d);
    // eigenvalues come out ascending
    for (int k = 0; k < 2 && k < d; ++k) {
        const int col = d - 1 - k;
        Eigen::VectorXd v = solver.eigenvectors().col(col);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;  // fix the sign so exports are reproducible
        e.components.emplace_back(v.data(), v.data() + d);
        e.explained_variance.push_back(std::max(0.0, solver.eigenvalues()(col)));
    }
    while (e.components.size() < 2) {
        e.components.emplace_back(static_cast<std::size_t>(d), 0.0);
        e.explained_variance.push_back(0.0);
    }
    e.coords.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 2; ++k) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) acc += (x(i, j) - e.mean[j]) * e.components[k][j];
            e.coords[i][k] = acc;
        }
    }
    return e;
}

void write_embeddings(const EmbeddingExport& e, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const int n = static_cast<int>(e.samples.size());
    const int d = n > 0 ? e.features.dim(1) : 0;
    {
        std::ofstream out(out_dir / "embeddings.tsv");
        require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + (out_dir / "embeddings.tsv").string());
        out << std::setprecision(17);
        out << "identity_id\tdomain\tgroup_id\tframe\tlabel\tpc1\tpc2";
        for (int j = 0; j < d; ++j) out << "\tf" << j;
        out << '\n';
        for (int i = 0; i < n; ++i) {
            const Sample& s = *e.samples[i];
            out << s.identity_id << '\t' << s.domain << '\t' << s.group_id << '\t' << s.frame << '\t'
                << (s.domain > 0 ? 1 : 0) << '\t' << e.coords[i][0] << '\t' << e.coords[i][1];
            for (int j = 0; j < d; ++j) out << '\t' << e.features.data()[static_cast<std::size_t>(i) * d + j];
            out << '\n';
        }
        require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + (out_dir / "embeddings.tsv").string());
    }
    Json pca = {{"mean", e.mean},
                {"components", e.components},
                {"explained_variance", e.explained_variance},
                {"samples", n},
                {"dim", d}};
    std::ofstream out(out_dir / "pca.json");
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + (out_dir / "pca.json").string());
    out << std::setprecision(17) << pca.dump(1) << '\n';
}

std::vector<AblationVariant> ablation_grid(bool with_baseline) {
    std::vector<AblationVariant> grid = {
        {"none", false, false, false},
        {"WD", true, false, false},
        {"CD", false, true, false},
        {"WD+CD", true, true, false},
    };
    if (with_baseline) grid.push_back({"baseline", false, false, true});
    return grid;
}

TrainConfig apply_variant(TrainConfig config, const AblationVariant& v) {
    config.augment.wd_enabled = v.wd;
    config.augment.cd_enabled = v.cd;
    config.student_only = v.student_only;
    return config;
}

double AblationRow::mean(double MetricsReport::*field) const {
    if (held_out.empty()) return 0.0;
    double s = 0.0;
    for (const MetricsReport& r : held_out) s += r.*field;
    return s / static_cast<double>(held_out.size());
}

double AblationRow::sd(double MetricsReport::*field) const {
    if (held_out.size() < 2) return 0.0;
    const double m = mean(field);
    double s = 0.0;
    for (const MetricsReport& r : held_out) s += (r.*field - m) * (r.*field - m);
    return std::sqrt(s / static_cast<double>(held_out.size() - 1));
}

const AblationRow& AblationResult::row(const std::string& name) const {
    for (const AblationRow& r : rows)
        if (r.variant.name == name) return r;
    fail(ErrorKind::Argument, "no ablation row named '" + name + "'");
}

std::string AblationResult::table() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << std::left << std::setw(10) << "variant" << std::setw(5) << "WD" << std::setw(5) << "CD"
        << std::setw(20) << "AUC" << std::setw(20) << "AP" << std::setw(20) << "EER" << "seeds\n";
    for (const AblationRow& r : rows) {
        auto cell = [&](double MetricsReport::*f) {
            std::ostringstream c;
            c << std::fixed << std::setprecision(4) << r.mean(f) << " +- " << r.sd(f);
            return c.str();
        };
        const char* wd = r.variant.student_only ? "-" : (r.variant.wd ? "on" : "off");
        const char* cd = r.variant.student_only ? "-" : (r.variant.cd ? "on" : "off");
        out << std::setw(10) << r.variant.name << std::setw(5) << wd << std::setw(5) << cd << std::setw(20)
            << cell(&MetricsReport::auc) << std::setw(20) << cell(&MetricsReport::ap) << std::setw(20)
            << cell(&MetricsReport::eer) << r.held_out.size() << '\n';
    }
    return out.str();
}

Json AblationResult::to_json() const {
    Json out = Json::array();
    for (const AblationRow& r : rows) {
        Json per_seed = Json::array();
        for (std::size_t i = 0; i < r.held_out.size(); ++i) {
            Json cell = r.held_out[i].to_json();
            cell["seed"] = r.seeds[i];
            per_seed.push_back(cell);
        }
        out.push_back({{"variant", r.variant.name},
                       {"wd", r.variant.wd},
                       {"cd", r.variant.cd},
                       {"student_only", r.variant.student_only},
                       {"auc_mean", r.mean(&MetricsReport::auc)},
                       {"auc_sd", r.sd(&MetricsReport::auc)},
                       {"ap_mean", r.mean(&MetricsReport::ap)},
                       {"ap_sd", r.sd(&MetricsReport::ap)},
                       {"eer_mean", r.mean(&MetricsReport::eer)},
                       {"eer_sd", r.sd(&MetricsReport::eer)},
                       {"per_seed", per_seed}});
    }
    return out;
}

AblationResult ablate(const RunConfig& config, const Dataset& dataset, const Encoder& real_encoder,
                      const std::vector<AblationVariant>& grid, const std::vector<std::uint64_t>& seeds,
                      const fs::path& out_dir) {
    require(!grid.empty() && !seeds.empty(), ErrorKind::Argument, "ablate: empty grid or seed list");
    require(config.train.hold_out > 0, ErrorKind::Config, "ablate: a held-out domain is required");
    AblationResult result;
    for (const AblationVariant& v : grid) {
        AblationRow row;
        row.variant = v;
        for (std::uint64_t seed : seeds) {
            RunConfig run = config;
            run.train = apply_variant(run.train, v);
            run.train.seed = seed;
            const fs::path dir = out_dir / v.name / ("seed" + std::to_string(seed));
            const TrainOutputs trained = train(run, dataset, real_encoder, dir);
            Detector detector = Detector::from_checkpoint(Checkpoint::load(trained.checkpoint));
            row.seeds.push_back(seed);
            row.held_out.push_back(evaluate_held_out(detector, dataset, run.train.hold_out).frame);
            row.checkpoints.push_back(trained.checkpoint);
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

}  // namespace lsda
