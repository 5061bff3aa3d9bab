#include "lsda/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "lsda/error.hpp"
#include "lsda/hashing.hpp"

namespace lsda {

namespace {

// Unknown keys are almost always typos; reject them instead of silently ignoring.
void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    require(j.is_object(), ErrorKind::Config, where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        require(allowed.count(key) > 0, ErrorKind::Config, where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void TrainConfig::validate() const {
    require(epochs >= 1, ErrorKind::Config, "train.epochs must be >= 1, got " + std::to_string(epochs));
    require(batch_identities >= 2, ErrorKind::Config,
            "train.batch_identities must be >= 2, got " + std::to_string(batch_identities));
    require(learning_rate > 0, ErrorKind::Config, "train.learning_rate must be > 0");
    require(optimizer == "adam", ErrorKind::Config, "train.optimizer: only 'adam' is supported");
    require(checkpoint_every >= 0 && max_steps >= 0, ErrorKind::Config,
            "train.checkpoint_every and train.max_steps must be >= 0");
    weights.validate();
    augment.validate();
}

void RunConfig::validate() const {
    data.validate();
    encoder.validate();
    train.validate();
    require(encoder.image_h == data.height && encoder.image_w == data.width, ErrorKind::Config,
            "encoder input size must match the dataset image size");
    require(train.hold_out == data.hold_out, ErrorKind::Config,
            "train.hold_out (" + std::to_string(train.hold_out) + ") differs from data.hold_out (" +
                std::to_string(data.hold_out) + ")");
    require(pretrain.epochs >= 1 && pretrain.batch_size >= 1 && pretrain.learning_rate > 0, ErrorKind::Config,
            "pretrain: epochs, batch_size and learning_rate must be positive");
    require(eval.max_severity >= 1 && eval.max_severity <= 5, ErrorKind::Config, "eval.max_severity must be in 1..5");
    require(!eval.seeds.empty(), ErrorKind::Config, "eval.seeds must not be empty");
}

Json to_json(const AugmentConfig& c) {
    Json ops = Json::array();
    for (WdOp op : c.wd_ops) ops.push_back(std::string(wd_op_name(op)));
    return {{"wd_enabled", c.wd_enabled},
            {"cd_enabled", c.cd_enabled},
            {"wd_ops", ops},
            {"theta_max", c.theta_max},
            {"gmm",
             {{"weights", c.gmm.weights},
              {"sigmas", c.gmm.sigmas},
              {"relative_to_feature_std", c.gmm.relative_to_feature_std}}},
            {"detach_centroid", c.detach_centroid},
            {"fuse_literal", c.fuse_literal}};
}

AugmentConfig augment_config_from_json(const Json& j) {
    check_keys(j, {"wd_enabled", "cd_enabled", "wd_ops", "theta_max", "gmm", "detach_centroid", "fuse_literal"},
               "train.augment");
    AugmentConfig c;
    read(j, "wd_enabled", c.wd_enabled);
    read(j, "cd_enabled", c.cd_enabled);
    if (j.contains("wd_ops")) {
        c.wd_ops.clear();
        for (const auto& name : j.at("wd_ops")) c.wd_ops.push_back(parse_wd_op(name.get<std::string>()));
    }
    read(j, "theta_max", c.theta_max);
    if (j.contains("gmm")) {
        const Json& g = j.at("gmm");
        check_keys(g, {"weights", "sigmas", "relative_to_feature_std"}, "train.augment.gmm");
        read(g, "weights", c.gmm.weights);
        read(g, "sigmas", c.gmm.sigmas);
        read(g, "relative_to_feature_std", c.gmm.relative_to_feature_std);
    }
    read(j, "detach_centroid", c.detach_centroid);
    read(j, "fuse_literal", c.fuse_literal);
    return c;
}

Json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_identities", c.batch_identities},
            {"learning_rate", c.learning_rate},
            {"optimizer", c.optimizer},
            {"loss_weights", {{"binary", c.weights.binary}, {"domain", c.weights.domain}, {"distill", c.weights.distill}}},
            {"augment", to_json(c.augment)},
            {"seed", c.seed},
            {"hold_out", c.hold_out},
            {"detach_targets", c.detach_targets},
            {"checkpoint_every", c.checkpoint_every},
            {"two_phase", c.two_phase},
            {"student_only", c.student_only},
            {"trace_augment", c.trace_augment},
            {"max_steps", c.max_steps}};
}

TrainConfig train_config_from_json(const Json& j) {
    check_keys(j,
               {"epochs", "batch_identities", "learning_rate", "optimizer", "loss_weights", "augment", "seed",
                "hold_out", "detach_targets", "checkpoint_every", "two_phase", "student_only", "trace_augment",
                "max_steps"},
               "train");
    TrainConfig c;
    read(j, "epochs", c.epochs);
    read(j, "batch_identities", c.batch_identities);
    read(j, "learning_rate", c.learning_rate);
    read(j, "optimizer", c.optimizer);
    if (j.contains("loss_weights")) {
        const Json& w = j.at("loss_weights");
        check_keys(w, {"binary", "domain", "distill"}, "train.loss_weights");
        read(w, "binary", c.weights.binary);
        read(w, "domain", c.weights.domain);
        read(w, "distill", c.weights.distill);
    }
    if (j.contains("augment")) c.augment = augment_config_from_json(j.at("augment"));
    read(j, "seed", c.seed);
    read(j, "hold_out", c.hold_out);
    read(j, "detach_targets", c.detach_targets);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "two_phase", c.two_phase);
    read(j, "student_only", c.student_only);
    read(j, "trace_augment", c.trace_augment);
    read(j, "max_steps", c.max_steps);
    return c;
}

Json to_json(const EncoderSpec& s) {
    return {{"image_h", s.image_h},
            {"image_w", s.image_w},
            {"in_channels", s.in_channels},
            {"widths", s.widths},
            {"latent_c", s.latent_c}};
}

EncoderSpec encoder_spec_from_json(const Json& j) {
    check_keys(j, {"image_h", "image_w", "in_channels", "widths", "latent_c"}, "encoder");
    EncoderSpec s;
    read(j, "image_h", s.image_h);
    read(j, "image_w", s.image_w);
    read(j, "in_channels", s.in_channels);
    read(j, "widths", s.widths);
    read(j, "latent_c", s.latent_c);
    return s;
}

Json to_json(const RunConfig& c) {
    Json kinds = Json::array();
    for (PerturbKind k : c.eval.perturb_kinds) kinds.push_back(std::string(perturb_name(k)));
    return {{"profile", c.profile},
            {"data", to_json(c.data)},
            {"encoder", to_json(c.encoder)},
            {"pretrain",
             {{"epochs", c.pretrain.epochs},
              {"batch_size", c.pretrain.batch_size},
              {"learning_rate", c.pretrain.learning_rate},
              {"seed", c.pretrain.seed},
              {"unit_norm_output", c.pretrain.unit_norm_output}}},
            {"train", to_json(c.train)},
            {"eval",
             {{"seeds", c.eval.seeds},
              {"perturb_kinds", kinds},
              {"max_severity", c.eval.max_severity},
              {"perturb_seed", c.eval.perturb_seed}}}};
}

RunConfig run_config_from_json(const Json& j) {
    check_keys(j, {"profile", "data", "encoder", "pretrain", "train", "eval"}, "config");
    RunConfig c;
    read(j, "profile", c.profile);
    if (j.contains("data")) {
        check_keys(j.at("data"),
                   {"identities", "images_per_identity", "group_size", "m", "hold_out", "height", "width",
                    "train_fraction", "val_fraction", "seed", "forgery"},
                   "data");
        c.data = dataset_config_from_json(j.at("data"));
    }
    if (j.contains("encoder")) c.encoder = encoder_spec_from_json(j.at("encoder"));
    if (j.contains("pretrain")) {
        const Json& p = j.at("pretrain");
        check_keys(p, {"epochs", "batch_size", "learning_rate", "seed", "unit_norm_output"}, "pretrain");
        read(p, "epochs", c.pretrain.epochs);
        read(p, "batch_size", c.pretrain.batch_size);
        read(p, "learning_rate", c.pretrain.learning_rate);
        read(p, "seed", c.pretrain.seed);
        read(p, "unit_norm_output", c.pretrain.unit_norm_output);
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("eval")) {
        const Json& e = j.at("eval");
        check_keys(e, {"seeds", "perturb_kinds", "max_severity", "perturb_seed"}, "eval");
        read(e, "seeds", c.eval.seeds);
        if (e.contains("perturb_kinds")) {
            c.eval.perturb_kinds.clear();
            for (const auto& k : e.at("perturb_kinds")) {
                c.eval.perturb_kinds.push_back(parse_perturb_kind(k.get<std::string>()));
            }
        }
        read(e, "max_severity", c.eval.max_severity);
        read(e, "perturb_seed", c.eval.perturb_seed);
    }
    return c;
}

Json profile_json(const std::string& name) {
    RunConfig c;
    c.profile = name;
    if (name == "desk") {
        c.data.identities = 200;
        c.train.epochs = 30;
        c.pretrain.epochs = 30;
    } else if (name == "tiny") {
        c.data.identities = 20;
        c.train.epochs = 2;
        c.pretrain.epochs = 10;
        c.pretrain.batch_size = 16;
        c.eval.seeds = {1, 2};
    } else {
        fail(ErrorKind::Config, "unknown profile '" + name + "' (expected one of: tiny, desk)");
    }
    c.data.hold_out = 5;
    c.train.hold_out = c.data.hold_out;
    // 2e-4 barely moves the small encoders within the profile's epoch budget
    c.train.learning_rate = 3e-3;
    return to_json(c);
}

std::vector<std::string> profile_names() { return {"tiny", "desk"}; }

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Config, "config-not-found", "config file not found: " + path.string());
    Json patch;
    try {
        patch = Json::parse(in);
    } catch (const Json::exception& e) {
        fail(ErrorKind::Config, "cannot parse " + path.string() + ": " + e.what());
    }
    require(patch.is_object(), ErrorKind::Config, path.string() + ": top level must be an object");
    Json base = profile_json(patch.value("profile", std::string("desk")));
    base.merge_patch(patch);
    RunConfig c = run_config_from_json(base);
    c.validate();
    return c;
}

Json apply_overrides(Json base, const std::vector<std::string>& assignments) {
    for (const std::string& a : assignments) {
        const auto eq = a.find('=');
        require(eq != std::string::npos && eq > 0, ErrorKind::Config, "override '" + a + "' is not key=value");
        std::string pointer = "/" + a.substr(0, eq);
        for (char& ch : pointer)
            if (ch == '.') ch = '/';
        const std::string text = a.substr(eq + 1);
        Json value;
        try {
            value = Json::parse(text);
        } catch (const Json::exception&) {
            value = text;
        }
        base[Json::json_pointer(pointer)] = value;
    }
    return base;
}

std::string canonical_dump(const Json& j) { return j.dump(); }

std::string config_hash(const Json& j) { return sha256_hex(canonical_dump(j)); }

}  // namespace lsda
