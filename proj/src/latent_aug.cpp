#include "lsda/latent_aug.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lsda/error.hpp"

namespace lsda {

std::string_view wd_op_name(WdOp op) {
    switch (op) {
        case WdOp::CentrifugalDirect: return "centrifugal_direct";
        case WdOp::CentrifugalIndirect: return "centrifugal_indirect";
        case WdOp::Affine: return "affine";
        case WdOp::Additive: return "additive";
    }
    return "none";
}

WdOp parse_wd_op(std::string_view name) {
    for (WdOp op : {WdOp::CentrifugalDirect, WdOp::CentrifugalIndirect, WdOp::Affine, WdOp::Additive}) {
        if (wd_op_name(op) == name) return op;
    }
    fail(ErrorKind::Config, "unknown within-domain op '" + std::string(name) + "'");
}

void GmmConfig::validate() const {
    require(!weights.empty() && weights.size() == sigmas.size(), ErrorKind::Config,
            "gmm: need one sigma per mixture weight");
    double total = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        require(weights[k] >= 0.0, ErrorKind::Config, "gmm: mixture weights must be >= 0");
        require(sigmas[k] > 0.0, ErrorKind::Config, "gmm: sigmas must be > 0");
        total += weights[k];
    }
    require(std::abs(total - 1.0) < 1e-9, ErrorKind::Config, "gmm: mixture weights must sum to 1");
}

double GmmConfig::mixture_variance() const {
    double v = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) v += weights[k] * sigmas[k] * sigmas[k];
    return v;
}

void AugmentConfig::validate() const {
    require(theta_max >= 0.0, ErrorKind::Config, "augment: theta_max must be >= 0");
    if (wd_enabled) {
        require(!wd_ops.empty(), ErrorKind::Config, "augment: wd_enabled with an empty op list");
    }
    gmm.validate();
}

namespace aug {

namespace {

void check_batch(const Tensor& z, const char* what) {
    check_rank(z, 4, what);
    require(z.dim(0) >= 1, ErrorKind::Argument, std::string(what) + ": empty batch");
}

void check_point(const Tensor& z, const Tensor& point, const char* what) {
    require(point.rank() == 4 && point.dim(0) == 1 && point.dim(1) == z.dim(1) && point.dim(2) == z.dim(2) &&
                point.dim(3) == z.dim(3),
            ErrorKind::Argument,
            std::string(what) + ": expected [1,C,h,w] matching " + shape_str(z.shape()) + ", got " +
                shape_str(point.shape()));
}

double coef(std::span<const double> values, int j) {
    return values.size() == 1 ? values[0] : values[static_cast<std::size_t>(j)];
}

void check_coefs(std::span<const double> values, int batch, const char* what) {
    require(values.size() == 1 || values.size() == static_cast<std::size_t>(batch), ErrorKind::Argument,
            std::string(what) + ": need 1 or B coefficients");
    for (double v : values) {
        require(v >= 0.0 && v <= 1.0, ErrorKind::Argument, std::string(what) + ": coefficient outside [0,1]");
    }
}

}  // namespace

Tensor centroid(const Tensor& z) {
    check_batch(z, "centroid");
    const int batch = z.dim(0);
    const std::size_t size = z.slice_size();
    Tensor mu({1, z.dim(1), z.dim(2), z.dim(3)});
#pragma omp parallel for schedule(static)
    for (std::size_t e = 0; e < size; ++e) {
        double sum = 0.0;
        for (int j = 0; j < batch; ++j) sum += z[j * size + e];
        mu[e] = sum / batch;
    }
    return mu;
}

Tensor centrifugal_direct(const Tensor& z, const Tensor& mu, std::span<const double> beta) {
    check_batch(z, "centrifugal_direct");
    check_point(z, mu, "centrifugal_direct");
    check_coefs(beta, z.dim(0), "centrifugal_direct");
    Tensor out = Tensor::zeros_like(z);
    const std::size_t size = z.slice_size();
#pragma omp parallel for schedule(static)
    for (int j = 0; j < z.dim(0); ++j) {
        const double b = coef(beta, j);
        for (std::size_t e = 0; e < size; ++e) {
            const double v = z[j * size + e];
            out[j * size + e] = v + b * (v - mu[e]);
        }
    }
    return out;
}

int hardest_index(const Tensor& z, const Tensor& mu) {
    check_batch(z, "hardest_example");
    check_point(z, mu, "hardest_example");
    const std::size_t size = z.slice_size();
    int best = 0;
    double best_dist = -1.0;
    for (int j = 0; j < z.dim(0); ++j) {
        double d = 0.0;
        for (std::size_t e = 0; e < size; ++e) {
            const double diff = z[j * size + e] - mu[e];
            d += diff * diff;
        }
        if (d > best_dist) {
            best_dist = d;
            best = j;
        }
    }
    return best;
}

Tensor hardest_example(const Tensor& z, const Tensor& mu) {
    const int idx = hardest_index(z, mu);
    const std::size_t size = z.slice_size();
    Tensor a({1, z.dim(1), z.dim(2), z.dim(3)});
    std::copy_n(z.data() + idx * size, size, a.data());
    return a;
}

Tensor centrifugal_indirect(const Tensor& z, const Tensor& a, std::span<const double> beta) {
    check_batch(z, "centrifugal_indirect");
    check_point(z, a, "centrifugal_indirect");
    check_coefs(beta, z.dim(0), "centrifugal_indirect");
    Tensor out = Tensor::zeros_like(z);
    const std::size_t size = z.slice_size();
#pragma omp parallel for schedule(static)
    for (int j = 0; j < z.dim(0); ++j) {
        const double b = coef(beta, j);
        for (std::size_t e = 0; e < size; ++e) {
            const double v = z[j * size + e];
            out[j * size + e] = v + b * (a[e] - v);
        }
    }
    return out;
}

std::vector<int> rotation_source_map(int height, int width, double theta) {
    std::vector<int> map(static_cast<std::size_t>(height) * width, -1);
    const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
    const double c = std::cos(theta), s = std::sin(theta);
    for (int r = 0; r < height; ++r) {
        for (int col = 0; col < width; ++col) {
            // Inverse rotation of the (row, col) offset from the grid centre.
            const double y = r - cy, x = col - cx;
            const long sr = std::lround(c * y + s * x + cy);
            const long sc = std::lround(-s * y + c * x + cx);
            if (sr >= 0 && sr < height && sc >= 0 && sc < width) {
                map[static_cast<std::size_t>(r) * width + col] = static_cast<int>(sr * width + sc);
            }
        }
    }
    return map;
}

Tensor affine_rotate(const Tensor& z, double theta) {
    check_batch(z, "affine_rotate");
    const std::vector<int> map = rotation_source_map(z.dim(2), z.dim(3), theta);
    const std::size_t cells = map.size();
    const std::size_t planes = static_cast<std::size_t>(z.dim(0)) * z.dim(1);
    Tensor out = Tensor::zeros_like(z);
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = z.data() + p * cells;
        double* dst = out.data() + p * cells;
        for (std::size_t i = 0; i < cells; ++i) dst[i] = map[i] >= 0 ? src[map[i]] : 0.0;
    }
    return out;
}

GmmDraw sample_gmm(const Shape& shape, const GmmConfig& gmm, double scale, Rng& rng) {
    gmm.validate();
    GmmDraw draw{Tensor(shape), {}};
    const int batch = shape.at(0);
    const std::size_t size = draw.noise.slice_size();
    std::discrete_distribution<int> pick(gmm.weights.begin(), gmm.weights.end());
    for (int j = 0; j < batch; ++j) {
        const int k = pick(rng);
        draw.components.push_back(k);
        const double sd = gmm.sigmas[static_cast<std::size_t>(k)] * scale;
        for (std::size_t e = 0; e < size; ++e) draw.noise[j * size + e] = normal(rng, 0.0, sd);
    }
    return draw;
}

double feature_std(const Tensor& z) {
    require(z.numel() > 0, ErrorKind::Argument, "feature_std: empty tensor");
    const double n = static_cast<double>(z.numel());
    double mean = 0.0;
    for (double v : z.values()) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : z.values()) var += (v - mean) * (v - mean);
    return std::sqrt(var / n);
}

Tensor additive(const Tensor& z, std::span<const double> beta, const Tensor& noise) {
    check_batch(z, "additive");
    check_same_shape(z, noise, "additive");
    check_coefs(beta, z.dim(0), "additive");
    Tensor out = Tensor::zeros_like(z);
    const std::size_t size = z.slice_size();
#pragma omp parallel for schedule(static)
    for (int j = 0; j < z.dim(0); ++j) {
        const double b = coef(beta, j);
        for (std::size_t e = 0; e < size; ++e) out[j * size + e] = z[j * size + e] + b * noise[j * size + e];
    }
    return out;
}

Tensor additive_gmm(const Tensor& z, std::span<const double> beta, const GmmConfig& gmm, Rng& rng) {
    const double scale = gmm.relative_to_feature_std ? feature_std(z) : 1.0;
    return additive(z, beta, sample_gmm(z.shape(), gmm, scale, rng).noise);
}

Tensor mixup_cross(const Tensor& zi, const Tensor& zk, std::span<const double> alpha) {
    check_batch(zi, "mixup_cross");
    check_same_shape(zi, zk, "mixup_cross");
    check_coefs(alpha, zi.dim(0), "mixup_cross");
    Tensor out = Tensor::zeros_like(zi);
    const std::size_t size = zi.slice_size();
#pragma omp parallel for schedule(static)
    for (int j = 0; j < zi.dim(0); ++j) {
        const double a = coef(alpha, j);
        for (std::size_t e = 0; e < size; ++e) {
            out[j * size + e] = a * zi[j * size + e] + (1.0 - a) * zk[j * size + e];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Recorded ops

Var centroid(Tape& tape, Var z) {
    return tape.record(centroid(tape.value(z)), {z}, [=](Tape& t, const Tensor& g) {
        Tensor& dz = t.grad(z);
        const int batch = dz.dim(0);
        const std::size_t size = dz.slice_size();
        for (int j = 0; j < batch; ++j)
            for (std::size_t e = 0; e < size; ++e) dz[j * size + e] += g[e] / batch;
    });
}

Var centrifugal_direct(Tape& tape, Var z, Var mu, std::vector<double> beta) {
    Tensor out = centrifugal_direct(tape.value(z), tape.value(mu), beta);
    return tape.record(std::move(out), {z, mu}, [=](Tape& t, const Tensor& g) {
        const std::size_t size = g.slice_size();
        const int batch = g.dim(0);
        if (t.requires_grad(z)) {
            Tensor& dz = t.grad(z);
            for (int j = 0; j < batch; ++j) {
                const double b = coef(beta, j);
                for (std::size_t e = 0; e < size; ++e) dz[j * size + e] += (1.0 + b) * g[j * size + e];
            }
        }
        if (t.requires_grad(mu)) {
            Tensor& dmu = t.grad(mu);
            for (int j = 0; j < batch; ++j) {
                const double b = coef(beta, j);
                for (std::size_t e = 0; e < size; ++e) dmu[e] -= b * g[j * size + e];
            }
        }
    });
}

Var hardest_example(Tape& tape, Var z, Var mu) {
    return select_sample(tape, z, hardest_index(tape.value(z), tape.value(mu)));
}

Var select_sample(Tape& tape, Var z, int idx) {
    const Tensor& v = tape.value(z);
    require(idx >= 0 && idx < v.dim(0), ErrorKind::Argument, "select_sample: index out of range");
    Shape shape = v.shape();
    shape[0] = 1;
    const std::size_t size = v.slice_size();
    Tensor out(shape, std::vector<double>(v.data() + idx * size, v.data() + (idx + 1) * size));
    return tape.record(std::move(out), {z}, [=](Tape& t, const Tensor& g) {
        Tensor& dz = t.grad(z);
        const std::size_t size = g.numel();
        for (std::size_t e = 0; e < size; ++e) dz[idx * size + e] += g[e];
    });
}

Var centrifugal_indirect(Tape& tape, Var z, Var a, std::vector<double> beta) {
    Tensor out = centrifugal_indirect(tape.value(z), tape.value(a), beta);
    return tape.record(std::move(out), {z, a}, [=](Tape& t, const Tensor& g) {
        const std::size_t size = g.slice_size();
        const int batch = g.dim(0);
        if (t.requires_grad(z)) {
            Tensor& dz = t.grad(z);
            for (int j = 0; j < batch; ++j) {
                const double b = coef(beta, j);
                for (std::size_t e = 0; e < size; ++e) dz[j * size + e] += (1.0 - b) * g[j * size + e];
            }
        }
        if (t.requires_grad(a)) {
            Tensor& da = t.grad(a);
            for (int j = 0; j < batch; ++j) {
                const double b = coef(beta, j);
                for (std::size_t e = 0; e < size; ++e) da[e] += b * g[j * size + e];
            }
        }
    });
}

Var affine_rotate(Tape& tape, Var z, double theta) {
    const Tensor& v = tape.value(z);
    std::vector<int> map = rotation_source_map(v.dim(2), v.dim(3), theta);
    return tape.record(affine_rotate(v, theta), {z}, [z, map = std::move(map)](Tape& t, const Tensor& g) {
        // Gradient of a gather is a scatter-add through the same map.
        Tensor& dz = t.grad(z);
        const std::size_t cells = map.size();
        const std::size_t planes = static_cast<std::size_t>(g.dim(0)) * g.dim(1);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < cells; ++i)
                if (map[i] >= 0) dz[p * cells + map[i]] += g[p * cells + i];
    });
}

Var additive(Tape& tape, Var z, std::vector<double> beta, Tensor unit_noise, bool scale_by_std) {
    const Tensor& v = tape.value(z);
    const double s = scale_by_std ? feature_std(v) : 1.0;
    Tensor scaled = unit_noise;
    for (double& e : scaled.values()) e *= s;
    Tensor out = additive(v, beta, scaled);
    return tape.record(std::move(out), {z}, [=, noise = std::move(unit_noise)](Tape& t, const Tensor& g) {
        Tensor& dz = t.grad(z);
        const Tensor& zv = t.value(z);
        const std::size_t size = g.slice_size();
        const int batch = g.dim(0);
        for (std::size_t i = 0; i < g.numel(); ++i) dz[i] += g[i];
        if (!scale_by_std || s == 0.0) return;
        // d s / d z_e = (z_e - mean) / (N s)
        double ds = 0.0;
        for (int j = 0; j < batch; ++j) {
            const double b = coef(beta, j);
            for (std::size_t e = 0; e < size; ++e) ds += g[j * size + e] * b * noise[j * size + e];
        }
        const double n = static_cast<double>(zv.numel());
        double mean = 0.0;
        for (double x : zv.values()) mean += x;
        mean /= n;
        for (std::size_t i = 0; i < zv.numel(); ++i) dz[i] += ds * (zv[i] - mean) / (n * s);
    });
}

Var mixup_cross(Tape& tape, Var zi, Var zk, std::vector<double> alpha) {
    Tensor out = mixup_cross(tape.value(zi), tape.value(zk), alpha);
    return tape.record(std::move(out), {zi, zk}, [=](Tape& t, const Tensor& g) {
        const std::size_t size = g.slice_size();
        const int batch = g.dim(0);
        for (int j = 0; j < batch; ++j) {
            const double a = coef(alpha, j);
            if (t.requires_grad(zi)) {
                Tensor& d = t.grad(zi);
                for (std::size_t e = 0; e < size; ++e) d[j * size + e] += a * g[j * size + e];
            }
            if (t.requires_grad(zk)) {
                Tensor& d = t.grad(zk);
                for (std::size_t e = 0; e < size; ++e) d[j * size + e] += (1.0 - a) * g[j * size + e];
            }
        }
    });
}

}  // namespace aug

// ---------------------------------------------------------------------------
// Fusion

FusionLayers::FusionLayers(int channels, std::uint64_t init_seed) {
    require(channels >= 1, ErrorKind::Argument, "fusion: channels must be positive");
    Rng rng(init_seed);
    auto init = [&](const std::string& name) {
        Tensor w({channels, 2 * channels, 1, 1});
        const double sd = std::sqrt(1.0 / (2.0 * channels));
        for (double& v : w.values()) v = normal(rng, 0.0, sd);
        return Parameter(name, std::move(w));
    };
    aug_weight = init("fusion.aug.weight");
    aug_bias = Parameter("fusion.aug.bias", Tensor({channels}));
    final_weight = init("fusion.final.weight");
    final_bias = Parameter("fusion.final.bias", Tensor({channels}));
}

void FusionLayers::set_selector() {
    const int c = channels();
    final_weight.value.fill(0.0);
    final_bias.value.fill(0.0);
    for (int o = 0; o < c; ++o) final_weight.value.at(o, c + o, 0, 0) = 1.0;
}

void FusionLayers::set_average() {
    const int c = channels();
    for (Parameter* w : {&aug_weight, &final_weight}) {
        w->value.fill(0.0);
        for (int o = 0; o < c; ++o) {
            w->value.at(o, o, 0, 0) = 0.5;
            w->value.at(o, c + o, 0, 0) = 0.5;
        }
    }
    aug_bias.value.fill(0.0);
    final_bias.value.fill(0.0);
}

Var fuse(Tape& tape, Var z, Var z_wd, Var z_cd, FusionLayers& layers, bool literal) {
    const Tensor& zv = tape.value(z);
    check_rank(zv, 4, "fuse");
    check_same_shape(zv, tape.value(z_wd), "fuse");
    check_same_shape(zv, tape.value(z_cd), "fuse");
    require(zv.dim(1) == layers.channels(), ErrorKind::Argument, "fuse: channel count does not match fusion layers");
    Var aug = ops::conv2d(tape, ops::concat_channels(tape, z_wd, z_cd), tape.parameter(layers.aug_weight),
                          tape.parameter(layers.aug_bias), 1, 0);
    Var second = literal ? z_wd : z;
    return ops::conv2d(tape, ops::concat_channels(tape, aug, second), tape.parameter(layers.final_weight),
                       tape.parameter(layers.final_bias), 1, 0);
}

std::vector<Var> augment_domain_batch(Tape& tape, const std::vector<Var>& fake_features,
                                      const AugmentConfig& config, FusionLayers& layers, std::uint64_t seed,
                                      std::vector<DomainAugmentTrace>* trace,
                                      const std::vector<DomainAugmentTrace>* replay) {
    config.validate();
    const int domains = static_cast<int>(fake_features.size());
    require(domains >= 1, ErrorKind::Argument, "augment_domain_batch: no forgery features");
    if (config.cd_enabled && domains < 2) {
        fail(ErrorKind::Config, "cross-domain augmentation needs at least 2 forgery domains, got " +
                                    std::to_string(domains));
    }
    require(replay == nullptr || static_cast<int>(replay->size()) == domains, ErrorKind::Argument,
            "augment_domain_batch: replay trace has the wrong number of domains");
    std::vector<Var> fused;
    for (int i = 0; i < domains; ++i) {
        Rng rng = make_rng(seed, Stream::Augment, {static_cast<std::uint64_t>(i)});
        const Var z = fake_features[static_cast<std::size_t>(i)];
        const int batch = tape.value(z).dim(0);
        DomainAugmentTrace record;
        record.domain = i;
        record.op = "none";

        Var z_wd = z;
        if (config.wd_enabled) {
            const WdOp op = config.wd_ops[static_cast<std::size_t>(
                uniform_int(rng, 0, static_cast<int>(config.wd_ops.size()) - 1))];
            std::vector<double> betas(static_cast<std::size_t>(batch));
            for (double& b : betas) b = uniform(rng);
            record.op = std::string(wd_op_name(op));
            switch (op) {
                case WdOp::CentrifugalDirect: {
                    Var mu = aug::centroid(tape, z);
                    if (config.detach_centroid) mu = ops::detach(tape, mu);
                    z_wd = aug::centrifugal_direct(tape, z, mu, betas);
                    record.betas = betas;
                    break;
                }
                case WdOp::CentrifugalIndirect: {
                    Var mu = aug::centroid(tape, z);
                    if (config.detach_centroid) mu = ops::detach(tape, mu);
                    record.hard_index = replay != nullptr ? (*replay)[static_cast<std::size_t>(i)].hard_index
                                                          : aug::hardest_index(tape.value(z), tape.value(mu));
                    z_wd = aug::centrifugal_indirect(tape, z, aug::select_sample(tape, z, record.hard_index), betas);
                    record.betas = betas;
                    break;
                }
                case WdOp::Affine: {
                    record.theta = uniform(rng, -config.theta_max, config.theta_max);
                    z_wd = aug::affine_rotate(tape, z, record.theta);
                    break;
                }
                case WdOp::Additive: {
                    aug::GmmDraw draw = aug::sample_gmm(tape.value(z).shape(), config.gmm, 1.0, rng);
                    record.components = draw.components;
                    record.betas = betas;
                    z_wd = aug::additive(tape, z, betas, std::move(draw.noise), config.gmm.relative_to_feature_std);
                    break;
                }
            }
        }

        Var z_cd = z;
        if (config.cd_enabled) {
            int partner = uniform_int(rng, 0, domains - 2);
            if (partner >= i) ++partner;
            std::vector<double> alphas(static_cast<std::size_t>(batch));
            for (double& a : alphas) a = uniform(rng);
            z_cd = aug::mixup_cross(tape, z, fake_features[static_cast<std::size_t>(partner)], alphas);
            record.partner = partner;
            record.alphas = alphas;
        }

        fused.push_back(fuse(tape, z, z_wd, z_cd, layers, config.fuse_literal));
        if (trace != nullptr) trace->push_back(std::move(record));
    }
    return fused;
}

}  // namespace lsda
