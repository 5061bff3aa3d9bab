#include "lsda/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "lsda/error.hpp"
#include "lsda/hashing.hpp"

namespace lsda {

namespace fs = std::filesystem;

std::string_view split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    fail(ErrorKind::Argument, "unknown split '" + std::string(name) + "'");
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

struct Blob {
    double cy, cx, radius;
    std::array<double, 3> color;
};

struct IdentityPattern {
    std::array<double, 3> background;
    std::vector<Blob> blobs;
    double freq, angle, phase;
    std::array<double, 3> grating;
};

IdentityPattern identity_pattern(int identity_id, std::uint64_t seed, int height, int width) {
    Rng rng = make_rng(seed, Stream::RealImage, {static_cast<std::uint64_t>(identity_id)});
    IdentityPattern p;
    for (double& c : p.background) c = uniform(rng, 0.2, 0.7);
    p.blobs.resize(4);
    for (Blob& b : p.blobs) {
        b.cy = uniform(rng, 4.0, height - 4.0);
        b.cx = uniform(rng, 4.0, width - 4.0);
        b.radius = uniform(rng, 2.5, 6.0);
        for (double& c : b.color) c = uniform(rng, -0.35, 0.35);
    }
    p.freq = uniform(rng, 0.08, 0.25);
    p.angle = uniform(rng, 0.0, std::numbers::pi);
    p.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    for (double& c : p.grating) c = uniform(rng, 0.03, 0.1);
    return p;
}

void check_method(int method) {
    require(method >= 1 && method <= kMaxForgeryMethod, ErrorKind::Argument,
            "forgery method " + std::to_string(method) + " out of range 1.." +
                std::to_string(kMaxForgeryMethod));
}

Image box_blur(const Image& src, int radius) {
    Image out(src.height, src.width);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double sum = 0.0;
                int count = 0;
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dx = -radius; dx <= radius; ++dx) {
                        const int yy = std::clamp(y + dy, 0, src.height - 1);
                        const int xx = std::clamp(x + dx, 0, src.width - 1);
                        sum += src.at(yy, xx, c);
                        ++count;
                    }
                out.at(y, x, c) = sum / count;
            }
    return out;
}

// Blends `target` into `img` inside the region: img += weight(y,x) * (target - img).
template <typename WeightFn>
void blend_region(Image& img, const Image& target, const ForgeryRegion& region, WeightFn weight) {
    for (int y = region.top; y < region.top + region.height; ++y)
        for (int x = region.left; x < region.left + region.width; ++x) {
            const double a = weight(y, x);
            for (int c = 0; c < 3; ++c) {
                double& v = img.at(y, x, c);
                v = clamp01(v + a * (target.at(y, x, c) - v));
            }
        }
}

void apply_artifact(Image& img, int method, double strength, Rng& rng, const ForgeryParams& params) {
    const ForgeryRegion& region = params.region;
    switch (method) {
        case 1: {
            const int donor = 1'000'000 + uniform_int(rng, 0, 999'999);
            const std::uint64_t donor_seed = rng();
            const Image patch = render_identity(donor, 0, donor_seed, img.height, img.width);
            const int cell = params.seam_cell;
            blend_region(img, patch, region, [&](int y, int x) {
                const bool strong = ((y / cell) + (x / cell)) % 2 == 0;
                return strength * (strong ? params.seam_strong : params.seam_weak);
            });
            break;
        }
        case 2: {
            const Image blurred = box_blur(img, params.blur_radius);
            blend_region(img, blurred, region, [&](int, int) { return strength; });
            break;
        }
        case 3: {
            const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            const double f = params.stripe_cycles;
            for (int y = region.top; y < region.top + region.height; ++y)
                for (int x = region.left; x < region.left + region.width; ++x) {
                    const double s = strength * params.stripe_amplitude *
                                     std::sin(2.0 * std::numbers::pi * f * x / img.width + phase);
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp01(img.at(y, x, c) + s);
                }
            break;
        }
        case 4: {
            Image rotated = img;
            for (int y = region.top; y < region.top + region.height; ++y)
                for (int x = region.left; x < region.left + region.width; ++x)
                    for (int c = 0; c < 3; ++c) rotated.at(y, x, c) = img.at(y, x, (c + 1) % 3);
            blend_region(img, rotated, region, [&](int, int) { return strength * params.permute_strength; });
            break;
        }
        default: fail(ErrorKind::Argument, "primitive artifact " + std::to_string(method) + " unknown");
    }
}

}  // namespace

Image render_identity(int identity_id, int frame, std::uint64_t seed, int height, int width,
                      const RenderParams& params) {
    const IdentityPattern p = identity_pattern(identity_id, seed, height, width);
    Rng jitter = make_rng(seed, Stream::RealImage,
                          {static_cast<std::uint64_t>(identity_id), static_cast<std::uint64_t>(frame) + 1});
    const double dy = uniform(jitter, -params.max_shift, params.max_shift);
    const double dx = uniform(jitter, -params.max_shift, params.max_shift);
    const double brightness = uniform(jitter, -params.max_brightness, params.max_brightness);
    Image img(height, width);
    const double ca = std::cos(p.angle), sa = std::sin(p.angle);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double yy = y + dy, xx = x + dx;
            const double wave = std::sin(2.0 * std::numbers::pi * p.freq * (ca * xx + sa * yy) + p.phase);
            for (int c = 0; c < 3; ++c) {
                double v = p.background[c] + brightness + p.grating[c] * wave;
                for (const Blob& b : p.blobs) {
                    const double d2 = (yy - b.cy) * (yy - b.cy) + (xx - b.cx) * (xx - b.cx);
                    v += b.color[c] * std::exp(-d2 / (2.0 * b.radius * b.radius));
                }
                img.at(y, x, c) = v;
            }
        }
    for (double& v : img.pixels) {
        v = clamp01(v + normal(jitter, 0.0, params.pixel_noise));
    }
    return img;
}

std::vector<Sample> generate_real(int identity_count, int images_per_identity, std::uint64_t seed,
                                  int height, int width, int group_size) {
    require(identity_count >= 2, ErrorKind::Argument, "generate_real: identity_count must be >= 2");
    require(images_per_identity >= 1, ErrorKind::Argument, "generate_real: images_per_identity must be >= 1");
    require(group_size >= 1, ErrorKind::Argument, "generate_real: group_size must be >= 1");
    const int groups_per_identity = (images_per_identity + group_size - 1) / group_size;
    std::vector<Sample> out(static_cast<std::size_t>(identity_count) * images_per_identity);
#pragma omp parallel for schedule(dynamic)
    for (int id = 0; id < identity_count; ++id) {
        for (int f = 0; f < images_per_identity; ++f) {
            Sample& s = out[static_cast<std::size_t>(id) * images_per_identity + f];
            s.image = render_identity(id, f, seed, height, width);
            s.identity_id = id;
            s.domain = 0;
            s.frame = f;
            s.group_id = id * groups_per_identity + f / group_size;
        }
    }
    return out;
}

Sample apply_forgery(const Sample& sample, int method, std::uint64_t seed, const ForgeryParams& params) {
    require(sample.domain == 0, ErrorKind::Precondition,
            "apply_forgery: sample already fake (domain " + std::to_string(sample.domain) + ")");
    check_method(method);
    Sample out = sample;
    out.domain = method;
    Rng rng(derive_seed(seed, Stream::Forgery, {static_cast<std::uint64_t>(method)}));
    if (method < kMaxForgeryMethod) {
        apply_artifact(out.image, method, 1.0, rng, params);
    } else {
        const int first = uniform_int(rng, 1, 4);
        int second = uniform_int(rng, 1, 3);
        if (second >= first) ++second;
        apply_artifact(out.image, first, params.composite_strength, rng, params);
        apply_artifact(out.image, second, params.composite_strength, rng, params);
    }
    return out;
}

int stripe_frequency(const ForgeryParams& params) { return params.stripe_cycles; }

// ---------------------------------------------------------------------------
// Perturbations

std::string_view perturb_name(PerturbKind kind) {
    switch (kind) {
        case PerturbKind::Blur: return "blur";
        case PerturbKind::GaussianNoise: return "gaussian_noise";
        case PerturbKind::BlockQuantize: return "block_quantize";
        case PerturbKind::Rescale: return "rescale";
        case PerturbKind::Contrast: return "contrast";
    }
    return "blur";
}

PerturbKind parse_perturb_kind(std::string_view name) {
    for (PerturbKind k : kAllPerturbKinds) {
        if (perturb_name(k) == name) return k;
    }
    fail(ErrorKind::Argument, "unknown perturbation kind '" + std::string(name) + "'");
}

double perturb_parameter(PerturbKind kind, int severity) {
    require(severity >= 1 && severity <= 5, ErrorKind::Argument,
            "perturb: severity must be in 1..5, got " + std::to_string(severity));
    static constexpr std::array<double, 5> blur_sigma = {0.5, 0.8, 1.1, 1.4, 1.8};
    static constexpr std::array<double, 5> noise_sigma = {0.02, 0.04, 0.06, 0.08, 0.10};
    static constexpr std::array<double, 5> quant_step = {0.04, 0.08, 0.12, 0.16, 0.20};
    static constexpr std::array<double, 5> rescale_factor = {0.8, 0.65, 0.5, 0.4, 0.3};
    static constexpr std::array<double, 5> contrast_factor = {0.8, 0.65, 0.5, 0.4, 0.3};
    const auto i = static_cast<std::size_t>(severity - 1);
    switch (kind) {
        case PerturbKind::Blur: return blur_sigma[i];
        case PerturbKind::GaussianNoise: return noise_sigma[i];
        case PerturbKind::BlockQuantize: return quant_step[i];
        case PerturbKind::Rescale: return rescale_factor[i];
        case PerturbKind::Contrast: return contrast_factor[i];
    }
    return 0.0;
}

namespace {

Image gaussian_blur(const Image& src, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        total += kernel[i + radius];
    }
    for (double& k : kernel) k /= total;
    Image tmp(src.height, src.width), out(src.height, src.width);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    s += kernel[i + radius] * src.at(y, std::clamp(x + i, 0, src.width - 1), c);
                tmp.at(y, x, c) = s;
            }
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    s += kernel[i + radius] * tmp.at(std::clamp(y + i, 0, src.height - 1), x, c);
                out.at(y, x, c) = s;
            }
    return out;
}

Image resize_bilinear(const Image& src, int height, int width) {
    Image out(height, width);
    const double sy = static_cast<double>(src.height) / height;
    const double sx = static_cast<double>(src.width) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
                const double bottom = (1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
                out.at(y, x, c) = (1 - wy) * top + wy * bottom;
            }
        }
    }
    return out;
}

}  // namespace

Image perturb_image(const Image& image, PerturbKind kind, int severity, std::uint64_t seed) {
    const double param = perturb_parameter(kind, severity);
    Image out = image;
    switch (kind) {
        case PerturbKind::Blur: out = gaussian_blur(image, param); break;
        case PerturbKind::GaussianNoise: {
            Rng rng(derive_seed(seed, Stream::Perturb, {static_cast<std::uint64_t>(severity)}));
            for (double& v : out.pixels) v += normal(rng, 0.0, param);
            break;
        }
        case PerturbKind::BlockQuantize: {
            constexpr int block = 4;
            for (int by = 0; by < image.height; by += block)
                for (int bx = 0; bx < image.width; bx += block)
                    for (int c = 0; c < 3; ++c) {
                        const int y_end = std::min(by + block, image.height);
                        const int x_end = std::min(bx + block, image.width);
                        double mean = 0.0;
                        for (int y = by; y < y_end; ++y)
                            for (int x = bx; x < x_end; ++x) mean += image.at(y, x, c);
                        mean /= (y_end - by) * (x_end - bx);
                        for (int y = by; y < y_end; ++y)
                            for (int x = bx; x < x_end; ++x) {
                                const double dev = image.at(y, x, c) - mean;
                                out.at(y, x, c) = mean + std::round(dev / param) * param;
                            }
                    }
            break;
        }
        case PerturbKind::Rescale: {
            const int h = std::max(2, static_cast<int>(std::lround(image.height * param)));
            const int w = std::max(2, static_cast<int>(std::lround(image.width * param)));
            out = resize_bilinear(resize_bilinear(image, h, w), image.height, image.width);
            break;
        }
        case PerturbKind::Contrast: {
            double mean = 0.0;
            for (double v : image.pixels) mean += v;
            mean /= static_cast<double>(image.pixels.size());
            for (double& v : out.pixels) v = mean + param * (v - mean);
            break;
        }
    }
    for (double& v : out.pixels) v = clamp01(v);
    return out;
}

Sample perturb(const Sample& sample, PerturbKind kind, int severity, std::uint64_t seed) {
    Sample out = sample;
    out.image = perturb_image(sample.image, kind, severity, seed);
    return out;
}

// ---------------------------------------------------------------------------
// Image files

Image quantize(const Image& image) {
    Image out = image;
    for (double& v : out.pixels) v = std::round(clamp01(v) * 255.0) / 255.0;
    return out;
}

std::string encode_ppm(const Image& image) {
    std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::string bytes = header;
    bytes.reserve(header.size() + image.pixels.size());
    for (double v : image.pixels) {
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamp01(v) * 255.0))));
    }
    return bytes;
}

void write_ppm(const fs::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write image " + path.string());
    const std::string bytes = encode_ppm(image);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read image " + path.string());
    std::string magic;
    int width = 0, height = 0, maxval = 0;
    in >> magic >> width >> height >> maxval;
    require(magic == "P6" && width > 0 && height > 0 && maxval == 255, ErrorKind::Io,
            "unsupported image format in " + path.string());
    in.get();
    Image img(height, width);
    std::vector<unsigned char> raw(img.pixels.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(static_cast<std::size_t>(in.gcount()) == raw.size(), ErrorKind::Io, "truncated image " + path.string());
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
    return img;
}

// ---------------------------------------------------------------------------
// Manifest and dataset

void DatasetConfig::validate() const {
    auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::Config, msg); };
    check(m >= 2, "dataset: m must be >= 2 (cross-domain mixup needs two forgery domains), got " + std::to_string(m));
    check(m <= kMaxForgeryMethod, "dataset: m must be <= " + std::to_string(kMaxForgeryMethod));
    check(hold_out >= 0 && hold_out <= m, "dataset: hold_out must be 0 (none) or in 1..m");
    check(identities >= 5, "dataset: need at least 5 identities");
    check(images_per_identity >= 1 && group_size >= 1, "dataset: invalid images_per_identity/group_size");
    check(height >= 8 && width >= 8, "dataset: image size too small");
    check(train_fraction > 0 && val_fraction > 0 && train_fraction + val_fraction < 1.0,
          "dataset: invalid split fractions");
    const ForgeryRegion& r = forgery.region;
    check(r.top >= 0 && r.left >= 0 && r.top + r.height <= height && r.left + r.width <= width,
          "dataset: forgery region outside the image");
}

std::map<std::pair<Split, int>, int> DatasetManifest::counts() const {
    std::map<std::pair<Split, int>, int> out;
    for (const ManifestRecord& r : records) ++out[{r.split, r.domain}];
    return out;
}

std::vector<int> DatasetManifest::domains_in(Split split) const {
    std::set<int> ds;
    for (const ManifestRecord& r : records)
        if (r.split == split) ds.insert(r.domain);
    return {ds.begin(), ds.end()};
}

std::string serialize_manifest(const std::vector<ManifestRecord>& records) {
    std::ostringstream out;
    out << kManifestHeader << '\n';
    for (const ManifestRecord& r : records) {
        out << r.path << '\t' << r.identity_id << '\t' << r.domain << '\t' << r.group_id << '\t'
            << split_name(r.split) << '\t' << r.frame << '\n';
    }
    return out.str();
}

std::vector<ManifestRecord> parse_manifest(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line == kManifestHeader, ErrorKind::Io,
            "manifest: missing or unsupported header");
    std::vector<ManifestRecord> records;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        ManifestRecord r;
        std::string split;
        std::string id, domain, group, frame;
        if (!std::getline(fields, r.path, '\t') || !std::getline(fields, id, '\t') ||
            !std::getline(fields, domain, '\t') || !std::getline(fields, group, '\t') ||
            !std::getline(fields, split, '\t') || !std::getline(fields, frame, '\t')) {
            fail(ErrorKind::Io, "manifest: malformed record on line " + std::to_string(line_no));
        }
        try {
            r.identity_id = std::stoi(id);
            r.domain = std::stoi(domain);
            r.group_id = std::stoi(group);
            r.frame = std::stoi(frame);
        } catch (const std::exception&) {
            fail(ErrorKind::Io, "manifest: non-integer field on line " + std::to_string(line_no));
        }
        r.split = parse_split(split);
        records.push_back(std::move(r));
    }
    return records;
}

void validate_manifest(const std::vector<ManifestRecord>& records) {
    std::map<int, Split> split_of;
    std::map<Split, std::set<int>> domains_of_split;
    std::map<std::tuple<Split, int, int>, std::set<int>> domains_of_unit;
    for (const ManifestRecord& r : records) {
        auto [it, inserted] = split_of.emplace(r.identity_id, r.split);
        if (!inserted && it->second != r.split) {
            fail(ErrorKind::Consistency, "identity " + std::to_string(r.identity_id) + " appears in both " +
                                             std::string(split_name(it->second)) + " and " +
                                             std::string(split_name(r.split)));
        }
        domains_of_split[r.split].insert(r.domain);
        auto& unit = domains_of_unit[{r.split, r.identity_id, r.frame}];
        require(unit.insert(r.domain).second, ErrorKind::Consistency,
                "duplicate image for identity " + std::to_string(r.identity_id) + " frame " +
                    std::to_string(r.frame) + " domain " + std::to_string(r.domain));
    }
    for (const auto& [key, domains] : domains_of_unit) {
        if (domains != domains_of_split[std::get<0>(key)]) {
            fail(ErrorKind::Consistency, "identity " + std::to_string(std::get<1>(key)) + " frame " +
                                             std::to_string(std::get<2>(key)) +
                                             " is not aligned across domains");
        }
    }
}

nlohmann::json to_json(const DatasetConfig& c) {
    const ForgeryParams& f = c.forgery;
    return {{"identities", c.identities},
            {"images_per_identity", c.images_per_identity},
            {"group_size", c.group_size},
            {"m", c.m},
            {"hold_out", c.hold_out},
            {"height", c.height},
            {"width", c.width},
            {"train_fraction", c.train_fraction},
            {"val_fraction", c.val_fraction},
            {"seed", c.seed},
            {"forgery",
             {{"region", {f.region.top, f.region.left, f.region.height, f.region.width}},
              {"seam_strong", f.seam_strong},
              {"seam_weak", f.seam_weak},
              {"seam_cell", f.seam_cell},
              {"blur_radius", f.blur_radius},
              {"stripe_amplitude", f.stripe_amplitude},
              {"stripe_cycles", f.stripe_cycles},
              {"permute_strength", f.permute_strength},
              {"composite_strength", f.composite_strength}}}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.identities = j.value("identities", c.identities);
    c.images_per_identity = j.value("images_per_identity", c.images_per_identity);
    c.group_size = j.value("group_size", c.group_size);
    c.m = j.value("m", c.m);
    c.hold_out = j.value("hold_out", c.hold_out);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.seed = j.value("seed", c.seed);
    if (j.contains("forgery")) {
        const nlohmann::json& fj = j.at("forgery");
        ForgeryParams& f = c.forgery;
        if (fj.contains("region")) {
            const auto r = fj.at("region").get<std::vector<int>>();
            require(r.size() == 4, ErrorKind::Config, "forgery.region must be [top, left, height, width]");
            f.region = {r[0], r[1], r[2], r[3]};
        }
        f.seam_strong = fj.value("seam_strong", f.seam_strong);
        f.seam_weak = fj.value("seam_weak", f.seam_weak);
        f.seam_cell = fj.value("seam_cell", f.seam_cell);
        f.blur_radius = fj.value("blur_radius", f.blur_radius);
        f.stripe_amplitude = fj.value("stripe_amplitude", f.stripe_amplitude);
        f.stripe_cycles = fj.value("stripe_cycles", f.stripe_cycles);
        f.permute_strength = fj.value("permute_strength", f.permute_strength);
        f.composite_strength = fj.value("composite_strength", f.composite_strength);
    }
    return c;
}

namespace {

std::vector<int> split_domains(const DatasetConfig& c, Split split) {
    std::vector<int> ds;
    if (c.hold_out != 0 && split == Split::Test) return {0, c.hold_out};
    for (int d = 0; d <= c.m; ++d)
        if (d == 0 || d != c.hold_out) ds.push_back(d);
    return ds;
}

std::string record_path(Split split, int domain, int identity, int frame) {
    char name[64];
    std::snprintf(name, sizeof name, "id%05d_f%02d.ppm", identity, frame);
    return "images/" + std::string(split_name(split)) + "/d" + std::to_string(domain) + "/" + name;
}

}  // namespace

DatasetManifest build_dataset(const DatasetConfig& config, const fs::path& out_dir) {
    config.validate();
    const int n = config.identities;

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng = make_rng(config.seed, Stream::Split);
    std::shuffle(order.begin(), order.end(), split_rng);
    const int n_train = std::max(2, static_cast<int>(std::lround(n * config.train_fraction)));
    const int n_val = std::max(1, static_cast<int>(std::lround(n * config.val_fraction)));
    require(n_train + n_val < n, ErrorKind::Config, "dataset: too few identities for a test split");
    std::vector<Split> split_of(n);
    for (int i = 0; i < n; ++i) {
        split_of[order[i]] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    }

    const std::vector<Sample> reals =
        generate_real(n, config.images_per_identity, config.seed, config.height, config.width, config.group_size);

    // images[id][frame] -> domain-indexed samples of that unit
    const int frames = config.images_per_identity;
    std::vector<std::vector<Sample>> units(static_cast<std::size_t>(n) * frames);
#pragma omp parallel for schedule(dynamic)
    for (int id = 0; id < n; ++id) {
        const std::vector<int> domains = split_domains(config, split_of[id]);
        for (int f = 0; f < frames; ++f) {
            const Sample& real = reals[static_cast<std::size_t>(id) * frames + f];
            auto& unit = units[static_cast<std::size_t>(id) * frames + f];
            for (int d : domains) {
                Sample s = d == 0 ? real
                                  : apply_forgery(real, d,
                                                  derive_seed(config.seed, Stream::Forgery,
                                                              {static_cast<std::uint64_t>(id),
                                                               static_cast<std::uint64_t>(f)}),
                                                  config.forgery);
                s.split = split_of[id];
                s.image = quantize(s.image);
                unit.push_back(std::move(s));
            }
        }
    }

    DatasetManifest manifest;
    manifest.config = config;
    std::vector<std::pair<ManifestRecord, const Sample*>> entries;
    for (Split split : {Split::Train, Split::Val, Split::Test}) {
        for (int d : split_domains(config, split)) {
            for (int id = 0; id < n; ++id) {
                if (split_of[id] != split) continue;
                for (int f = 0; f < frames; ++f) {
                    for (const Sample& s : units[static_cast<std::size_t>(id) * frames + f]) {
                        if (s.domain != d) continue;
                        ManifestRecord r{record_path(split, d, id, f), id, d, s.group_id, split, f};
                        entries.emplace_back(std::move(r), &s);
                    }
                }
            }
        }
    }
    for (const auto& e : entries) manifest.records.push_back(e.first);
    validate_manifest(manifest.records);

    const std::string manifest_text = serialize_manifest(manifest.records);
    Sha256 hasher;
    hasher.update(manifest_text);
    std::vector<std::string> encoded(entries.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < entries.size(); ++i) encoded[i] = encode_ppm(entries[i].second->image);
    for (const std::string& bytes : encoded) hasher.update(bytes);
    manifest.checksum = hasher.hex_digest();

    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const fs::path path = out_dir / entries[i].first.path;
        fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::Io, "cannot write image " + path.string());
        out.write(encoded[i].data(), static_cast<std::streamsize>(encoded[i].size()));
    }
    {
        std::ofstream out(out_dir / "manifest.tsv", std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::Io, "cannot write manifest in " + out_dir.string());
        out << manifest_text;
    }

    nlohmann::json info;
    info["schema_version"] = 1;
    info["config"] = to_json(config);
    info["checksum"] = manifest.checksum;
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [key, count] : manifest.counts()) {
        counts[std::string(split_name(key.first))][std::to_string(key.second)] = count;
    }
    info["counts"] = counts;
    nlohmann::json registry = nlohmann::json::object();
    for (PerturbKind k : kAllPerturbKinds) {
        std::vector<double> schedule;
        for (int s = 1; s <= 5; ++s) schedule.push_back(perturb_parameter(k, s));
        registry[std::string(perturb_name(k))] = schedule;
    }
    info["perturbations"] = registry;
    std::ofstream out(out_dir / "dataset.json");
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write dataset.json in " + out_dir.string());
    out << info.dump(2) << '\n';
    return manifest;
}

Dataset Dataset::load(const fs::path& dir) {
    const fs::path info_path = dir / "dataset.json";
    const fs::path manifest_path = dir / "manifest.tsv";
    if (!fs::exists(info_path) || !fs::exists(manifest_path)) {
        throw Error(ErrorKind::Io, "dataset-not-found", "no dataset at " + dir.string());
    }
    nlohmann::json info;
    try {
        std::ifstream in(info_path);
        info = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Io, "dataset.json unreadable: " + std::string(e.what()));
    }
    std::ifstream in(manifest_path, std::ios::binary);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<ManifestRecord> records = parse_manifest(text);
    validate_manifest(records);

    Dataset ds;
    ds.config_ = dataset_config_from_json(info.at("config"));
    ds.samples_.resize(records.size());
    std::vector<std::string> bytes(records.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < records.size(); ++i) {
        const ManifestRecord& r = records[i];
        Sample& s = ds.samples_[i];
        s.image = read_ppm(dir / r.path);
        s.identity_id = r.identity_id;
        s.domain = r.domain;
        s.group_id = r.group_id;
        s.frame = r.frame;
        s.split = r.split;
        bytes[i] = encode_ppm(s.image);
    }
    Sha256 hasher;
    hasher.update(text);
    for (const std::string& b : bytes) hasher.update(b);
    ds.checksum_ = hasher.hex_digest();
    require(ds.checksum_ == info.at("checksum").get<std::string>(), ErrorKind::Consistency,
            "dataset checksum mismatch in " + dir.string());
    ds.index();
    return ds;
}

Dataset Dataset::from_samples(DatasetConfig config, std::vector<Sample> samples) {
    Dataset ds;
    ds.config_ = std::move(config);
    ds.samples_ = std::move(samples);
    ds.index();
    return ds;
}

void Dataset::index() {
    by_key_.clear();
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const Sample& s = samples_[i];
        by_key_[{s.identity_id, s.frame, s.domain}] = i;
    }
}

std::vector<int> Dataset::identities(Split split) const {
    std::set<int> ids;
    for (const Sample& s : samples_)
        if (s.split == split) ids.insert(s.identity_id);
    return {ids.begin(), ids.end()};
}

std::vector<int> Dataset::domains(Split split) const {
    std::set<int> ds;
    for (const Sample& s : samples_)
        if (s.split == split) ds.insert(s.domain);
    return {ds.begin(), ds.end()};
}

std::vector<int> Dataset::training_fake_domains() const {
    std::vector<int> ds = domains(Split::Train);
    ds.erase(std::remove(ds.begin(), ds.end(), 0), ds.end());
    return ds;
}

std::vector<const Sample*> Dataset::select(Split split, const std::vector<int>& domains) const {
    std::vector<const Sample*> out;
    for (const Sample& s : samples_) {
        if (s.split == split && std::find(domains.begin(), domains.end(), s.domain) != domains.end()) {
            out.push_back(&s);
        }
    }
    return out;
}

const Sample* Dataset::find(int identity_id, int frame, int domain) const {
    auto it = by_key_.find({identity_id, frame, domain});
    return it == by_key_.end() ? nullptr : &samples_[it->second];
}

IdentityBatch assemble_batch(const Dataset& dataset, const std::vector<int>& identity_ids,
                             const std::vector<int>& domains, Rng& rng) {
    IdentityBatch batch(domains.size());
    const int frames = dataset.frames_per_identity();
    for (int id : identity_ids) {
        const int frame = uniform_int(rng, 0, frames - 1);
        for (std::size_t d = 0; d < domains.size(); ++d) {
            const Sample* s = dataset.find(id, frame, domains[d]);
            require(s != nullptr, ErrorKind::Consistency,
                    "identity " + std::to_string(id) + " frame " + std::to_string(frame) + " has no domain " +
                        std::to_string(domains[d]) + " image");
            batch[d].push_back(s);
        }
    }
    return batch;
}

IdentityBatch sample_identity_batch(const Dataset& dataset, Split split, int batch_identities,
                                    const std::vector<int>& domains, Rng& rng) {
    require(batch_identities >= 2, ErrorKind::Argument, "sample_identity_batch: B must be >= 2");
    std::vector<int> ids = dataset.identities(split);
    require(batch_identities <= static_cast<int>(ids.size()), ErrorKind::Argument,
            "sample_identity_batch: B=" + std::to_string(batch_identities) + " exceeds " +
                std::to_string(ids.size()) + " available identities");
    // Partial Fisher-Yates: the first B entries become a uniform subset.
    for (int i = 0; i < batch_identities; ++i) {
        const int j = uniform_int(rng, i, static_cast<int>(ids.size()) - 1);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(batch_identities);
    return assemble_batch(dataset, ids, domains, rng);
}

std::vector<std::vector<int>> epoch_identity_batches(const std::vector<int>& identities, int batch_identities,
                                                     Rng& rng) {
    require(batch_identities >= 2, ErrorKind::Argument, "batch_identities must be >= 2");
    require(batch_identities <= static_cast<int>(identities.size()), ErrorKind::Argument,
            "batch_identities exceeds the number of training identities");
    std::vector<int> ids = identities;
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<std::vector<int>> batches;
    for (std::size_t start = 0; start + batch_identities <= ids.size(); start += batch_identities) {
        batches.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start),
                             ids.begin() + static_cast<std::ptrdiff_t>(start + batch_identities));
    }
    return batches;
}

}  // namespace lsda
