#include "lsda/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "lsda/error.hpp"
#include "lsda/hashing.hpp"

namespace lsda {

namespace {

constexpr std::string_view kMagic = "LSDACKPT";
constexpr std::size_t kDigestSize = 64;

class Writer {
public:
    template <typename T>
    void pod(T v) {
        buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(std::string_view s) {
        pod<std::uint64_t>(s.size());
        buf_.append(s);
    }
    void tensor(const Tensor& t) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) pod<std::int32_t>(d);
        buf_.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(double));
    }
    std::string& bytes() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    Tensor tensor() {
        const auto rank = pod<std::uint32_t>();
        if (rank > 8) fail(ErrorKind::CorruptCheckpoint, "checkpoint: implausible tensor rank");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = pod<std::int32_t>();
            if (d < 0) fail(ErrorKind::CorruptCheckpoint, "checkpoint: negative dimension");
            shape.push_back(d);
        }
        Tensor t(shape);
        need(t.numel() * sizeof(double));
        std::memcpy(t.data(), bytes_.data() + pos_, t.numel() * sizeof(double));
        pos_ += t.numel() * sizeof(double);
        return t;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail(ErrorKind::CorruptCheckpoint, "checkpoint: truncated");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string Checkpoint::serialize() const {
    Writer w;
    w.bytes().append(kMagic);
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.str(kind);
    w.str(canonical_dump(config));
    w.str(config_hash.empty() ? lsda::config_hash(config) : config_hash);
    w.str(canonical_dump(meta));
    w.pod<std::uint64_t>(step);
    w.pod<std::uint64_t>(tensors.size());
    for (const auto& [name, t] : tensors) {
        w.str(name);
        w.tensor(t);
    }
    w.pod<std::uint64_t>(optimizers.size());
    for (const OptimizerState& o : optimizers) {
        w.pod<std::uint64_t>(o.t);
        w.pod<std::uint64_t>(o.moments.size());
        for (const auto& [name, mv] : o.moments) {
            w.str(name);
            w.tensor(mv.first);
            w.tensor(mv.second);
        }
    }
    const std::string digest = sha256_hex(w.bytes());
    w.bytes().append(digest);
    return std::move(w.bytes());
}

Checkpoint Checkpoint::parse(std::string_view bytes) {
    if (bytes.size() < kMagic.size() + kDigestSize || bytes.substr(0, kMagic.size()) != kMagic) {
        fail(ErrorKind::CorruptCheckpoint, "checkpoint: bad magic");
    }
    const std::string_view body = bytes.substr(0, bytes.size() - kDigestSize);
    if (sha256_hex(body) != bytes.substr(bytes.size() - kDigestSize)) {
        fail(ErrorKind::CorruptCheckpoint, "checkpoint: digest mismatch");
    }
    Reader r(body.substr(kMagic.size()));
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        fail(ErrorKind::CorruptCheckpoint, "checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint c;
    c.kind = r.str();
    try {
        c.config = Json::parse(r.str());
        c.config_hash = r.str();
        c.meta = Json::parse(r.str());
    } catch (const Json::exception& e) {
        fail(ErrorKind::CorruptCheckpoint, std::string("checkpoint: bad embedded JSON: ") + e.what());
    }
    if (lsda::config_hash(c.config) != c.config_hash) {
        fail(ErrorKind::CorruptCheckpoint, "checkpoint: config hash does not match the embedded config");
    }
    c.step = r.pod<std::uint64_t>();
    const auto n = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        c.tensors.emplace(std::move(name), r.tensor());
    }
    const auto n_opt = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_opt; ++i) {
        OptimizerState o;
        o.t = r.pod<std::uint64_t>();
        const auto k = r.pod<std::uint64_t>();
        for (std::uint64_t j = 0; j < k; ++j) {
            std::string name = r.str();
            Tensor m = r.tensor();
            Tensor v = r.tensor();
            o.moments.emplace(std::move(name), std::make_pair(std::move(m), std::move(v)));
        }
        c.optimizers.push_back(std::move(o));
    }
    if (!r.done()) fail(ErrorKind::CorruptCheckpoint, "checkpoint: trailing bytes");
    return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    const std::string bytes = serialize();
    // Write-then-rename so an interrupted save never leaves a half file behind.
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "checkpoint-not-found", "checkpoint not found: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) fail(ErrorKind::CorruptCheckpoint, "checkpoint: missing tensor '" + name + "'");
    return it->second;
}

}  // namespace lsda
