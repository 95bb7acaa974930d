#include "jscc/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace jscc {

namespace {

constexpr std::array<char, 8> kMagic{'J', 'S', 'C', 'C', 'C', 'K', 'P', 'T'};

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw CheckpointError("cannot write checkpoint " + path.string());
    }
    template <class T>
    void pod(const T& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void floats(std::span<const float> v) {
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
    void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
    void finish(const std::filesystem::path& path) {
        out_.flush();
        if (!out_) throw CheckpointError("write failed for checkpoint " + path.string());
    }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw CheckpointError("cannot open checkpoint " + path.string());
    }
    template <class T>
    T pod() {
        T v{};
        read(reinterpret_cast<char*>(&v), sizeof(T));
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        if (n > (1u << 26)) throw CheckpointError("corrupt string length in " + path_.string());
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }
    void read(char* p, std::size_t n) {
        in_.read(p, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw CheckpointError("truncated checkpoint " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ifstream in_;
};

CheckpointHeader read_header(Reader& r, const std::filesystem::path& path) {
    std::array<char, 8> magic{};
    r.read(magic.data(), magic.size());
    if (magic != kMagic) throw CheckpointError(path.string() + " is not a checkpoint file");
    CheckpointHeader h;
    h.version = r.pod<std::uint32_t>();
    if (h.version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(h.version) + " in " + path.string());
    }
    h.hash = r.pod<std::uint64_t>();
    try {
        h.config = parse_config(r.str());
    } catch (const ConfigError& e) {
        throw CheckpointError("embedded config in " + path.string() + " is invalid: " + e.what());
    }
    h.dimensions_json = r.str();
    h.info.epoch = r.pod<std::int32_t>();
    h.info.metric = r.pod<double>();
    h.info.tag = r.str();
    if (architecture_hash(h.config) != h.hash)
        throw CheckpointError("checkpoint " + path.string() + " has an inconsistent architecture hash");
    return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const codec::JsccModel& model, const CheckpointInfo& info) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write to a sibling temp file first so a crash never leaves a torn checkpoint.
    const auto tmp = std::filesystem::path(path).concat(".tmp");
    {
        Writer w(tmp);
        const auto& cfg = model.config();
        w.raw(kMagic.data(), kMagic.size());
        w.pod(kCheckpointVersion);
        w.pod(architecture_hash(cfg));
        w.str(to_json(cfg, -1));
        w.str(dimensions_to_json(cfg.dims, -1));
        w.pod(static_cast<std::int32_t>(info.epoch));
        w.pod(info.metric);
        w.str(info.tag);
        const auto& params = model.parameters();
        w.pod(static_cast<std::uint32_t>(params.size()));
        for (const auto& p : params) {
            w.str(p.name);
            const auto& shape = p.var.shape();
            w.pod(static_cast<std::uint32_t>(shape.size()));
            for (int d : shape) w.pod(static_cast<std::int32_t>(d));
            w.floats(p.var.value());
        }
        w.finish(tmp);
    }
    std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    Reader r(path);
    return read_header(r, path);
}

CheckpointHeader load_parameters(const std::filesystem::path& path, codec::JsccModel& model) {
    Reader r(path);
    CheckpointHeader h = read_header(r, path);
    const std::uint64_t expected = architecture_hash(model.config());
    if (h.hash != expected) {
        throw CheckpointError("checkpoint " + path.string() + " was saved for config hash " + hash_hex(h.hash) +
                              " but the model has hash " + hash_hex(expected));
    }
    const auto& params = model.parameters();
    const auto count = r.pod<std::uint32_t>();
    if (count != params.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                              std::to_string(params.size()));
    }
    // Stage everything before touching the model so a bad file leaves it intact.
    std::vector<std::vector<float>> staged(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        if (name != params[i].name)
            throw CheckpointError("parameter " + std::to_string(i) + " is '" + name + "', expected '" + params[i].name + "'");
        const auto rank = r.pod<std::uint32_t>();
        ag::Shape shape(rank);
        for (auto& d : shape) d = r.pod<std::int32_t>();
        if (shape != params[i].var.shape()) {
            throw CheckpointError("parameter '" + name + "' has shape " + ag::to_string(shape) + ", expected " +
                                  ag::to_string(params[i].var.shape()));
        }
        staged[i].resize(ag::numel(shape));
        r.read(reinterpret_cast<char*>(staged[i].data()), staged[i].size() * sizeof(float));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        ag::Var v = params[i].var;
        std::copy(staged[i].begin(), staged[i].end(), v.mutable_value().begin());
    }
    return h;
}

std::unique_ptr<codec::JsccModel> load_model(const std::filesystem::path& path) {
    const CheckpointHeader h = read_checkpoint_header(path);
    auto model = std::make_unique<codec::JsccModel>(h.config, 0);
    load_parameters(path, *model);
    return model;
}

std::unique_ptr<codec::JsccModel> load_model(const std::filesystem::path& path, const ExperimentConfig& expected) {
    const CheckpointHeader h = read_checkpoint_header(path);
    if (h.hash != architecture_hash(expected)) {
        throw CheckpointError("checkpoint " + path.string() + " has config hash " + hash_hex(h.hash) +
                              ", expected " + hash_hex(architecture_hash(expected)));
    }
    return load_model(path);
}

}  // namespace jscc
