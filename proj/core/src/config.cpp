#include "jscc/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace jscc {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
    throw ConfigError(field + ": " + what);
}

void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) fail(section, "expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : obj.items()) {
        if (!ok.count(key)) fail(section + "." + key, "unknown key");
    }
}

template <typename T>
void read(const json& obj, const char* key, const std::string& section, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception& e) {
        fail(section + "." + key, std::string("wrong type (") + e.what() + ")");
    }
}

Rational read_rational(const json& v, const std::string& field) {
    try {
        if (v.is_string()) return Rational::parse(v.get<std::string>());
        if (v.is_number_integer()) return Rational{v.get<std::int64_t>(), 1}.reduced();
        if (v.is_number()) {
            std::ostringstream os;
            os.precision(17);
            os << v.get<double>();
            return Rational::parse(os.str());
        }
    } catch (const ConfigError& e) {
        fail(field, e.what());
    }
    fail(field, "expected a ratio such as \"1/16\"");
}

bool divides(std::int64_t num, std::int64_t den) { return den != 0 && num % den == 0; }

}  // namespace

// ---------------------------------------------------------------------------
// Rational

Rational Rational::reduced() const {
    if (den == 0) throw ConfigError("ratio has zero denominator");
    std::int64_t g = std::gcd(num, den);
    if (g == 0) g = 1;
    Rational r{num / g, den / g};
    if (r.den < 0) {
        r.num = -r.num;
        r.den = -r.den;
    }
    return r;
}

Rational Rational::parse(const std::string& text) {
    const auto slash = text.find('/');
    try {
        std::size_t used = 0;
        if (slash != std::string::npos) {
            const std::string a = text.substr(0, slash);
            const std::string b = text.substr(slash + 1);
            const std::int64_t n = std::stoll(a, &used);
            if (used != a.size()) throw ConfigError("bad ratio '" + text + "'");
            const std::int64_t d = std::stoll(b, &used);
            if (used != b.size()) throw ConfigError("bad ratio '" + text + "'");
            return Rational{n, d}.reduced();
        }
        const auto dot = text.find('.');
        if (dot == std::string::npos) {
            const std::int64_t n = std::stoll(text, &used);
            if (used != text.size()) throw ConfigError("bad ratio '" + text + "'");
            return Rational{n, 1};
        }
        // Exact decimal: digits after the point set the denominator.
        std::string digits = text.substr(0, dot) + text.substr(dot + 1);
        std::int64_t den = 1;
        for (std::size_t i = dot + 1; i < text.size(); ++i) den *= 10;
        const std::int64_t n = std::stoll(digits, &used);
        if (used != digits.size()) throw ConfigError("bad ratio '" + text + "'");
        return Rational{n, den}.reduced();
    } catch (const std::logic_error&) {
        throw ConfigError("bad ratio '" + text + "'");
    }
}

std::string Rational::str() const {
    if (den == 1) return std::to_string(num);
    return std::to_string(num) + "/" + std::to_string(den);
}

Rational operator*(Rational a, std::int64_t k) { return Rational{a.num * k, a.den}.reduced(); }

// ---------------------------------------------------------------------------

std::string to_string(GridMode mode) {
    return mode == GridMode::varying_features ? "varying_features" : "varying_patches";
}

std::string to_string(Scheme scheme) {
    return scheme == Scheme::adaptive_bandwidth ? "adaptive_bandwidth" : "successive_refinement";
}

GridMode parse_grid_mode(const std::string& s) {
    if (s == "varying_features") return GridMode::varying_features;
    if (s == "varying_patches") return GridMode::varying_patches;
    fail("grid.mode", "expected varying_features or varying_patches, got '" + s + "'");
}

Scheme parse_scheme(const std::string& s) {
    if (s == "adaptive_bandwidth") return Scheme::adaptive_bandwidth;
    if (s == "successive_refinement") return Scheme::successive_refinement;
    fail("model.scheme", "expected adaptive_bandwidth or successive_refinement, got '" + s + "'");
}

Rational BandwidthGrid::rho(int l) const {
    if (l < 1 || l > levels) throw std::out_of_range("bandwidth index " + std::to_string(l) + " outside 1.." + std::to_string(levels));
    return rho_1 * l;
}

std::optional<int> BandwidthGrid::index_of(const Rational& r) const {
    for (int l = 1; l <= levels; ++l)
        if (rho(l) == r.reduced()) return l;
    return std::nullopt;
}

std::optional<int> BandwidthGrid::index_of(double r, double tol) const {
    for (int l = 1; l <= levels; ++l)
        if (std::abs(rho(l).value() - r) <= tol) return l;
    return std::nullopt;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix64(seed ^ splitmix64(stream)); }

SeedTable SeedTable::derive(std::uint64_t base) {
    SeedTable s;
    s.init = splitmix64(base ^ 0x696e6974ull);
    s.channel = splitmix64(base ^ 0x6368616eull);
    s.sampling = splitmix64(base ^ 0x73616d70ull);
    s.shuffle = splitmix64(base ^ 0x73687566ull);
    return s;
}

const BandwidthLevel& DimensionTable::level(int l) const {
    if (l < 1 || l > static_cast<int>(levels.size()))
        throw std::out_of_range("bandwidth index " + std::to_string(l) + " outside 1.." + std::to_string(levels.size()));
    return levels[static_cast<std::size_t>(l - 1)];
}

// ---------------------------------------------------------------------------
// Validation and derived dimensions

DimensionTable derive_dimensions(const BandwidthGrid& grid, const ModelConfig& model) {
    DimensionTable t;
    t.source_dim = static_cast<std::int64_t>(model.channels) * model.height * model.width;

    int h = model.height / model.patch_size;
    int w = model.width / model.patch_size;
    for (int i = 0; i < model.stages(); ++i) {
        if (i > 0) {
            if (h % 2 || w % 2)
                fail("model.blocks", "stage " + std::to_string(i + 1) + " needs even token grid, got " +
                                         std::to_string(h) + "x" + std::to_string(w));
            h /= 2;
            w /= 2;
        }
        t.stage_rows.push_back(h);
        t.stage_cols.push_back(w);
    }
    t.token_rows = h;
    t.token_cols = w;
    t.tokens = h * w;

    const Rational rho_max = grid.rho(grid.levels);
    const std::int64_t twice = 2 * rho_max.num * t.source_dim;  // 2 rho_L N = twice / den
    if (!divides(rho_max.num * t.source_dim, rho_max.den))
        fail("grid.rho_1", "rho_L * N = " + rho_max.str() + " * " + std::to_string(t.source_dim) + " is not an integer");
    if (!divides(twice, rho_max.den * t.tokens))
        fail("grid.rho_1", "2 rho_L N is not divisible by N_T = " + std::to_string(t.tokens));
    t.features = static_cast<int>(twice / (rho_max.den * t.tokens));
    if (t.features <= 0 || t.features % 2)
        fail("grid.rho_1", "N_F = " + std::to_string(t.features) + " must be a positive even integer");

    for (int l = 1; l <= grid.levels; ++l) {
        BandwidthLevel lv;
        lv.l = l;
        lv.rho = grid.rho(l);
        if (!divides(lv.rho.num * t.source_dim, lv.rho.den))
            fail("grid.rho_1", "rho_" + std::to_string(l) + " * N is not an integer");
        lv.complex_symbols = lv.rho.num * t.source_dim / lv.rho.den;
        const std::int64_t reals = 2 * lv.complex_symbols;
        if (grid.mode == GridMode::varying_features) {
            if (reals % t.tokens || (reals / t.tokens) % 2)
                fail("grid.rho_1", "n_f for l=" + std::to_string(l) + " must be a positive even integer (2 rho_l N / N_T = " +
                                       std::to_string(reals) + "/" + std::to_string(t.tokens) + ")");
            lv.features = static_cast<int>(reals / t.tokens);
            lv.tokens = t.tokens;
        } else {
            if (reals % t.features)
                fail("grid.rho_1", "n_t for l=" + std::to_string(l) + " must be a positive integer (2 rho_l N / N_F = " +
                                       std::to_string(reals) + "/" + std::to_string(t.features) + ")");
            lv.tokens = static_cast<int>(reals / t.features);
            lv.features = t.features;
        }
        t.levels.push_back(lv);
    }
    return t;
}

void validate(const BandwidthGrid& grid, const ModelConfig& model, const TrainConfig& train) {
    if (grid.levels < 1) fail("grid.levels", "must be at least 1");
    if (grid.rho_1.num <= 0 || grid.rho_1.den <= 0) fail("grid.rho_1", "must be positive");

    if (model.channels <= 0 || model.height <= 0 || model.width <= 0) fail("model.image", "dimensions must be positive");
    if (model.patch_size != 2)
        fail("model.patch_size", "must be 2 (the decoder upsamples by 2 in each of its stages)");
    if (model.height % model.patch_size || model.width % model.patch_size)
        fail("model.patch_size", "image height and width must be divisible by the patch size");
    if (model.embed_dim <= 0) fail("model.embed_dim", "must be positive");
    if (model.window <= 0) fail("model.window", "must be positive");
    if (model.blocks.empty()) fail("model.blocks", "at least one stage is required");
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        if (model.blocks[i] <= 0 || model.blocks[i] % 2)
            fail("model.blocks", "blocks per stage must be even (stage " + std::to_string(i + 1) + " has " +
                                     std::to_string(model.blocks[i]) + ")");
    }
    if (model.heads.size() != model.blocks.size()) fail("model.heads", "need one head count per stage");
    for (int h : model.heads) {
        if (h <= 0 || model.embed_dim % h)
            fail("model.heads", "embed_dim " + std::to_string(model.embed_dim) + " must be divisible by head count " +
                                    std::to_string(h));
    }
    if (model.side_dim <= 0) fail("model.side_dim", "must be positive");
    if (model.mlp_ratio <= 0) fail("model.mlp_ratio", "must be positive");
    if (model.head_kernel <= 0 || model.head_kernel % 2 == 0) fail("model.head_kernel", "must be a positive odd number");

    if (!(train.lr > 0)) fail("train.lr", "must be positive");
    if (!(train.lr_decay > 0 && train.lr_decay <= 1)) fail("train.lr_decay", "must lie in (0, 1]");
    if (train.lr_patience <= 0) fail("train.lr_patience", "must be positive");
    if (train.max_epochs <= 0) fail("train.max_epochs", "must be positive");
    if (train.patience_adaptive <= 0) fail("train.patience_adaptive", "must be positive");
    if (train.patience_fixed <= 0) fail("train.patience_fixed", "must be positive");
    if (train.batch_size <= 0) fail("train.batch_size", "must be positive");
    if (train.snr_min > train.snr_max) fail("train.snr_range", "min exceeds max");
    if (train.checkpoint_every < 0) fail("train.checkpoint_every", "must be non-negative");
    if (!(train.dwa.alpha > 0)) fail("train.dwa.alpha", "must be positive");
    if (!(train.dwa.gamma > 0)) fail("train.dwa.gamma", "must be positive");
    if (!(train.dwa.beta >= 0)) fail("train.dwa.beta", "must be non-negative");
    if (!(train.adam.beta1 >= 0 && train.adam.beta1 < 1)) fail("train.adam.beta1", "must lie in [0, 1)");
    if (!(train.adam.beta2 >= 0 && train.adam.beta2 < 1)) fail("train.adam.beta2", "must lie in [0, 1)");
    if (!(train.adam.eps > 0)) fail("train.adam.eps", "must be positive");
}

// ---------------------------------------------------------------------------
// (De)serialization

namespace {

json grid_json(const BandwidthGrid& g) {
    return json{{"levels", g.levels}, {"rho_1", g.rho_1.str()}, {"mode", to_string(g.mode)}};
}

json model_json(const ModelConfig& m) {
    return json{{"image", {m.channels, m.height, m.width}},
                {"patch_size", m.patch_size},
                {"embed_dim", m.embed_dim},
                {"window", m.window},
                {"blocks", m.blocks},
                {"heads", m.heads},
                {"side_dim", m.side_dim},
                {"mlp_ratio", m.mlp_ratio},
                {"head_kernel", m.head_kernel},
                {"scheme", to_string(m.scheme)}};
}

json train_json(const TrainConfig& t) {
    json j{{"lr", t.lr},
           {"lr_decay", t.lr_decay},
           {"lr_patience", t.lr_patience},
           {"max_epochs", t.max_epochs},
           {"patience_adaptive", t.patience_adaptive},
           {"patience_fixed", t.patience_fixed},
           {"batch_size", t.batch_size},
           {"snr_range", {t.snr_min, t.snr_max}},
           {"checkpoint_every", t.checkpoint_every},
           {"dwa", {{"enabled", t.dwa.enabled}, {"alpha", t.dwa.alpha}, {"beta", t.dwa.beta}, {"gamma", t.dwa.gamma}}},
           {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
           {"seeds",
            {{"init", t.seeds.init}, {"channel", t.seeds.channel}, {"sampling", t.seeds.sampling}, {"shuffle", t.seeds.shuffle}}}};
    j["snr_val"] = t.snr_val_override ? json(*t.snr_val_override) : json(nullptr);
    return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    check_keys(root, "config", {"grid", "model", "train"});

    ExperimentConfig cfg;
    if (root.contains("grid")) {
        const json& g = root["grid"];
        check_keys(g, "grid", {"levels", "rho_1", "mode"});
        read(g, "levels", "grid", cfg.grid.levels);
        if (g.contains("rho_1")) cfg.grid.rho_1 = read_rational(g["rho_1"], "grid.rho_1");
        if (g.contains("mode")) cfg.grid.mode = parse_grid_mode(g["mode"].get<std::string>());
    }
    if (root.contains("model")) {
        const json& m = root["model"];
        check_keys(m, "model", {"image", "patch_size", "embed_dim", "window", "blocks", "heads", "side_dim", "mlp_ratio",
                                "head_kernel", "scheme"});
        if (m.contains("image")) {
            std::vector<int> img;
            read(m, "image", "model", img);
            if (img.size() != 3) fail("model.image", "expected [C, H, W]");
            cfg.model.channels = img[0];
            cfg.model.height = img[1];
            cfg.model.width = img[2];
        }
        read(m, "patch_size", "model", cfg.model.patch_size);
        read(m, "embed_dim", "model", cfg.model.embed_dim);
        read(m, "window", "model", cfg.model.window);
        read(m, "blocks", "model", cfg.model.blocks);
        read(m, "heads", "model", cfg.model.heads);
        read(m, "side_dim", "model", cfg.model.side_dim);
        read(m, "mlp_ratio", "model", cfg.model.mlp_ratio);
        read(m, "head_kernel", "model", cfg.model.head_kernel);
        if (m.contains("scheme")) cfg.model.scheme = parse_scheme(m["scheme"].get<std::string>());
    }
    if (root.contains("train")) {
        const json& t = root["train"];
        check_keys(t, "train", {"lr", "lr_decay", "lr_patience", "max_epochs", "patience_adaptive", "patience_fixed",
                                "batch_size", "snr_range", "snr_val", "checkpoint_every", "dwa", "adam", "seeds"});
        auto& tc = cfg.train;
        read(t, "lr", "train", tc.lr);
        read(t, "lr_decay", "train", tc.lr_decay);
        read(t, "lr_patience", "train", tc.lr_patience);
        read(t, "max_epochs", "train", tc.max_epochs);
        read(t, "patience_adaptive", "train", tc.patience_adaptive);
        read(t, "patience_fixed", "train", tc.patience_fixed);
        read(t, "batch_size", "train", tc.batch_size);
        read(t, "checkpoint_every", "train", tc.checkpoint_every);
        if (t.contains("snr_range")) {
            std::vector<double> r;
            read(t, "snr_range", "train", r);
            if (r.size() != 2) fail("train.snr_range", "expected [min, max]");
            tc.snr_min = r[0];
            tc.snr_max = r[1];
        }
        if (t.contains("snr_val") && !t["snr_val"].is_null()) {
            double v = 0;
            read(t, "snr_val", "train", v);
            tc.snr_val_override = v;
        }
        if (t.contains("dwa")) {
            const json& d = t["dwa"];
            check_keys(d, "train.dwa", {"enabled", "alpha", "beta", "gamma"});
            read(d, "enabled", "train.dwa", tc.dwa.enabled);
            read(d, "alpha", "train.dwa", tc.dwa.alpha);
            read(d, "beta", "train.dwa", tc.dwa.beta);
            read(d, "gamma", "train.dwa", tc.dwa.gamma);
        }
        if (t.contains("adam")) {
            const json& a = t["adam"];
            check_keys(a, "train.adam", {"beta1", "beta2", "eps"});
            read(a, "beta1", "train.adam", tc.adam.beta1);
            read(a, "beta2", "train.adam", tc.adam.beta2);
            read(a, "eps", "train.adam", tc.adam.eps);
        }
        if (t.contains("seeds")) {
            const json& s = t["seeds"];
            check_keys(s, "train.seeds", {"init", "channel", "sampling", "shuffle"});
            read(s, "init", "train.seeds", tc.seeds.init);
            read(s, "channel", "train.seeds", tc.seeds.channel);
            read(s, "sampling", "train.seeds", tc.seeds.sampling);
            read(s, "shuffle", "train.seeds", tc.seeds.shuffle);
        }
    }

    validate(cfg.grid, cfg.model, cfg.train);
    cfg.dims = derive_dimensions(cfg.grid, cfg.model);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_json(const ExperimentConfig& cfg, int indent) {
    json root{{"grid", grid_json(cfg.grid)}, {"model", model_json(cfg.model)}, {"train", train_json(cfg.train)}};
    return root.dump(indent);
}

std::string dimensions_to_json(const DimensionTable& d, int indent) {
    json levels = json::array();
    for (const auto& lv : d.levels) {
        levels.push_back({{"l", lv.l},
                          {"rho", lv.rho.str()},
                          {"complex_symbols", lv.complex_symbols},
                          {"features", lv.features},
                          {"tokens", lv.tokens}});
    }
    json j{{"N", d.source_dim},
           {"token_grid", {d.token_rows, d.token_cols}},
           {"N_T", d.tokens},
           {"N_F", d.features},
           {"stage_rows", d.stage_rows},
           {"stage_cols", d.stage_cols},
           {"levels", levels}};
    return j.dump(indent);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file " + path.string());
    out << to_json(cfg) << '\n';
}

std::uint64_t architecture_hash(const ExperimentConfig& cfg) {
    const std::string text = json{{"grid", grid_json(cfg.grid)}, {"model", model_json(cfg.model)}}.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

ExperimentConfig reference_config(int levels) {
    ExperimentConfig cfg;
    cfg.grid.levels = levels;
    cfg.grid.rho_1 = Rational{1, 4 * levels};  // rho_L = 1/4
    cfg.grid.mode = GridMode::varying_features;
    validate(cfg.grid, cfg.model, cfg.train);
    cfg.dims = derive_dimensions(cfg.grid, cfg.model);
    return cfg;
}

ExperimentConfig toy_config() {
    ExperimentConfig cfg;
    cfg.grid.levels = 4;
    cfg.grid.rho_1 = Rational{1, 16};
    cfg.model.embed_dim = 32;
    cfg.model.blocks = {2, 2};
    cfg.model.heads = {4, 4};
    cfg.train.lr = 1e-3;
    cfg.train.max_epochs = 30;
    cfg.train.batch_size = 32;
    validate(cfg.grid, cfg.model, cfg.train);
    cfg.dims = derive_dimensions(cfg.grid, cfg.model);
    return cfg;
}

}  // namespace jscc
