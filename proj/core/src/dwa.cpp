#include "jscc/dwa.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace jscc {

using json = nlohmann::json;

double dwa_weight(double delta, double alpha, double beta, double gamma) {
    return std::clamp(std::exp2(alpha * (delta - beta)) - 1.0, 0.0, gamma);
}

double dwa_weight(double delta, const DwaConfig& cfg) { return dwa_weight(delta, cfg.alpha, cfg.beta, cfg.gamma); }

DwaState DwaState::initial(int levels) {
    DwaState s;
    s.weights.assign(static_cast<std::size_t>(levels), 1.0);
    return s;
}

DwaState update_weights(const DwaState& state, std::span<const double> psnrs, std::span<const double> bounds,
                        const DwaConfig& cfg) {
    if (psnrs.size() != state.weights.size() || bounds.size() != state.weights.size())
        throw std::invalid_argument("update_weights: need one PSNR and one bound per level");
    DwaState next;
    next.epoch = state.epoch + 1;
    next.psnr.assign(psnrs.begin(), psnrs.end());
    next.gaps.resize(psnrs.size());
    next.weights.resize(psnrs.size());
    for (std::size_t i = 0; i < psnrs.size(); ++i) {
        next.gaps[i] = bounds[i] - psnrs[i];
        next.weights[i] = cfg.enabled ? dwa_weight(next.gaps[i], cfg) : 1.0;
    }
    return next;
}

Condition sample_condition(const TrainConfig& train, const BandwidthGrid& grid, nn::Rng& rng) {
    std::uniform_int_distribution<int> level(1, grid.levels);
    std::uniform_real_distribution<double> snr(train.snr_min, train.snr_max);
    Condition c;
    c.l = level(rng);
    c.snr_db = train.snr_min == train.snr_max ? train.snr_min : snr(rng);
    return c;
}

std::string to_string(Provenance p) { return p == Provenance::trained ? "trained" : "external"; }

std::string bound_hash(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.model.scheme = Scheme::adaptive_bandwidth;
    return hash_hex(architecture_hash(c));
}

namespace {

bool same_snr(double a, double b) { return std::abs(a - b) <= 1e-9; }

}  // namespace

void UpperBoundRegistry::set(const RegistryEntry& entry) {
    const Rational rho = entry.rho.reduced();
    for (auto& e : entries_) {
        if (e.rho == rho && same_snr(e.snr_val, entry.snr_val) && e.config_hash == entry.config_hash) {
            e = entry;
            e.rho = rho;
            return;
        }
    }
    entries_.push_back(entry);
    entries_.back().rho = rho;
}

std::optional<RegistryEntry> UpperBoundRegistry::find(const Rational& rho, double snr_val, const std::string& hash) const {
    const Rational r = rho.reduced();
    for (const auto& e : entries_) {
        if (e.rho == r && same_snr(e.snr_val, snr_val) && e.config_hash == hash) return e;
    }
    return std::nullopt;
}

std::vector<double> UpperBoundRegistry::bounds_for(const ExperimentConfig& cfg) const {
    const std::string hash = bound_hash(cfg);
    const double snr = cfg.train.snr_val();
    std::vector<double> out;
    for (int l = 1; l <= cfg.grid.levels; ++l) {
        auto e = find(cfg.grid.rho(l), snr, hash);
        if (!e) {
            std::ostringstream os;
            os << "upper-bound registry has no entry for l=" << l << " (rho=" << cfg.grid.rho(l).str()
               << ", snr_val=" << snr << " dB, config " << hash << ")";
            throw RegistryError(os.str());
        }
        out.push_back(e->psnr);
    }
    return out;
}

bool UpperBoundRegistry::covers(const ExperimentConfig& cfg) const {
    const std::string hash = bound_hash(cfg);
    for (int l = 1; l <= cfg.grid.levels; ++l) {
        if (!find(cfg.grid.rho(l), cfg.train.snr_val(), hash)) return false;
    }
    return true;
}

std::string UpperBoundRegistry::to_json(int indent) const {
    json arr = json::array();
    for (const auto& e : entries_) {
        arr.push_back({{"rho", e.rho.str()},
                       {"snr_val", e.snr_val},
                       {"config_hash", e.config_hash},
                       {"psnr", e.psnr},
                       {"provenance", to_string(e.provenance)},
                       {"source", e.source}});
    }
    return json{{"entries", arr}}.dump(indent);
}

UpperBoundRegistry UpperBoundRegistry::from_json(const std::string& text, Provenance default_provenance) {
    UpperBoundRegistry reg;
    try {
        const json j = json::parse(text);
        for (const auto& item : j.at("entries")) {
            RegistryEntry e;
            const auto& rho = item.at("rho");
            e.rho = rho.is_string() ? Rational::parse(rho.get<std::string>()) : Rational::parse(rho.dump());
            e.snr_val = item.at("snr_val").get<double>();
            e.config_hash = item.at("config_hash").get<std::string>();
            e.psnr = item.at("psnr").get<double>();
            e.provenance = default_provenance;
            if (item.contains("provenance")) {
                const auto p = item.at("provenance").get<std::string>();
                if (p == "trained") e.provenance = Provenance::trained;
                else if (p == "external") e.provenance = Provenance::external;
                else throw RegistryError("unknown provenance '" + p + "'");
            }
            if (item.contains("source")) e.source = item.at("source").get<std::string>();
            reg.set(e);
        }
    } catch (const json::exception& e) {
        throw RegistryError(std::string("malformed registry: ") + e.what());
    } catch (const ConfigError& e) {
        throw RegistryError(std::string("malformed registry: ") + e.what());
    }
    return reg;
}

void UpperBoundRegistry::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw RegistryError("cannot write registry " + path.string());
    out << to_json() << '\n';
}

UpperBoundRegistry UpperBoundRegistry::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RegistryError("cannot open registry " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str(), Provenance::external);
}

}  // namespace jscc
