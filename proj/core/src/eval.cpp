#include "jscc/eval.hpp"

#include "jscc/channel.hpp"
#include "jscc/checkpoint.hpp"
#include "jscc/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace jscc {

std::string to_string(SweepAxis a) { return a == SweepAxis::rho ? "rho" : "snr"; }

SweepAxis parse_sweep_axis(const std::string& s) {
    if (s == "rho") return SweepAxis::rho;
    if (s == "snr") return SweepAxis::snr;
    throw std::invalid_argument("unknown sweep axis '" + s + "' (expected rho or snr)");
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

std::string grid_text(const ExperimentConfig& cfg) {
    std::string s = "{";
    for (int l = 1; l <= cfg.grid.levels; ++l) s += (l > 1 ? ", " : "") + cfg.grid.rho(l).str();
    return s + "}";
}

}  // namespace

std::string ResultTable::to_csv() const {
    std::ostringstream os;
    for (const auto& [k, v] : metadata) os << "# " << k << "=" << v << "\n";
    os << "scheme,rho,snr_db,mean_psnr,std_psnr,n\n";
    for (const auto& r : rows) {
        os << r.scheme << "," << r.rho.str() << "," << fmt_double(r.snr_db) << "," << fmt_double(r.mean_psnr) << ","
           << fmt_double(r.std_psnr) << "," << r.n << "\n";
    }
    return os.str();
}

ResultTable ResultTable::from_csv(const std::string& text) {
    ResultTable t;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# ", 0) == 0) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("result table: malformed metadata line");
            t.metadata[line.substr(2, eq - 2)] = line.substr(eq + 1);
            continue;
        }
        if (!header) {
            if (line != "scheme,rho,snr_db,mean_psnr,std_psnr,n")
                throw std::invalid_argument("result table: unexpected header '" + line + "'");
            header = true;
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 6) throw std::invalid_argument("result table: expected 6 fields in '" + line + "'");
        ResultRow r;
        r.scheme = f[0];
        r.rho = Rational::parse(f[1]);
        r.snr_db = std::stod(f[2]);
        r.mean_psnr = std::stod(f[3]);
        r.std_psnr = std::stod(f[4]);
        r.n = std::stoi(f[5]);
        t.rows.push_back(r);
    }
    return t;
}

void ResultTable::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_csv();
}

ResultTable ResultTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_csv(ss.str());
}

std::vector<int> grid_levels(const ExperimentConfig& cfg, const std::vector<Rational>& rhos) {
    std::vector<int> out;
    for (const auto& r : rhos) {
        auto l = cfg.grid.index_of(r);
        if (!l) throw ConfigError("rho " + r.str() + " is not on the model's grid " + grid_text(cfg));
        out.push_back(*l);
    }
    return out;
}

ResultTable run_sweep(const codec::JsccModel& model, const ImageDataset& test, const SweepSpec& spec) {
    const auto& cfg = model.config();
    if (spec.repetitions < 1) throw std::invalid_argument("sweep: repetitions must be at least 1");
    if (spec.rhos.empty() || spec.snrs_db.empty()) throw std::invalid_argument("sweep: empty grid");
    if (test.size() == 0) throw std::invalid_argument("sweep: empty test set");
    const auto levels = grid_levels(cfg, spec.rhos);
    const int batch_size = std::max(1, cfg.train.batch_size);

    ResultTable table;
    table.metadata["axis"] = to_string(spec.axis);
    table.metadata["config_hash"] = hash_hex(architecture_hash(cfg));
    table.metadata["seed"] = std::to_string(spec.seed);
    table.metadata["seeds.init"] = std::to_string(cfg.train.seeds.init);
    table.metadata["repetitions"] = std::to_string(spec.repetitions);
    table.metadata["test_set"] = spec.test_set;
    table.metadata["timestamp"] = spec.timestamp;

    std::uint64_t point = 0;
    for (std::size_t i = 0; i < spec.rhos.size(); ++i) {
        for (double snr : spec.snrs_db) {
            const auto info = codec::make_side_info(cfg, levels[i], snr);
            std::vector<double> psnrs;
            for (int rep = 0; rep < spec.repetitions; ++rep) {
                channel::NoiseStream noise(mix_seed(mix_seed(spec.seed, point), static_cast<std::uint64_t>(rep)));
                for (int first = 0; first < test.size(); first += batch_size) {
                    const int n = std::min(batch_size, test.size() - first);
                    const ImageBatch batch = test.range(first, n);
                    const auto p = psnr_per_image(batch, model.reconstruct(batch, info, &noise));
                    psnrs.insert(psnrs.end(), p.begin(), p.end());
                }
            }
            double m = 0.0;
            for (double p : psnrs) m += p;
            m /= static_cast<double>(psnrs.size());
            double var = 0.0;
            for (double p : psnrs) var += (p - m) * (p - m);
            const double sd = psnrs.size() > 1 ? std::sqrt(var / static_cast<double>(psnrs.size() - 1)) : 0.0;
            table.rows.push_back({spec.scheme, spec.rhos[i].reduced(), snr, m, sd, static_cast<int>(psnrs.size())});
            ++point;
        }
    }
    return table;
}

ResultTable run_sweep(const SweepSpec& spec, const ImageDataset& test, const ExperimentConfig* expected) {
    auto model = expected ? load_model(spec.checkpoint, *expected) : load_model(spec.checkpoint);
    ResultTable t = run_sweep(*model, test, spec);
    t.metadata["checkpoint"] = spec.checkpoint.string();
    return t;
}

}  // namespace jscc
