#include "jscc/report.hpp"

#include "jscc/dwa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace jscc::report {

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string num(double v, int precision = 6) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

}  // namespace

std::string line_chart_svg(const ChartSpec& spec, const std::vector<Series>& series) {
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("series '" + s.name + "': x/y length mismatch");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!(x0 <= x1)) x0 = 0, x1 = 1;
    if (!(y0 <= y1)) y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    const double left = 64, right = 150, top = 36, bottom = 52;
    const double pw = spec.width - left - right, ph = spec.height - top - bottom;
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << spec.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(spec.title)
       << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double xv = x0 + (x1 - x0) * t / 5.0, yv = y0 + (y1 - y0) * t / 5.0;
        os << "<line x1=\"" << sx(xv) << "\" y1=\"" << top + ph << "\" x2=\"" << sx(xv) << "\" y2=\"" << top + ph + 5
           << "\" stroke=\"black\"/>";
        os << "<text x=\"" << sx(xv) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << num(xv, 4)
           << "</text>\n";
        os << "<line x1=\"" << left - 5 << "\" y1=\"" << sy(yv) << "\" x2=\"" << left << "\" y2=\"" << sy(yv)
           << "\" stroke=\"black\"/>";
        os << "<text x=\"" << left - 8 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << num(yv, 4)
           << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << spec.height - 12 << "\" text-anchor=\"middle\">"
       << escape(spec.x_label) << "</text>\n";
    os << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << top + ph / 2 << ")\">" << escape(spec.y_label) << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kPalette[k % std::size(kPalette)];
        os << "<polyline class=\"series\" data-name=\"" << escape(s.name) << "\" fill=\"none\" stroke=\"" << color
           << "\" stroke-width=\"2\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            os << (first ? "" : " ") << num(sx(s.x[i]), 7) << "," << num(sy(s.y[i]), 7);
            first = false;
        }
        os << "\"/>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(k);
        os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 36 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>";
        os << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

Series policy_curve(double alpha, double beta, double gamma, double delta_min, double delta_max, int samples) {
    if (samples < 2) throw std::invalid_argument("policy curve needs at least 2 samples");
    if (!(delta_max > delta_min)) throw std::invalid_argument("policy curve needs delta_max > delta_min");
    Series s;
    s.name = "w(delta)";
    for (int i = 0; i < samples; ++i) {
        // Exact endpoints and evenly spaced interior points.
        const double d = i == samples - 1 ? delta_max
                                          : delta_min + (delta_max - delta_min) * i / static_cast<double>(samples - 1);
        s.x.push_back(d);
        s.y.push_back(dwa_weight(d, alpha, beta, gamma));
    }
    return s;
}

std::string policy_csv(const Series& curve) {
    std::ostringstream os;
    os << "delta,weight\n" << std::setprecision(17);
    for (std::size_t i = 0; i < curve.x.size(); ++i) os << curve.x[i] << "," << curve.y[i] << "\n";
    return os.str();
}

PolicyPlot plot_weight_policy(double alpha, double beta, double gamma, double delta_min, double delta_max,
                              const std::filesystem::path& out_dir, int samples) {
    const Series curve = policy_curve(alpha, beta, gamma, delta_min, delta_max, samples);
    ChartSpec spec;
    spec.title = "DWA weight, alpha=" + num(alpha) + " beta=" + num(beta) + " gamma=" + num(gamma);
    spec.x_label = "PSNR gap (dB)";
    spec.y_label = "weight";
    PolicyPlot out{out_dir / "weight_policy.svg", out_dir / "weight_policy.csv"};
    write_text(out.svg, line_chart_svg(spec, {curve}));
    write_text(out.csv, policy_csv(curve));
    return out;
}

std::vector<Series> weight_trajectories(const TrainLog& log) {
    std::size_t levels = 0;
    for (const auto& r : log.records()) levels = std::max(levels, r.weights.size());
    std::vector<Series> out(levels);
    for (std::size_t l = 0; l < levels; ++l) out[l].name = "l=" + std::to_string(l + 1);
    for (const auto& r : log.records()) {
        for (std::size_t l = 0; l < r.weights.size(); ++l) {
            out[l].x.push_back(r.epoch);
            out[l].y.push_back(r.weights[l]);
        }
    }
    return out;
}

std::string weight_trajectory_svg(const TrainLog& log, const std::vector<std::string>& level_names) {
    auto series = weight_trajectories(log);
    for (std::size_t l = 0; l < series.size() && l < level_names.size(); ++l) series[l].name = level_names[l];
    ChartSpec spec;
    spec.title = "Loss weights per bandwidth level";
    spec.x_label = "epoch";
    spec.y_label = "weight";
    return line_chart_svg(spec, series);
}

Report build_report(const std::vector<ResultTable>& tables) {
    if (tables.empty()) throw std::invalid_argument("report: no result tables");
    auto test_set = [](const ResultTable& t) {
        auto it = t.metadata.find("test_set");
        return it == t.metadata.end() ? std::string() : it->second;
    };
    auto meta = [](const ResultTable& t, const std::string& key) {
        auto it = t.metadata.find(key);
        return it == t.metadata.end() ? std::string("-") : it->second;
    };
    const std::string ref = test_set(tables.front());
    for (const auto& t : tables)
        if (test_set(t) != ref)
            throw std::invalid_argument("report: tables use different test sets ('" + ref + "' vs '" + test_set(t) +
                                        "')");

    using Key = std::tuple<double, double>;  // (rho, snr)
    std::vector<std::string> schemes;
    std::map<Key, std::map<std::string, const ResultRow*>> grid;
    std::map<Key, std::string> rho_text;
    std::ostringstream csv;
    csv << "scheme,rho,snr_db,mean_psnr,std_psnr,n,config_hash,seed\n" << std::setprecision(17);

    for (const auto& t : tables) {
        for (const auto& r : t.rows) {
            if (std::find(schemes.begin(), schemes.end(), r.scheme) == schemes.end()) schemes.push_back(r.scheme);
            const Key key{r.rho.value(), r.snr_db};
            auto& cell = grid[key][r.scheme];
            if (cell)
                throw std::invalid_argument("report: duplicate row for scheme " + r.scheme + " at rho " + r.rho.str() +
                                            ", " + num(r.snr_db) + " dB");
            cell = &r;
            rho_text[key] = r.rho.str();
            csv << r.scheme << "," << r.rho.str() << "," << r.snr_db << "," << r.mean_psnr << "," << r.std_psnr << ","
                << r.n << "," << meta(t, "config_hash") << "," << meta(t, "seed") << "\n";
        }
    }

    std::ostringstream text;
    text << "Test set: " << (ref.empty() ? "-" : ref) << "\n\nSources:\n";
    for (const auto& t : tables) {
        std::set<std::string> names;
        for (const auto& r : t.rows) names.insert(r.scheme);
        std::string joined;
        for (const auto& n : names) joined += (joined.empty() ? "" : ", ") + n;
        text << "  " << (joined.empty() ? "(empty)" : joined) << ": config_hash=" << meta(t, "config_hash")
             << " seed=" << meta(t, "seed") << " seeds.init=" << meta(t, "seeds.init")
             << " timestamp=" << meta(t, "timestamp") << "\n";
    }
    text << "\nMean PSNR (dB) +/- std over n images\n\n";
    const int w = 24;
    text << std::left << std::setw(10) << "rho" << std::setw(10) << "SNR(dB)";
    for (const auto& s : schemes) text << std::setw(w) << s;
    text << "\n";
    for (const auto& [key, cells] : grid) {
        text << std::setw(10) << rho_text[key] << std::setw(10) << num(std::get<1>(key), 4);
        for (const auto& s : schemes) {
            auto it = cells.find(s);
            std::string cell = "-";
            if (it != cells.end()) {
                const ResultRow& r = *it->second;
                std::ostringstream c;
                c << std::fixed << std::setprecision(2) << r.mean_psnr << " +/- " << r.std_psnr << " (" << r.n << ")";
                cell = c.str();
            }
            text << std::setw(w) << cell;
        }
        text << "\n";
    }
    return {text.str(), csv.str()};
}

}  // namespace jscc::report
