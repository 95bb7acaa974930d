#include "cli.hpp"

#include "jscc/checkpoint.hpp"
#include "jscc/config.hpp"
#include "jscc/dataset.hpp"
#include "jscc/dwa.hpp"
#include "jscc/eval.hpp"
#include "jscc/report.hpp"
#include "jscc/separation.hpp"
#include "jscc/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

namespace jscc::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
    std::string config = "toy";
    std::optional<std::uint64_t> seed;
    std::string out;
};

struct DataFlags {
    std::string dir;
    int n_train = 2000;
    int n_val = 500;
    int n_test = 500;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "Config JSON file, or one of: toy, reference-l4, reference-l6")->capture_default_str();
    cmd->add_option("--seed", c.seed, "Base seed; derives every role seed");
    cmd->add_option("--out", c.out, "Output directory (default: $JSCC_OUT_DIR, else ./runs)");
}

void add_data(CLI::App* cmd, DataFlags& d) {
    cmd->add_option("--data", d.dir, "CIFAR-10 binary directory (default: $JSCC_CIFAR10_DIR)");
    cmd->add_option("--n-train", d.n_train)->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--n-val", d.n_val)->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--n-test", d.n_test)->capture_default_str()->check(CLI::PositiveNumber);
}

ExperimentConfig resolve_config(const Common& c) {
    ExperimentConfig cfg;
    if (c.config == "toy") {
        cfg = toy_config();
    } else if (c.config == "reference-l4") {
        cfg = reference_config(4);
    } else if (c.config == "reference-l6") {
        cfg = reference_config(6);
    } else {
        cfg = load_config(c.config);
    }
    if (c.seed) cfg.train.seeds = SeedTable::derive(*c.seed);
    return cfg;
}

fs::path out_dir(const Common& c) {
    if (!c.out.empty()) return c.out;
    if (const char* env = std::getenv("JSCC_OUT_DIR"); env && *env) return env;
    return "runs";
}

DataSplits load_data(const DataFlags& d) {
    std::string dir = d.dir;
    if (dir.empty())
        if (const char* env = std::getenv("JSCC_CIFAR10_DIR"); env) dir = env;
    if (dir.empty()) throw std::runtime_error("no dataset: pass --data or set JSCC_CIFAR10_DIR");
    return load_cifar10(dir, d.n_train, d.n_val, d.n_test);
}

std::vector<Rational> parse_rhos(const std::vector<std::string>& text) {
    std::vector<Rational> out;
    for (const auto& t : text) out.push_back(Rational::parse(t));
    return out;
}

std::string now_utc() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

std::string level_label(const ExperimentConfig& cfg, int l) { return "rho=" + cfg.grid.rho(l).str(); }

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bandwidth-adaptive deep joint source-channel coding", "jscc"};
    app.require_subcommand(1);

    // train
    Common train_c;
    DataFlags train_d;
    std::string train_registry, train_run;
    bool train_no_dwa = false;
    std::optional<int> train_epochs, train_level;
    std::optional<double> train_snr;
    auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoints and a per-epoch log");
    add_common(train_cmd, train_c);
    add_data(train_cmd, train_d);
    train_cmd->add_option("--registry", train_registry, "Upper-bound registry JSON (required with DWA)");
    train_cmd->add_option("--run-name", train_run, "Subdirectory under <out>/<config hash>");
    train_cmd->add_flag("--no-dwa", train_no_dwa, "Train with uniform loss weights");
    train_cmd->add_option("--epochs", train_epochs, "Override the epoch budget")->check(CLI::PositiveNumber);
    train_cmd->add_option("--level", train_level, "Train a non-adaptive model at grid level l");
    train_cmd->add_option("--snr", train_snr, "Fix the training SNR (dB)");

    // train-bounds
    Common bounds_c;
    DataFlags bounds_d;
    std::optional<int> bounds_epochs;
    auto* bounds_cmd = app.add_subcommand("train-bounds", "Train the fixed-bandwidth upper-bound models");
    add_common(bounds_cmd, bounds_c);
    add_data(bounds_cmd, bounds_d);
    bounds_cmd->add_option("--epochs", bounds_epochs, "Override the epoch budget")->check(CLI::PositiveNumber);

    // eval-sweep
    Common sweep_c;
    DataFlags sweep_d;
    std::string sweep_ckpt, sweep_axis = "rho", sweep_scheme = "model", sweep_table;
    std::vector<std::string> sweep_rhos;
    std::vector<double> sweep_snrs;
    int sweep_reps = 1;
    auto* sweep_cmd = app.add_subcommand("eval-sweep", "Evaluate a checkpoint over bandwidth ratios and SNRs");
    add_common(sweep_cmd, sweep_c);
    add_data(sweep_cmd, sweep_d);
    sweep_cmd->add_option("--checkpoint", sweep_ckpt, "Checkpoint file")->required();
    sweep_cmd->add_option("--axis", sweep_axis, "rho or snr")->check(CLI::IsMember({"rho", "snr"}))->capture_default_str();
    sweep_cmd->add_option("--rho", sweep_rhos, "Bandwidth ratios (default: the whole grid)");
    sweep_cmd->add_option("--snr", sweep_snrs, "SNRs in dB (default: 7)");
    sweep_cmd->add_option("--repetitions", sweep_reps, "Noise draws per image")->check(CLI::PositiveNumber)->capture_default_str();
    sweep_cmd->add_option("--scheme", sweep_scheme, "Scheme label in the table")->capture_default_str();
    sweep_cmd->add_option("--table", sweep_table, "Output CSV (default: <out>/sweep.csv)");

    // baseline
    Common base_c;
    DataFlags base_d;
    std::vector<std::string> base_rhos;
    std::vector<double> base_snrs;
    std::string base_codec = "bpg", base_table;
    auto* base_cmd = app.add_subcommand("baseline", "Compressor plus ideal capacity-achieving code");
    add_common(base_cmd, base_c);
    add_data(base_cmd, base_d);
    base_cmd->add_option("--rho", base_rhos, "Bandwidth ratios (default: the whole grid)");
    base_cmd->add_option("--snr", base_snrs, "SNRs in dB (default: 7)");
    base_cmd->add_option("--codec", base_codec, "bpg or quantize")->check(CLI::IsMember({"bpg", "quantize"}))->capture_default_str();
    base_cmd->add_option("--table", base_table, "Output CSV (default: <out>/baseline_<codec>.csv)");

    // plot-policy
    Common plot_c;
    std::optional<double> p_alpha, p_beta, p_gamma;
    double p_min = -0.5, p_max = 2.5;
    auto* plot_cmd = app.add_subcommand("plot-policy", "Plot the loss-weight function");
    add_common(plot_cmd, plot_c);
    plot_cmd->add_option("--alpha", p_alpha, "Default: from the config");
    plot_cmd->add_option("--beta", p_beta, "Default: from the config");
    plot_cmd->add_option("--gamma", p_gamma, "Default: from the config");
    plot_cmd->add_option("--delta-min", p_min)->capture_default_str();
    plot_cmd->add_option("--delta-max", p_max)->capture_default_str();

    // report
    Common rep_c;
    std::vector<std::string> rep_tables, rep_logs;
    auto* rep_cmd = app.add_subcommand("report", "Merge result tables into a report and plot weight trajectories");
    add_common(rep_cmd, rep_c);
    rep_cmd->add_option("--tables", rep_tables, "Result table CSV files")->required();
    rep_cmd->add_option("--log", rep_logs, "train_log.jsonl files to plot");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*train_cmd) {
            ExperimentConfig cfg = resolve_config(train_c);
            if (train_no_dwa) cfg.train.dwa.enabled = false;
            if (train_epochs) cfg.train.max_epochs = *train_epochs;
            const auto data = load_data(train_d);
            TrainOptions opt;
            opt.out_dir = out_dir(train_c);
            opt.run_name = train_run;
            opt.fixed_level = train_level;
            opt.fixed_snr = train_snr;
            UpperBoundRegistry registry;
            if (!train_registry.empty()) {
                registry = UpperBoundRegistry::load(train_registry);
                opt.registry = &registry;
            }
            opt.on_epoch = [&](const EpochRecord& r) {
                out << "epoch " << r.epoch << " loss " << r.train_loss << " val_mse " << r.metric
                    << (r.improved ? " *" : "") << "\n";
                out.flush();
            };
            const TrainResult res = train(cfg, data.train, data.val, opt);
            std::vector<std::string> names;
            for (int l = 1; l <= cfg.grid.levels; ++l) names.push_back(level_label(cfg, l));
            write_text(res.run_dir / "weights.svg", report::weight_trajectory_svg(res.log, names));
            out << "best epoch " << res.best_epoch << ", checkpoint " << (res.run_dir / "best.ckpt").string() << "\n";
        } else if (*bounds_cmd) {
            ExperimentConfig cfg = resolve_config(bounds_c);
            if (bounds_epochs) cfg.train.max_epochs = *bounds_epochs;
            const auto data = load_data(bounds_d);
            TrainOptions opt;
            opt.out_dir = out_dir(bounds_c);
            const auto registry = train_upper_bounds(cfg, data.train, data.val, opt);
            for (const auto& e : registry.entries())
                out << "rho " << e.rho.str() << " @ " << e.snr_val << " dB: " << e.psnr << " dB\n";
            out << "registry " << (run_directory(opt.out_dir, cfg, "") / "registry.json").string() << "\n";
        } else if (*sweep_cmd) {
            const auto header = read_checkpoint_header(sweep_ckpt);
            // An explicit config must match the checkpoint; otherwise the
            // checkpoint's own config is used.
            const bool explicit_cfg = sweep_cmd->count("--config") > 0;
            ExperimentConfig cfg = explicit_cfg ? resolve_config(sweep_c) : header.config;
            const auto data = load_data(sweep_d);
            SweepSpec spec;
            spec.checkpoint = sweep_ckpt;
            spec.axis = parse_sweep_axis(sweep_axis);
            spec.rhos = parse_rhos(sweep_rhos);
            if (spec.rhos.empty())
                for (int l = 1; l <= cfg.grid.levels; ++l) spec.rhos.push_back(cfg.grid.rho(l));
            spec.snrs_db = sweep_snrs.empty() ? std::vector<double>{7.0} : sweep_snrs;
            spec.repetitions = sweep_reps;
            spec.seed = sweep_c.seed.value_or(cfg.train.seeds.channel);
            spec.scheme = sweep_scheme;
            spec.test_set = "cifar10-test[" + std::to_string(data.test.size()) + "]";
            spec.timestamp = now_utc();
            grid_levels(cfg, spec.rhos);  // fail before loading weights
            const ResultTable table = run_sweep(spec, data.test, explicit_cfg ? &cfg : nullptr);
            const fs::path path = sweep_table.empty() ? out_dir(sweep_c) / "sweep.csv" : fs::path(sweep_table);
            table.save(path);
            for (const auto& r : table.rows)
                out << r.scheme << " rho " << r.rho.str() << " snr " << r.snr_db << ": " << r.mean_psnr << " +/- "
                    << r.std_psnr << " dB (n=" << r.n << ")\n";
            out << "table " << path.string() << "\n";
        } else if (*base_cmd) {
            const ExperimentConfig cfg = resolve_config(base_c);
            std::unique_ptr<separation::ImageCompressor> codec;
            if (base_codec == "bpg")
                codec = std::make_unique<separation::BpgCompressor>();
            else
                codec = std::make_unique<separation::QuantizingCompressor>();
            const auto data = load_data(base_d);
            auto rhos = parse_rhos(base_rhos);
            if (rhos.empty())
                for (int l = 1; l <= cfg.grid.levels; ++l) rhos.push_back(cfg.grid.rho(l));
            const auto snrs = base_snrs.empty() ? std::vector<double>{7.0} : base_snrs;
            ResultTable table = separation::baseline_sweep(cfg, data.test, rhos, snrs, *codec,
                                                           "cifar10-test[" + std::to_string(data.test.size()) + "]");
            table.metadata["timestamp"] = now_utc();
            const fs::path path =
                base_table.empty() ? out_dir(base_c) / ("baseline_" + base_codec + ".csv") : fs::path(base_table);
            table.save(path);
            for (const auto& r : table.rows)
                out << r.scheme << " rho " << r.rho.str() << " snr " << r.snr_db << ": " << r.mean_psnr
                    << " dB (feasible n=" << r.n << ")\n";
            out << "table " << path.string() << "\n";
        } else if (*plot_cmd) {
            const ExperimentConfig cfg = resolve_config(plot_c);
            const auto plot = report::plot_weight_policy(p_alpha.value_or(cfg.train.dwa.alpha),
                                                         p_beta.value_or(cfg.train.dwa.beta),
                                                         p_gamma.value_or(cfg.train.dwa.gamma), p_min, p_max,
                                                         out_dir(plot_c));
            out << "figure " << plot.svg.string() << "\ndata " << plot.csv.string() << "\n";
        } else if (*rep_cmd) {
            std::vector<ResultTable> tables;
            for (const auto& t : rep_tables) tables.push_back(ResultTable::load(t));
            const auto rep = report::build_report(tables);
            const fs::path dir = out_dir(rep_c);
            write_text(dir / "report.txt", rep.text);
            write_text(dir / "report.csv", rep.csv);
            for (std::size_t i = 0; i < rep_logs.size(); ++i) {
                const fs::path svg = dir / ("weights_" + std::to_string(i + 1) + ".svg");
                write_text(svg, report::weight_trajectory_svg(TrainLog::load(rep_logs[i])));
                out << "figure " << svg.string() << "\n";
            }
            out << rep.text << "report " << (dir / "report.txt").string() << "\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace jscc::cli
