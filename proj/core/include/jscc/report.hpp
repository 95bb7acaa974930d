#pragma once

// Human-readable reports, CSV exports and SVG figures.

#include "jscc/eval.hpp"
#include "jscc/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace jscc::report {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct ChartSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    int width = 640;
    int height = 400;
};

/// Standalone SVG line chart, one <polyline class="series"> per series.
std::string line_chart_svg(const ChartSpec& spec, const std::vector<Series>& series);

/// Samples of the DWA weight function over [delta_min, delta_max].
Series policy_curve(double alpha, double beta, double gamma, double delta_min, double delta_max, int samples);
std::string policy_csv(const Series& curve);

struct PolicyPlot {
    std::filesystem::path svg;
    std::filesystem::path csv;
};
/// Writes weight_policy.svg and weight_policy.csv into `out_dir`.
PolicyPlot plot_weight_policy(double alpha, double beta, double gamma, double delta_min, double delta_max,
                              const std::filesystem::path& out_dir, int samples = 401);

/// One curve per level l: w_l used at each epoch.
std::vector<Series> weight_trajectories(const TrainLog& log);
std::string weight_trajectory_svg(const TrainLog& log, const std::vector<std::string>& level_names = {});

struct Report {
    std::string text;  // side-by-side comparison
    std::string csv;   // one row per (scheme, rho, snr)
};

/// Merges tables that share a test set; throws std::invalid_argument when
/// their test_set metadata differ.
Report build_report(const std::vector<ResultTable>& tables);

}  // namespace jscc::report
