#pragma once

// Test-set sweeps over bandwidth ratio and SNR, and the result table they
// produce.

#include "jscc/codec.hpp"
#include "jscc/config.hpp"
#include "jscc/dataset.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace jscc {

enum class SweepAxis { rho, snr };
std::string to_string(SweepAxis a);
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepSpec {
    std::filesystem::path checkpoint;  // used by the loading overload
    SweepAxis axis = SweepAxis::rho;
    std::vector<Rational> rhos;   // every entry must be on the model's grid
    std::vector<double> snrs_db;  // evaluated for every rho
    int repetitions = 1;          // noise draws per image
    std::uint64_t seed = 0;
    std::string scheme = "model";
    std::string test_set;   // reference recorded in the table metadata
    std::string timestamp;  // recorded verbatim
};

struct ResultRow {
    std::string scheme;
    Rational rho;
    double snr_db = 0.0;
    double mean_psnr = 0.0;
    double std_psnr = 0.0;
    int n = 0;

    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct ResultTable {
    std::vector<ResultRow> rows;
    std::map<std::string, std::string> metadata;

    /// Metadata as leading "# key=value" lines, then a header and one row
    /// per (scheme, rho, snr).
    std::string to_csv() const;
    static ResultTable from_csv(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static ResultTable load(const std::filesystem::path& path);

    friend bool operator==(const ResultTable&, const ResultTable&) = default;
};

/// Resolves each rho to its grid level; throws ConfigError naming the grid
/// when a point is off-grid.
std::vector<int> grid_levels(const ExperimentConfig& cfg, const std::vector<Rational>& rhos);

/// Evaluates every (rho, snr) point on `test`. Rows are ordered rho-major.
/// Noise for point k, repetition r comes from a stream seeded by
/// (seed, k, r), so a rerun reproduces the table exactly.
ResultTable run_sweep(const codec::JsccModel& model, const ImageDataset& test, const SweepSpec& spec);

/// Loads spec.checkpoint first; when `expected` is given its hash must match.
ResultTable run_sweep(const SweepSpec& spec, const ImageDataset& test, const ExperimentConfig* expected = nullptr);

}  // namespace jscc
