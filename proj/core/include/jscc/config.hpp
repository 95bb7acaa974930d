#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace jscc {

/// Raised for unparsable config text and for violated config invariants. The
/// message names the offending field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact non-negative rational, always stored in lowest terms.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    static Rational parse(const std::string& text);  // "1/16", "3", "0.25"
    Rational reduced() const;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    std::string str() const;

    friend Rational operator*(Rational a, std::int64_t k);
    friend bool operator==(const Rational& a, const Rational& b) = default;
};

enum class GridMode { varying_features, varying_patches };
enum class Scheme { adaptive_bandwidth, successive_refinement };

std::string to_string(GridMode mode);
std::string to_string(Scheme scheme);
GridMode parse_grid_mode(const std::string& s);
Scheme parse_scheme(const std::string& s);

/// Supported bandwidth ratios rho_l = l * rho_1, l = 1..levels.
struct BandwidthGrid {
    int levels = 4;
    Rational rho_1{1, 16};
    GridMode mode = GridMode::varying_features;

    Rational rho(int l) const;  // 1-based
    /// 1-based index of an exact grid ratio, or nullopt.
    std::optional<int> index_of(const Rational& rho) const;
    std::optional<int> index_of(double rho, double tol = 1e-9) const;
};

struct ModelConfig {
    int channels = 3;
    int height = 32;
    int width = 32;
    int patch_size = 2;
    int embed_dim = 256;       // c
    int window = 8;
    std::vector<int> blocks{4, 2};  // M_1..M_I
    std::vector<int> heads{8, 8};
    int side_dim = 2;          // n_u
    int mlp_ratio = 4;
    int head_kernel = 3;       // decoder output convolution
    Scheme scheme = Scheme::adaptive_bandwidth;

    int stages() const { return static_cast<int>(blocks.size()); }
};

struct DwaConfig {
    bool enabled = true;
    double alpha = 2.0;
    double beta = 0.25;
    double gamma = 10.0;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

std::uint64_t splitmix64(std::uint64_t x);
/// Seed for sub-stream `stream` of `seed`.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// One independent RNG stream per role so an ablation can perturb one at a time.
struct SeedTable {
    std::uint64_t init = 1;
    std::uint64_t channel = 2;
    std::uint64_t sampling = 3;
    std::uint64_t shuffle = 4;

    /// Deterministic role seeds derived from a single base seed.
    static SeedTable derive(std::uint64_t base);
    friend bool operator==(const SeedTable&, const SeedTable&) = default;
};

struct TrainConfig {
    double lr = 1e-4;
    double lr_decay = 0.95;
    int lr_patience = 20;
    int max_epochs = 4000;
    int patience_adaptive = 80;
    int patience_fixed = 60;
    int batch_size = 32;
    double snr_min = 4.0;
    double snr_max = 10.0;
    std::optional<double> snr_val_override;
    int checkpoint_every = 0;  // 0: keep only best and last
    DwaConfig dwa;
    AdamConfig adam;
    SeedTable seeds;

    double snr_val() const { return snr_val_override.value_or(0.5 * (snr_min + snr_max)); }
};

struct BandwidthLevel {
    int l = 1;
    Rational rho;
    std::int64_t complex_symbols = 0;  // rho_l * N
    int features = 0;                  // n_f (varying features) or N_F
    int tokens = 0;                    // n_t (varying patches) or N_T
    int reals() const { return static_cast<int>(2 * complex_symbols); }
};

struct DimensionTable {
    std::int64_t source_dim = 0;  // N = C*H*W
    int token_rows = 0;           // h_I
    int token_cols = 0;           // w_I
    int tokens = 0;               // N_T
    int features = 0;             // N_F
    std::vector<int> stage_rows;  // h_i per encoder stage
    std::vector<int> stage_cols;
    std::vector<BandwidthLevel> levels;

    const BandwidthLevel& level(int l) const;
};

struct ExperimentConfig {
    BandwidthGrid grid;
    ModelConfig model;
    TrainConfig train;
    DimensionTable dims;  // derived, never read from file
};

DimensionTable derive_dimensions(const BandwidthGrid& grid, const ModelConfig& model);
void validate(const BandwidthGrid& grid, const ModelConfig& model, const TrainConfig& train);

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON (sorted keys, derived table excluded).
std::string to_json(const ExperimentConfig& cfg, int indent = 2);
std::string dimensions_to_json(const DimensionTable& dims, int indent = 2);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

/// Hash over the settings that determine parameter shapes and codeword
/// layout (grid + model). Checkpoints and registries are keyed by it.
std::uint64_t architecture_hash(const ExperimentConfig& cfg);
std::string hash_hex(std::uint64_t h);

/// Reference configurations: the full-size CIFAR setup with L=4 or L=6
/// levels, and the desk-scale toy model used by the acceptance run.
ExperimentConfig reference_config(int levels);
ExperimentConfig toy_config();

}  // namespace jscc
