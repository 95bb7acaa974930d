#pragma once

// Dynamic weight assignment: per-level loss weights driven by the validation
// PSNR gap to separately trained fixed-bandwidth models.

#include "jscc/config.hpp"
#include "jscc/nn.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jscc {

/// clip(2^(alpha (delta - beta)) - 1, 0, gamma).
double dwa_weight(double delta, double alpha, double beta, double gamma);
double dwa_weight(double delta, const DwaConfig& cfg);

struct DwaState {
    std::vector<double> weights;  // w_l, index l-1
    std::vector<double> psnr;     // last validation PSNR_l
    std::vector<double> gaps;     // Delta_l = PSNR*_l - PSNR_l
    int epoch = 0;

    /// All weights 1, no validation yet.
    static DwaState initial(int levels);
};

/// Recomputes every weight from validation PSNRs and the upper bounds. With
/// DWA disabled the weights stay at 1 but gaps are still tracked.
DwaState update_weights(const DwaState& state, std::span<const double> psnrs, std::span<const double> bounds,
                        const DwaConfig& cfg);

struct Condition {
    int l = 1;
    double snr_db = 0.0;
};

/// l uniform over 1..L, SNR uniform over [snr_min, snr_max].
Condition sample_condition(const TrainConfig& train, const BandwidthGrid& grid, nn::Rng& rng);

class RegistryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Provenance { trained, external };
std::string to_string(Provenance p);

struct RegistryEntry {
    Rational rho;
    double snr_val = 0.0;
    std::string config_hash;  // hex, see bound_hash()
    double psnr = 0.0;
    Provenance provenance = Provenance::trained;
    std::string source;  // checkpoint path or file the value came from
};

/// Hash under which upper bounds are stored: the architecture hash with the
/// scheme normalized, so adaptive and successive-refinement runs of one
/// architecture share their fixed-bandwidth references.
std::string bound_hash(const ExperimentConfig& cfg);

/// PSNR*_l keyed by (rho_l, snr_val, config hash).
class UpperBoundRegistry {
public:
    /// Inserts or replaces the entry with the same key.
    void set(const RegistryEntry& entry);
    std::optional<RegistryEntry> find(const Rational& rho, double snr_val, const std::string& hash) const;

    /// Bounds for every grid level at the config's snr_val. Throws
    /// RegistryError naming the first missing level.
    std::vector<double> bounds_for(const ExperimentConfig& cfg) const;
    bool covers(const ExperimentConfig& cfg) const;

    const std::vector<RegistryEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::string to_json(int indent = 2) const;
    static UpperBoundRegistry from_json(const std::string& text, Provenance default_provenance = Provenance::external);
    void save(const std::filesystem::path& path) const;
    /// Entries without a provenance field are tagged external.
    static UpperBoundRegistry load(const std::filesystem::path& path);

private:
    std::vector<RegistryEntry> entries_;
};

}  // namespace jscc
