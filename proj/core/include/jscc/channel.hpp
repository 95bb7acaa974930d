#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace jscc::channel {

using Symbol = std::complex<float>;

/// Per-symbol complex noise variance for a unit-power input: sigma^2 = 10^(-snr_db/10).
struct NoiseModel {
    double variance = 0.0;

    static NoiseModel from_snr_db(double snr_db);
    double snr_db() const;
};

/// Reproducible Gaussian stream; one per worker.
class NoiseStream {
public:
    explicit NoiseStream(std::uint64_t seed) : engine_(seed) {}

    /// Fills interleaved (re, im) reals with circularly-symmetric complex
    /// Gaussian noise of per-symbol variance `variance` (variance/2 per real).
    void fill(std::span<float> reals, double variance);

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Average power (1/k) sum |z_i|^2.
double mean_power(std::span<const Symbol> z);

/// Scales z to unit average symbol power. Throws std::domain_error on a zero vector.
std::vector<Symbol> normalize_power(std::span<const Symbol> z);

/// Splits z into `blocks` equal contiguous blocks and normalizes each to unit
/// average power. Throws std::invalid_argument when the length is not
/// divisible and std::domain_error on a zero block.
std::vector<Symbol> normalize_power_blocks(std::span<const Symbol> z, int blocks);

/// y = z + w, w ~ CN(0, variance).
std::vector<Symbol> transmit_awgn(std::span<const Symbol> z, const NoiseModel& noise, NoiseStream& stream);

/// Reinterprets interleaved reals as complex symbols and back.
std::vector<Symbol> to_symbols(std::span<const float> reals);
std::vector<float> to_reals(std::span<const Symbol> symbols);

}  // namespace jscc::channel
