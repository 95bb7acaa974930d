#include "jscc/channel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace jscc::channel {

NoiseModel NoiseModel::from_snr_db(double snr_db) { return NoiseModel{std::pow(10.0, -snr_db / 10.0)}; }

double NoiseModel::snr_db() const { return -10.0 * std::log10(variance); }

void NoiseStream::fill(std::span<float> reals, double variance) {
    if (variance < 0) throw std::invalid_argument("noise variance must be non-negative");
    const double sigma = std::sqrt(variance / 2.0);
    for (float& v : reals) v = static_cast<float>(sigma * normal_(engine_));
}

double mean_power(std::span<const Symbol> z) {
    if (z.empty()) return 0.0;
    double s = 0.0;
    for (const Symbol& v : z) s += static_cast<double>(std::norm(v));
    return s / static_cast<double>(z.size());
}

std::vector<Symbol> normalize_power(std::span<const Symbol> z) { return normalize_power_blocks(z, 1); }

std::vector<Symbol> normalize_power_blocks(std::span<const Symbol> z, int blocks) {
    if (blocks <= 0 || z.size() % static_cast<std::size_t>(blocks)) {
        throw std::invalid_argument("normalize_power_blocks: length " + std::to_string(z.size()) +
                                    " is not divisible into " + std::to_string(blocks) + " blocks");
    }
    const std::size_t len = z.size() / static_cast<std::size_t>(blocks);
    std::vector<Symbol> out(z.begin(), z.end());
    for (int b = 0; b < blocks; ++b) {
        auto block = std::span<Symbol>(out).subspan(static_cast<std::size_t>(b) * len, len);
        const double p = mean_power(block);
        if (!(p > 0.0)) throw std::domain_error("normalize_power: block " + std::to_string(b) + " has zero energy");
        const float f = static_cast<float>(1.0 / std::sqrt(p));
        for (Symbol& v : block) v *= f;
    }
    return out;
}

std::vector<Symbol> transmit_awgn(std::span<const Symbol> z, const NoiseModel& noise, NoiseStream& stream) {
    std::vector<Symbol> y(z.begin(), z.end());
    if (noise.variance == 0.0) return y;
    std::vector<float> w(2 * z.size());
    stream.fill(w, noise.variance);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += Symbol(w[2 * i], w[2 * i + 1]);
    return y;
}

std::vector<Symbol> to_symbols(std::span<const float> reals) {
    if (reals.size() % 2) throw std::invalid_argument("to_symbols: odd number of reals");
    std::vector<Symbol> out(reals.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = Symbol(reals[2 * i], reals[2 * i + 1]);
    return out;
}

std::vector<float> to_reals(std::span<const Symbol> symbols) {
    std::vector<float> out(2 * symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        out[2 * i] = symbols[i].real();
        out[2 * i + 1] = symbols[i].imag();
    }
    return out;
}

}  // namespace jscc::channel
