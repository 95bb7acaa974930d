#include "jscc/channel.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using namespace jscc::channel;

std::vector<Symbol> random_symbols(std::size_t n, std::uint64_t seed, float scale = 1.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.0f, scale);
    std::vector<Symbol> z(n);
    for (auto& s : z) s = {d(rng), d(rng)};
    return z;
}

double power_of(std::span<const Symbol> z) {
    double s = 0;
    for (const auto& v : z) s += std::norm(std::complex<double>(v.real(), v.imag()));
    return s / static_cast<double>(z.size());
}

TEST(Channel, UniformMagnitudeNormalizesToOne) {
    for (std::size_t n : {1u, 7u, 384u}) {
        const std::vector<Symbol> z(n, Symbol(3.0f, 0.0f));
        for (const auto& s : normalize_power(z)) {
            EXPECT_FLOAT_EQ(s.real(), 1.0f);
            EXPECT_FLOAT_EQ(s.imag(), 0.0f);
        }
    }
}

TEST(Channel, RandomVectorHasUnitPower) {
    const auto z = random_symbols(384, 1, 5.0f);
    EXPECT_NEAR(power_of(normalize_power(z)), 1.0, 1e-6);
    EXPECT_NEAR(mean_power(normalize_power(z)), 1.0, 1e-6);
}

TEST(Channel, NormalizeIsIdempotent) {
    const auto once = normalize_power(random_symbols(100, 2));
    const auto twice = normalize_power(once);
    for (std::size_t i = 0; i < once.size(); ++i) {
        EXPECT_NEAR(once[i].real(), twice[i].real(), 1e-6);
        EXPECT_NEAR(once[i].imag(), twice[i].imag(), 1e-6);
    }
}

TEST(Channel, ZeroVectorIsRejected) {
    const std::vector<Symbol> z(8);
    EXPECT_THROW(normalize_power(z), std::domain_error);
    auto w = random_symbols(8, 3);
    for (int i = 4; i < 8; ++i) w[i] = 0;
    EXPECT_THROW(normalize_power_blocks(w, 2), std::domain_error);
}

TEST(Channel, SingleBlockEqualsGlobal) {
    const auto z = random_symbols(64, 4);
    const auto a = normalize_power(z), b = normalize_power_blocks(z, 1);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Channel, BlockPowersFourAndOne) {
    std::vector<Symbol> z(8);
    for (int i = 0; i < 4; ++i) z[i] = {2.0f, 0.0f};  // power 4
    for (int i = 4; i < 8; ++i) z[i] = {0.0f, 1.0f};  // power 1
    const auto y = normalize_power_blocks(z, 2);
    for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(y[i].real(), 1.0f);
    for (int i = 4; i < 8; ++i) EXPECT_EQ(y[i], z[i]);
}

TEST(Channel, EveryBlockHasUnitPower) {
    auto z = random_symbols(384, 5);
    for (std::size_t i = 96; i < 192; ++i) z[i] *= 7.0f;
    const auto y = normalize_power_blocks(z, 4);
    for (int b = 0; b < 4; ++b) EXPECT_NEAR(power_of(std::span<const Symbol>(y).subspan(b * 96, 96)), 1.0, 1e-6);
    EXPECT_THROW(normalize_power_blocks(z, 5), std::invalid_argument);
}

TEST(Channel, BlockNormalizingConstantPowerIsNoOp) {
    const std::vector<Symbol> z(64, Symbol(0.6f, 0.8f));
    const auto y = normalize_power_blocks(normalize_power(z), 4);
    for (std::size_t i = 0; i < z.size(); ++i) {
        EXPECT_NEAR(y[i].real(), 0.6f, 1e-6);
        EXPECT_NEAR(y[i].imag(), 0.8f, 1e-6);
    }
}

TEST(Channel, NoiseVarianceClosedForm) {
    EXPECT_NEAR(NoiseModel::from_snr_db(7.0).variance, 0.199526231496888, 1e-12);
    for (double snr : {-3.0, 0.0, 4.0, 10.0}) {
        const auto m = NoiseModel::from_snr_db(snr);
        EXPECT_NEAR(std::pow(10.0, snr / 10.0) * m.variance, 1.0, 1e-12);
        EXPECT_NEAR(m.snr_db(), snr, 1e-12);
    }
}

TEST(Channel, NoiselessChannelIsIdentity) {
    const auto z = normalize_power(random_symbols(50, 6));
    NoiseStream s(1);
    EXPECT_EQ(transmit_awgn(z, NoiseModel{0.0}, s), z);
}

TEST(Channel, MonteCarloNoisePowerAndSnr) {
    const std::size_t n = 1'000'000;
    const std::vector<Symbol> z(n, Symbol(1.0f, 0.0f));
    for (double snr : {4.0, 7.0, 10.0}) {
        NoiseStream s(static_cast<std::uint64_t>(snr * 10));
        const auto model = NoiseModel::from_snr_db(snr);
        const auto y = transmit_awgn(z, model, s);
        double np = 0, re2 = 0, im2 = 0, cross = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double re = y[i].real() - 1.0, im = y[i].imag();
            re2 += re * re;
            im2 += im * im;
            cross += re * im;
        }
        np = (re2 + im2) / n;
        EXPECT_NEAR(np / model.variance, 1.0, 0.01) << snr;
        EXPECT_NEAR(10 * std::log10(1.0 / np), snr, 0.1) << snr;
        // Circular symmetry: equal split, uncorrelated components.
        EXPECT_NEAR(re2 / im2, 1.0, 0.01);
        EXPECT_NEAR(cross / n / model.variance, 0.0, 0.01);
    }
}

TEST(Channel, StreamIsReproducibleAndAdvances) {
    std::vector<float> a(32), b(32), c(32);
    NoiseStream s1(42), s2(42);
    s1.fill(a, 1.0);
    s2.fill(b, 1.0);
    EXPECT_EQ(a, b);
    s1.fill(c, 1.0);
    EXPECT_NE(a, c);
}

TEST(Channel, RealSymbolRoundTrip) {
    const std::vector<float> r{1, 2, 3, 4};
    const auto s = to_symbols(r);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[1], Symbol(3, 4));
    EXPECT_EQ(to_reals(s), r);
}

}  // namespace
