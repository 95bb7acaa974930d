#include "jscc/separation.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace {

using namespace jscc;
namespace jt = jscc::testing;
using namespace jscc::separation;

std::uint64_t budget_oracle(long double rho_n, long double snr_db) {
    return static_cast<std::uint64_t>(std::floor(rho_n * std::log2l(1.0L + std::pow(10.0L, snr_db / 10.0L))));
}

ImageBatch single(const ImageDataset& d, int i) { return d.range(i, 1).rescaled(255.0f); }

TEST(Capacity, MatchesClosedForm) {
    EXPECT_EQ(capacity_bits(Rational{1, 8}, 3072, 7.0), 993u);
    EXPECT_EQ(capacity_bits(Rational{1, 8}, 3072, 7.0), budget_oracle(384, 7));
    for (int k = 1; k <= 6; ++k)
        for (double snr : {-5.0, 0.0, 4.0, 7.0, 10.0, 20.0})
            EXPECT_EQ(capacity_bits(Rational{k, 24}, 3072, snr), budget_oracle(128.0L * k, snr)) << k << " " << snr;
    EXPECT_EQ(capacity_bits(0.125, 3072, 7.0), 993u);
}

TEST(Capacity, MonotoneAndSaturating) {
    std::uint64_t prev = 0;
    for (double snr = -10; snr <= 30; snr += 0.5) {
        const auto b = capacity_bits(Rational{1, 16}, 3072, snr);
        EXPECT_GE(b, prev);
        prev = b;
    }
    EXPECT_LT(capacity_bits(Rational{1, 16}, 3072, 7), capacity_bits(Rational{1, 8}, 3072, 7));
    EXPECT_EQ(capacity_bits(Rational{1, 16}, 3072, std::numeric_limits<double>::infinity()),
              std::numeric_limits<std::uint64_t>::max());
    EXPECT_THROW(capacity_bits(Rational{0, 1}, 3072, 7), std::invalid_argument);
    EXPECT_THROW(capacity_bits(Rational{1, 16}, 0, 7), std::invalid_argument);
}

// Payload of 40 + 20 q bytes; decodes to a flat image of value 16 q.
class FakeCompressor : public ImageCompressor {
public:
    mutable int calls = 0;
    std::string name() const override { return "fake"; }
    int min_quality() const override { return 0; }
    int max_quality() const override { return 15; }
    std::vector<std::uint8_t> compress(const ImageBatch&, int q) const override {
        ++calls;
        std::vector<std::uint8_t> d(static_cast<std::size_t>(40 + 20 * q), 0);
        d[0] = static_cast<std::uint8_t>(q);
        return d;
    }
    ImageBatch decompress(const std::vector<std::uint8_t>& d) const override {
        return ImageBatch{1, 3, 32, 32, 255.0f, std::vector<float>(3072, 16.0f * d[0])};
    }
};

TEST(Baseline, PicksHighestQualityWithinBudget) {
    const auto data = jt::synthetic_dataset(1, 3);
    const auto img = single(data, 0);
    const FakeCompressor codec;
    for (int k = 1; k <= 8; ++k)
        for (double snr : {1.0, 4.0, 7.0, 12.0}) {
            const Rational rho{k, 64};
            const auto budget = capacity_bits(rho, 3072, snr);
            int expected = -1;
            for (int q = 0; q <= 15; ++q)
                if (8u * (40 + 20 * q) <= budget) expected = q;
            codec.calls = 0;
            const auto r = baseline_separation(rho, snr, img, codec);
            EXPECT_EQ(r.budget_bits, budget);
            EXPECT_EQ(r.quality, expected) << k << " " << snr;
            EXPECT_EQ(r.feasible, expected >= 0);
            EXPECT_LE(codec.calls, 6);
            if (r.feasible) {
                EXPECT_EQ(r.payload_bits, 8u * (40 + 20 * expected));
                EXPECT_LE(r.payload_bits, r.budget_bits);
                EXPECT_NEAR(r.psnr->value, psnr(img.pixels, codec.decompress(codec.compress(img, expected)).pixels).value, 1e-12);
            } else {
                EXPECT_FALSE(r.psnr.has_value());
                EXPECT_GT(r.payload_bits, r.budget_bits);
            }
        }
}

TEST(Baseline, InfeasiblePointsAreExcludedAndCounted) {
    const auto cfg = jt::tiny_config();
    const auto test = jt::synthetic_dataset(3, 3);
    const FakeCompressor codec;
    // 1/64 at 1 dB gives 56 bits: nothing fits.
    const auto t = baseline_sweep(cfg, test, {Rational{1, 64}, Rational{1, 4}}, {1.0}, codec, "synthetic");
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0].n, 0);
    EXPECT_TRUE(std::isnan(t.rows[0].mean_psnr));
    EXPECT_EQ(t.metadata.at("infeasible.1/64@1"), "3");
    EXPECT_EQ(t.rows[1].n, 3);
    EXPECT_EQ(t.rows[1].scheme, "separation-fake");
    EXPECT_EQ(t.metadata.at("codec"), "fake");
    EXPECT_EQ(t.metadata.at("test_set"), "synthetic");
}

TEST(Bpg, MissingToolsRaiseFeatureUnavailable) {
    EXPECT_FALSE(BpgCompressor::available("/nonexistent/bpgenc", "/nonexistent/bpgdec"));
    EXPECT_THROW(BpgCompressor("/nonexistent/bpgenc", "/nonexistent/bpgdec"), FeatureUnavailableError);
}

TEST(Bpg, EncodesWhenInstalled) {
    if (!BpgCompressor::available()) GTEST_SKIP() << "bpgenc/bpgdec not on PATH";
    const BpgCompressor codec;
    const auto data = jt::synthetic_dataset(1, 3);
    const auto img = single(data, 0);
    const auto lo = codec.compress(img, 10), hi = codec.compress(img, 45);
    EXPECT_LT(lo.size(), hi.size());
    const auto back = codec.decompress(hi);
    EXPECT_TRUE(back.same_shape(img));
    EXPECT_GT(psnr(img.pixels, back.pixels).value, 30.0);
}

TEST(Quantize, RoundTripAndErrorBound) {
    const QuantizingCompressor codec;
    const auto data = jt::synthetic_dataset(1, 5);
    const auto img = single(data, 0);
    EXPECT_EQ(codec.decompress(codec.compress(img, 8)).pixels, img.pixels);
    std::size_t prev = 0;
    for (int q = 1; q <= 8; ++q) {
        const auto bytes = codec.compress(img, q);
        EXPECT_GE(bytes.size(), prev);
        prev = bytes.size();
        const auto out = codec.decompress(bytes);
        ASSERT_TRUE(out.same_shape(img));
        const float bound = q == 8 ? 0.0f : static_cast<float>(1 << (7 - q));
        for (std::size_t i = 0; i < img.pixels.size(); ++i) ASSERT_LE(std::abs(out.pixels[i] - img.pixels[i]), bound);
    }
    EXPECT_THROW(codec.compress(img, 0), std::out_of_range);
    EXPECT_THROW(codec.decompress({1, 2, 3}), std::invalid_argument);
}

TEST(Png, RoundTrip) {
    const auto data = jt::synthetic_dataset(1, 6);
    const auto img = single(data, 0);
    const auto dir = jt::temp_dir("png");
    write_png(dir / "a.png", img);
    const auto back = read_png(dir / "a.png");
    EXPECT_TRUE(back.same_shape(img));
    EXPECT_EQ(back.pixels, img.pixels);
    EXPECT_EQ(back.peak, 255.0f);
}

}  // namespace
