#include "jscc/codec.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace {

using namespace jscc;
using jscc::testing::random_values;
using jscc::testing::tiny_config;

std::vector<float> values(const ag::Var& v) { return {v.value().begin(), v.value().end()}; }

ag::Var random_images(int batch, std::uint64_t seed) {
    auto v = random_values(static_cast<std::size_t>(batch) * 3072, seed, 0.3f);
    for (auto& x : v) x = std::clamp(0.5f + x, 0.0f, 1.0f);
    return ag::constant({batch, 3, 32, 32}, v);
}

ag::Var random_codeword(const ExperimentConfig& cfg, int batch, std::uint64_t seed, bool trainable = false) {
    const ag::Shape s{batch * cfg.dims.tokens, cfg.dims.features};
    auto v = random_values(ag::numel(s), seed);
    return trainable ? ag::parameter(s, v) : ag::constant(s, v);
}

TEST(Codec, SideInfoEmbeddingDeterministicWithPaperWidth) {
    const auto cfg = tiny_config();
    codec::JsccModel model(cfg, 1);
    const auto info = codec::make_side_info(cfg, 2, 7.0);
    EXPECT_EQ(info.rho, 0.125);
    const auto a = model.encoder_side(info), b = model.encoder_side(info);
    EXPECT_EQ(a.shape(), (ag::Shape{1, 2}));
    EXPECT_EQ(values(a), values(b));
    nn::ParameterList ps = model.parameters();
    ASSERT_EQ(ps[0].name, "side.weight");
    EXPECT_EQ(ps[0].var.shape(), (ag::Shape{2, 2}));  // input [snr_db, rho_l]
    EXPECT_EQ(values(model.decoder_side(info)), values(a));
    EXPECT_THROW(codec::make_side_info(cfg, 0, 7.0), std::out_of_range);
    EXPECT_THROW(codec::make_side_info(cfg, 5, 7.0), std::out_of_range);
}

TEST(Codec, SideInfoAffineOracle) {
    const auto cfg = tiny_config();
    codec::JsccModel model(cfg, 2);
    const auto& w = model.parameters()[0].var.value();
    const auto& b = model.parameters()[1].var.value();
    const auto u = model.encoder_side(codec::make_side_info(cfg, 3, 5.5));
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(u.value()[j], 5.5 * w[j] + 0.1875 * w[2 + j] + b[j], 1e-6);
}

TEST(Codec, SuccessiveRefinementEncoderIgnoresRho) {
    const auto cfg = tiny_config(GridMode::varying_features, Scheme::successive_refinement);
    codec::JsccModel model(cfg, 3);
    const auto& ps = model.parameters();
    ASSERT_EQ(ps[0].name, "side.encoder.weight");
    EXPECT_EQ(ps[0].var.shape(), (ag::Shape{1, 2}));
    ASSERT_EQ(ps[2].name, "side.decoder.weight");
    EXPECT_EQ(ps[2].var.shape(), (ag::Shape{2, 2}));
    const auto u1 = model.encoder_side(codec::make_side_info(cfg, 1, 7.0));
    const auto u4 = model.encoder_side(codec::make_side_info(cfg, 4, 7.0));
    EXPECT_EQ(values(u1), values(u4));
    EXPECT_NE(values(model.decoder_side(codec::make_side_info(cfg, 1, 7.0))),
              values(model.decoder_side(codec::make_side_info(cfg, 4, 7.0))));
}

TEST(Codec, PaperConfigShapes) {
    const auto cfg = reference_config(4);
    codec::JsccModel model(cfg, 4);
    const auto info = codec::make_side_info(cfg, 4, 7.0);
    const auto z = model.encode(random_images(1, 5), info);
    EXPECT_EQ(z.shape(), (ag::Shape{64, 24}));
    nn::Rng rng(6);
    codec::Encoder enc(cfg, rng);
    codec::Decoder dec(cfg, rng);
    EXPECT_EQ(enc.concat_width(), 258);
    EXPECT_EQ(dec.concat_width(), 26);
    const auto out = model.decode(z, info);
    EXPECT_EQ(out.shape(), (ag::Shape{1, 3, 32, 32}));
}

TEST(Codec, ToyConfigTokenGrid) {
    const auto cfg = toy_config();
    codec::JsccModel model(cfg, 7);
    const auto z = model.encode(random_images(2, 8), codec::make_side_info(cfg, 1, 7.0));
    EXPECT_EQ(cfg.dims.token_rows, 8);
    EXPECT_EQ(cfg.dims.token_cols, 8);
    EXPECT_EQ(z.shape(), (ag::Shape{2 * 64, 24}));
}

TEST(Codec, EncodeRejectsWrongImageShape) {
    const auto cfg = tiny_config();
    codec::JsccModel model(cfg, 9);
    EXPECT_THROW(model.encode(ag::constant({1, 3, 16, 16}, random_values(768, 1)), codec::make_side_info(cfg, 1, 7)),
                 std::invalid_argument);
    EXPECT_THROW(model.decode(ag::constant({64, 20}, random_values(1280, 1)), codec::make_side_info(cfg, 1, 7)),
                 std::invalid_argument);
}

TEST(Codec, FullLevelMaskIsFlattening) {
    const auto cfg = tiny_config();
    const auto z = random_codeword(cfg, 2, 10);
    const auto m = codec::mask_codeword(z, cfg, 4);
    EXPECT_EQ(m.shape(), (ag::Shape{2, 1536}));
    EXPECT_EQ(values(m), values(z));
    const auto back = codec::pad_received(m, cfg, 4);
    EXPECT_EQ(values(back), values(z));  // bit-exact
}

TEST(Codec, VaryingFeaturesKeepsLeadingFeatures) {
    const auto cfg = tiny_config();
    const auto z = random_codeword(cfg, 1, 11);
    const auto m = codec::mask_codeword(z, cfg, 2);
    ASSERT_EQ(m.size(), 768u);
    const auto zv = values(z);
    for (int t = 0; t < 64; ++t)
        for (int f = 0; f < 12; ++f) EXPECT_EQ(m.value()[t * 12 + f], zv[t * 24 + f]);
    const auto p = codec::pad_received(m, cfg, 2);
    for (int t = 0; t < 64; ++t)
        for (int f = 0; f < 24; ++f) EXPECT_EQ(p.value()[t * 24 + f], f < 12 ? zv[t * 24 + f] : 0.0f);
}

TEST(Codec, VaryingPatchesKeepsLeadingTokens) {
    const auto cfg = tiny_config(GridMode::varying_patches);
    const auto z = random_codeword(cfg, 1, 12);
    const auto m = codec::mask_codeword(z, cfg, 1);
    ASSERT_EQ(m.size(), 384u);
    const auto zv = values(z);
    for (int j = 0; j < 384; ++j) EXPECT_EQ(m.value()[j], zv[j]);  // tokens 1..16, all 24 features
    const auto p = codec::pad_received(m, cfg, 1);
    for (int j = 384; j < 1536; ++j) EXPECT_EQ(p.value()[j], 0.0f);
}

TEST(Codec, SuccessiveRefinementBlockLayout) {
    const auto cfg = tiny_config(GridMode::varying_features, Scheme::successive_refinement);
    const auto z = random_codeword(cfg, 1, 13);
    const auto zv = values(z);
    const auto m = codec::mask_codeword(z, cfg, 3);
    ASSERT_EQ(m.size(), 3u * 384u);
    // Block b holds features [6b, 6b + 6) of every token.
    for (int b = 0; b < 3; ++b)
        for (int t = 0; t < 64; ++t)
            for (int f = 0; f < 6; ++f) EXPECT_EQ(m.value()[b * 384 + t * 6 + f], zv[t * 24 + b * 6 + f]);
    EXPECT_EQ(codec::power_blocks(cfg, 3), 3);
    EXPECT_EQ(codec::power_blocks(tiny_config(), 3), 1);
}

TEST(Codec, PadRejectsWrongLength) {
    const auto cfg = tiny_config();
    EXPECT_THROW(codec::pad_received(ag::constant({1, 766}, std::vector<float>(766)), cfg, 2), std::invalid_argument);
    EXPECT_THROW(codec::mask_codeword(random_codeword(cfg, 1, 1), cfg, 0), std::out_of_range);
}

TEST(Codec, MasksAreNestedAndPaddingCountsZeros) {
    for (auto mode : {GridMode::varying_features, GridMode::varying_patches})
        for (auto scheme : {Scheme::adaptive_bandwidth, Scheme::successive_refinement}) {
            const auto cfg = tiny_config(mode, scheme);
            for (int l = 1; l < 4; ++l) {
                const auto a = codec::mask_positions(cfg, l), b = codec::mask_positions(cfg, l + 1);
                const std::set<std::int32_t> sa(a.begin(), a.end()), sb(b.begin(), b.end());
                EXPECT_EQ(sb.size(), b.size());
                EXPECT_TRUE(std::includes(sb.begin(), sb.end(), sa.begin(), sa.end())) << "l=" << l;
                // Block-major order also makes level l a prefix of level l+1.
                if (scheme == Scheme::successive_refinement) {
                    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << "l=" << l;
                }
            }
            const auto z = ag::constant({64, 24}, std::vector<float>(1536, 1.0f));
            for (int l = 1; l <= 4; ++l) {
                const auto p = codec::pad_received(codec::mask_codeword(z, cfg, l), cfg, l);
                const auto zeros = std::count(p.value().begin(), p.value().end(), 0.0f);
                EXPECT_EQ(zeros, 2 * (4 - l) * 192);  // 2 (rho_L - rho_l) N
            }
        }
}

TEST(Codec, MaskedOutCoordinatesGetZeroGradient) {
    const auto cfg = tiny_config();
    codec::JsccModel model(cfg, 14);
    auto z = random_codeword(cfg, 2, 15, true);
    const auto info = codec::make_side_info(cfg, 2, 7.0);
    channel::NoiseStream noise(16);
    const auto tx = ag::power_normalize(codec::mask_codeword(z, cfg, 2), 1);
    auto out = model.decode(codec::pad_received(tx, cfg, 2), info);
    ag::backward(ag::mse(out, random_images(2, 17)));
    const auto g = z.grad();
    double kept = 0;
    for (int r = 0; r < 128; ++r)
        for (int f = 0; f < 24; ++f) {
            if (f >= 12)
                EXPECT_EQ(g[r * 24 + f], 0.0f);
            else
                kept += std::abs(g[r * 24 + f]);
        }
    EXPECT_GT(kept, 0.0);
}

TEST(Codec, TransmitNormalizesEveryCodeword) {
    for (auto scheme : {Scheme::adaptive_bandwidth, Scheme::successive_refinement}) {
        const auto cfg = tiny_config(GridMode::varying_features, scheme);
        codec::JsccModel model(cfg, 18);
        for (int l = 1; l <= 4; ++l) {
            const auto t = model.transmit(random_images(3, 19), codec::make_side_info(cfg, l, 7.0), nullptr);
            const int len = l * 384, blocks = codec::power_blocks(cfg, l), bl = len / blocks;
            ASSERT_EQ(t.transmitted.shape(), (ag::Shape{3, len}));
            for (int r = 0; r < 3; ++r)
                for (int b = 0; b < blocks; ++b) {
                    double p = 0;
                    for (int i = 0; i < bl; ++i) p += std::pow(t.transmitted.value()[r * len + b * bl + i], 2);
                    EXPECT_NEAR(p / (bl / 2), 1.0, 1e-6);
                }
            EXPECT_EQ(values(t.received), values(t.transmitted));  // noiseless
            EXPECT_EQ(t.output.shape(), (ag::Shape{3, 3, 32, 32}));
        }
    }
}

TEST(Codec, DecoderOutputIsClampedAndFinite) {
    const auto cfg = tiny_config();
    codec::JsccModel model(cfg, 20);
    auto y = ag::constant({2 * 64, 24}, random_values(2 * 64 * 24, 21, 50.0f));
    const auto out = model.decode(y, codec::make_side_info(cfg, 4, 30.0));
    for (float v : out.value()) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Codec, EncodeDecodeDeterministicAndNoiseSeeded) {
    const auto cfg = tiny_config();
    codec::JsccModel a(cfg, 22), b(cfg, 22);
    const auto img = random_images(2, 23);
    const auto info = codec::make_side_info(cfg, 3, 7.0);
    EXPECT_EQ(values(a.encode(img, info)), values(b.encode(img, info)));
    channel::NoiseStream n1(5), n2(5), n3(6);
    const auto o1 = a.transmit(img, info, &n1).output, o2 = b.transmit(img, info, &n2).output;
    EXPECT_EQ(values(o1), values(o2));
    EXPECT_NE(values(a.transmit(img, info, &n3).output), values(o1));
}

TEST(Codec, ReconstructUsesNetworkScaleAndBuildsNoGraph) {
    const auto cfg = tiny_config();
    codec::JsccModel model(cfg, 24);
    ImageBatch b{2, 3, 32, 32, 255.0f, std::vector<float>(2 * 3072, 128.0f)};
    const auto out = model.reconstruct(b, codec::make_side_info(cfg, 2, 7.0), nullptr);
    EXPECT_EQ(out.peak, 1.0f);
    EXPECT_TRUE(out.same_shape(b));
    for (const auto& p : model.parameters()) EXPECT_TRUE(p.var.grad().empty() || p.var.grad()[0] == 0.0f);
}

TEST(Codec, ParameterNamesAreUniqueAndStable) {
    const auto cfg = tiny_config();
    codec::JsccModel a(cfg, 25), b(cfg, 26);
    std::set<std::string> names;
    ASSERT_EQ(a.parameters().size(), b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
        names.insert(a.parameters()[i].name);
    }
    EXPECT_EQ(names.size(), a.parameters().size());
    EXPECT_TRUE(names.count("decoder.conv.weight"));
    EXPECT_EQ(toy_config().dims.tokens, 64);
}

}  // namespace
