// Acceptance checks that run in minutes on one CPU core. Prints one line per
// criterion and exits nonzero when any of them fails. The desk-scale training
// criterion lives in acceptance_training.cpp.

#include "jscc/channel.hpp"
#include "jscc/checkpoint.hpp"
#include "jscc/codec.hpp"
#include "jscc/config.hpp"
#include "jscc/dwa.hpp"
#include "jscc/eval.hpp"
#include "jscc/separation.hpp"
#include "jscc/swin.hpp"
#include "jscc/trainer.hpp"

#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace jscc;
using jscc::testing::random_values;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            if (!pass) detail << "; ";
            pass = false;
            detail << what;
        }
    }
};

std::vector<float> values(const ag::Var& v) { return {v.value().begin(), v.value().end()}; }

Outcome dwa_exactness() {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    o.require(dwa_weight(0.0, 2, 0.25, 10) == 0.0, "delta=0");
    o.require(dwa_weight(0.25, 2, 0.25, 10) == 0.0, "delta=0.25");
    o.require(dwa_weight(0.75, 2, 0.25, 10) == 1.0, "delta=0.75");
    o.require(dwa_weight(2.0, 2, 0.25, 10) == 10.0, "delta=2");
    double worst = 0;
    for (int i = 0; i < 10; ++i)
        for (int a = 0; a < 10; ++a)
            for (int b = 0; b < 10; ++b)
                for (int g = 0; g < 10; ++g) {
                    const long double delta = -2.0L + 0.8L * i, alpha = 0.25L + 0.4L * a, beta = 0.1L * b,
                                      gamma = 0.5L + 2.0L * g;
                    long double ref = std::exp2l(alpha * (delta - beta)) - 1.0L;
                    ref = std::min(std::max(ref, 0.0L), gamma);
                    const double got = dwa_weight(static_cast<double>(delta), static_cast<double>(alpha),
                                                  static_cast<double>(beta), static_cast<double>(gamma));
                    worst = std::max(worst, static_cast<double>(std::abs(got - ref)));
                }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(worst <= 1e-9, "grid error " + std::to_string(worst));
    o.require(secs < 1.0, "runtime " + std::to_string(secs) + " s");
    if (o.pass) o.detail << "10^4 tuples, max error " << worst << ", anchors exact";
    return o;
}

Outcome power_and_channel() {
    Outcome o;
    std::mt19937_64 rng(1);
    std::normal_distribution<float> d(0.0f, 3.0f);
    std::vector<channel::Symbol> z(384);
    for (auto& s : z) s = {d(rng), d(rng)};
    for (std::size_t i = 96; i < 192; ++i) z[i] *= 5.0f;
    const double global = channel::mean_power(channel::normalize_power(z));
    o.require(std::abs(global - 1.0) <= 1e-6, "global power " + std::to_string(global));
    const auto blocks = channel::normalize_power_blocks(z, 4);
    double worst_block = 0;
    for (int b = 0; b < 4; ++b)
        worst_block = std::max(worst_block,
                               std::abs(channel::mean_power(std::span<const channel::Symbol>(blocks).subspan(b * 96, 96)) - 1.0));
    o.require(worst_block <= 1e-6, "block power off by " + std::to_string(worst_block));

    const std::size_t n = 1'000'000;
    const std::vector<channel::Symbol> ones(n, channel::Symbol(1.0f, 0.0f));
    double worst_db = 0;
    for (double snr : {4.0, 7.0, 10.0}) {
        channel::NoiseStream stream(static_cast<std::uint64_t>(snr));
        const auto y = channel::transmit_awgn(ones, channel::NoiseModel::from_snr_db(snr), stream);
        double np = 0;
        for (std::size_t i = 0; i < n; ++i) np += std::norm(std::complex<double>(y[i].real() - 1.0, y[i].imag()));
        worst_db = std::max(worst_db, std::abs(10 * std::log10(n / np) - snr));
    }
    o.require(worst_db <= 0.1, "empirical SNR off by " + std::to_string(worst_db) + " dB");
    if (o.pass) o.detail << "power error " << std::max(std::abs(global - 1.0), worst_block) << ", SNR error " << worst_db << " dB";
    return o;
}

Outcome dimension_contract() {
    Outcome o;
    for (int L : {4, 6}) {
        const auto cfg = reference_config(L);
        o.require(cfg.dims.source_dim == 3072, "N");
        o.require(cfg.dims.tokens == 64, "N_T");
        o.require(cfg.dims.features == 24, "N_F");
        std::vector<int> nf, expected;
        for (const auto& lv : cfg.dims.levels) nf.push_back(lv.features);
        for (int l = 1; l <= L; ++l) expected.push_back(24 * l / L);
        o.require(nf == expected, "n_f for L=" + std::to_string(L));
    }
    if (o.pass) o.detail << "N=3072, N_T=64, N_F=24, n_f={6,12,18,24} and {4,8,12,16,20,24}";
    return o;
}

Outcome mask_round_trip() {
    Outcome o;
    const auto cfg = toy_config();
    codec::JsccModel model(cfg, 7);
    const auto data = testing::synthetic_dataset(2, 3);
    const auto info = codec::make_side_info(cfg, cfg.grid.levels, 7.0);
    const auto t = model.transmit(codec::to_var(data.range(0, 2)), info, nullptr);
    o.require(values(t.received) == values(t.transmitted), "noiseless channel altered symbols");
    const auto padded = codec::pad_received(t.transmitted, cfg, cfg.grid.levels);
    o.require(values(padded) == values(t.padded), "padding differs from decoder input");
    const auto z = t.codeword;
    o.require(values(codec::pad_received(codec::mask_codeword(z, cfg, cfg.grid.levels), cfg, cfg.grid.levels)) == values(z),
              "mask/pad at l=L not bit-exact");

    // Gradient reaching the codeword through the channel at l=2.
    const ag::Shape shape{2 * cfg.dims.tokens, cfg.dims.features};
    auto zp = ag::parameter(shape, random_values(ag::numel(shape), 4));
    const auto side = codec::make_side_info(cfg, 2, 7.0);
    const auto tx = ag::power_normalize(codec::mask_codeword(zp, cfg, 2), 1);
    ag::backward(ag::mse(model.decode(codec::pad_received(tx, cfg, 2), side), codec::to_var(data.range(0, 2))));
    const int keep = cfg.dims.level(2).features;
    std::size_t nonzero_masked = 0, nonzero_kept = 0;
    for (int r = 0; r < shape[0]; ++r)
        for (int f = 0; f < cfg.dims.features; ++f) {
            const float g = zp.grad()[static_cast<std::size_t>(r) * cfg.dims.features + f];
            if (f >= keep && g != 0.0f) ++nonzero_masked;
            if (f < keep && g != 0.0f) ++nonzero_kept;
        }
    o.require(nonzero_masked == 0, std::to_string(nonzero_masked) + " masked coordinates got gradient");
    o.require(nonzero_kept > 0, "kept coordinates got no gradient");
    if (o.pass) o.detail << "bit-exact at l=L, masked gradient exactly zero";
    return o;
}

swin::FeatureMap random_map(int h, int w, int c, std::uint64_t seed, bool trainable) {
    const ag::Shape shape{h * w, c};
    auto v = random_values(ag::numel(shape), seed);
    return {trainable ? ag::parameter(shape, v) : ag::constant(shape, v), 1, h, w};
}

std::vector<double> apply_linear(const nn::Linear& lin, const std::vector<double>& in) {
    const int out = lin.out_features(), n = lin.in_features();
    std::vector<double> y(static_cast<std::size_t>(out));
    for (int j = 0; j < out; ++j) {
        double s = lin.bias().value()[j];
        for (int i = 0; i < n; ++i) s += in[i] * lin.weight().value()[static_cast<std::size_t>(i) * out + j];
        y[j] = s;
    }
    return y;
}

Outcome swin_correctness() {
    Outcome o;
    nn::Rng rng(8);
    swin::SwinBlockPair pair(32, 4, 16, 16, 8, 4, rng);
    pair.zero_residual_branches();
    const auto x = random_map(16, 16, 32, 9, false);
    const auto y = pair(x);
    double identity = 0;
    for (std::size_t i = 0; i < x.tokens.size(); ++i)
        identity = std::max(identity, static_cast<double>(std::abs(y.tokens.value()[i] - x.tokens.value()[i])));
    o.require(identity <= 1e-6, "identity error " + std::to_string(identity));

    // One window covering the whole map against dense attention.
    const int c = 8, heads = 2, side = 4, T = side * side, hd = c / heads;
    swin::SwinBlock block(c, heads, side, side, side, false, 4, rng);
    block.zero_residual_branches();
    auto pw = random_values(c * c, 16, 0.3f), pb = random_values(c, 17, 0.1f), bt = random_values(block.bias_table().size(), 18, 0.5f);
    std::copy(pw.begin(), pw.end(), block.proj().weight().mutable_value().begin());
    std::copy(pb.begin(), pb.end(), block.proj().bias().mutable_value().begin());
    std::copy(bt.begin(), bt.end(), block.bias_table().mutable_value().begin());
    const auto xs = random_map(side, side, c, 19, false);
    const auto ys = block(xs);
    const auto xv = values(xs.tokens);
    std::vector<std::vector<double>> q(T), k(T), v(T);
    for (int t = 0; t < T; ++t) {
        std::vector<double> row(xv.begin() + t * c, xv.begin() + (t + 1) * c);
        double mean = 0, var = 0;
        for (double a : row) mean += a / c;
        for (double a : row) var += (a - mean) * (a - mean) / c;
        for (double& a : row) a = (a - mean) / std::sqrt(var + 1e-5);
        const auto qkv = apply_linear(block.qkv(), row);
        q[t].assign(qkv.begin(), qkv.begin() + c);
        k[t].assign(qkv.begin() + c, qkv.begin() + 2 * c);
        v[t].assign(qkv.begin() + 2 * c, qkv.end());
    }
    double dense = 0;
    for (int i = 0; i < T; ++i) {
        std::vector<double> att(c, 0.0);
        for (int h = 0; h < heads; ++h) {
            std::vector<double> s(T);
            double mx = -INFINITY, zsum = 0;
            for (int j = 0; j < T; ++j) {
                double dot = 0;
                for (int e = 0; e < hd; ++e) dot += q[i][h * hd + e] * k[j][h * hd + e];
                const int dy = i / side - j / side + side - 1, dx = i % side - j % side + side - 1;
                s[j] = dot / std::sqrt(double(hd)) + bt[(dy * (2 * side - 1) + dx) * heads + h];
                mx = std::max(mx, s[j]);
            }
            for (double& a : s) zsum += a = std::exp(a - mx);
            for (int j = 0; j < T; ++j)
                for (int e = 0; e < hd; ++e) att[h * hd + e] += s[j] / zsum * v[j][h * hd + e];
        }
        const auto out = apply_linear(block.proj(), att);
        for (int e = 0; e < c; ++e) dense = std::max(dense, std::abs(ys.tokens.value()[i * c + e] - (xv[i * c + e] + out[e])));
    }
    o.require(dense <= 1e-5, "dense-attention error " + std::to_string(dense));

    // Gradient check on every parameter, re-drawn at O(0.3) scale so the
    // gradients sit well above the float32 rounding floor.
    swin::SwinBlockPair small(8, 2, 8, 8, 4, 4, rng);
    nn::ParameterList ps;
    small.collect("p", ps);
    std::uint64_t seed = 100;
    for (auto& p : ps) {
        auto w = random_values(p.var.size(), seed++, 0.3f);
        if (p.name.find("gamma") != std::string::npos)
            for (auto& a : w) a += 1.0f;
        std::copy(w.begin(), w.end(), p.var.mutable_value().begin());
    }
    auto xg = random_map(8, 8, 8, 21, true);
    const auto target = ag::constant(xg.tokens.shape(), random_values(xg.tokens.size(), 22));
    auto loss = [&] { return ag::mse(small(xg).tokens, target); };
    double grad = testing::check_gradient(loss, xg.tokens, 0.1, 128).relative_error;
    for (auto& p : ps) grad = std::max(grad, testing::check_gradient(loss, p.var, 0.1, 64).relative_error);
    o.require(grad <= 1e-3, "gradient relative error " + std::to_string(grad));
    if (o.pass) o.detail << "identity " << identity << ", dense " << dense << ", gradient " << grad;
    return o;
}

Outcome successive_refinement() {
    Outcome o;
    for (auto mode : {GridMode::varying_features, GridMode::varying_patches}) {
        auto cfg = toy_config();
        cfg.grid.mode = mode;
        cfg.model.scheme = Scheme::successive_refinement;
        cfg.dims = derive_dimensions(cfg.grid, cfg.model);
        codec::JsccModel model(cfg, 3);
        const auto data = testing::synthetic_dataset(3, 5);
        const auto images = codec::to_var(data.range(0, 3));
        const std::string tag = to_string(mode);
        for (int l = 1; l <= cfg.grid.levels; ++l) {
            channel::NoiseStream noise(static_cast<std::uint64_t>(l));
            const auto t = model.transmit(images, codec::make_side_info(cfg, l, 7.0), &noise);
            const int len = cfg.dims.level(l).reals(), bl = len / l;
            o.require(codec::power_blocks(cfg, l) == l, tag + " block count at l=" + std::to_string(l));
            for (int r = 0; r < 3; ++r)
                for (int b = 0; b < l; ++b) {
                    double p = 0;
                    for (int i = 0; i < bl; ++i) p += std::pow(t.transmitted.value()[r * len + b * bl + i], 2);
                    if (std::abs(p / (bl / 2) - 1.0) > 1e-6) o.require(false, tag + " block power at l=" + std::to_string(l));
                }
            bool finite = t.output.shape() == ag::Shape{3, 3, 32, 32};
            for (float v : t.output.value()) finite = finite && std::isfinite(v);
            o.require(finite, tag + " decode failed at l=" + std::to_string(l));
            if (l < cfg.grid.levels) {
                const auto a = codec::mask_positions(cfg, l), b = codec::mask_positions(cfg, l + 1);
                const bool nested = std::equal(a.begin(), a.end(), b.begin()) &&
                                    std::set<std::int32_t>(b.begin(), b.end()).size() == b.size();
                o.require(nested, tag + " masks not nested at l=" + std::to_string(l));
            }
        }
    }
    if (o.pass) o.detail << "both grid modes, l=1..4";
    return o;
}

Outcome baseline_budget() {
    Outcome o;
    using separation::capacity_bits;
    const auto b = capacity_bits(Rational{1, 8}, 3072, 7.0);
    const auto ref = static_cast<std::uint64_t>(std::floor(384.0L * std::log2l(1.0L + std::pow(10.0L, 0.7L))));
    o.require(b == 993 && b == ref, "budget " + std::to_string(b));
    for (int k = 1; k < 8; ++k)
        for (double snr = -5; snr < 20; snr += 0.25) {
            const auto here = capacity_bits(Rational{k, 16}, 3072, snr);
            if (capacity_bits(Rational{k + 1, 16}, 3072, snr) < here || capacity_bits(Rational{k, 16}, 3072, snr + 0.25) < here)
                o.require(false, "not monotone at k=" + std::to_string(k));
        }
    if (o.pass) o.detail << "rho=1/8, N=3072, 7 dB -> " << b << " bits; monotone";
    return o;
}

Outcome reproducibility() {
    Outcome o;
    auto cfg = toy_config();
    cfg.train.max_epochs = 2;
    cfg.train.batch_size = 16;
    const auto train_set = testing::synthetic_dataset(48, 1), val_set = testing::synthetic_dataset(16, 2);
    UpperBoundRegistry reg;
    for (int l = 1; l <= cfg.grid.levels; ++l)
        reg.set({cfg.grid.rho(l), cfg.train.snr_val(), bound_hash(cfg), 14.0 + l, Provenance::external, "fixed"});
    const auto dir = testing::temp_dir("acceptance-repro");
    TrainOptions opt;
    opt.registry = &reg;
    opt.out_dir = dir;
    opt.run_name = "a";
    const auto a = train(cfg, train_set, val_set, opt);
    opt.run_name = "b";
    const auto b = train(cfg, train_set, val_set, opt);
    o.require(a.log.to_jsonl() == b.log.to_jsonl(), "train logs differ");
    o.require(TrainLog::load(a.run_dir / "train_log.jsonl").to_jsonl() == TrainLog::load(b.run_dir / "train_log.jsonl").to_jsonl(),
              "train log files differ");

    SweepSpec spec;
    spec.checkpoint = a.run_dir / "best.ckpt";
    for (int l = 1; l <= cfg.grid.levels; ++l) spec.rhos.push_back(cfg.grid.rho(l));
    spec.snrs_db = {5.0, 9.0};
    spec.repetitions = 2;
    spec.seed = 11;
    spec.test_set = "synthetic";
    const auto test_set = testing::synthetic_dataset(16, 3);
    const auto t1 = run_sweep(spec, test_set, &cfg), t2 = run_sweep(spec, test_set, &cfg);
    o.require(t1 == t2 && t1.to_csv() == t2.to_csv(), "sweep tables differ");
    if (o.pass) o.detail << a.log.records().size() << "-epoch logs identical, " << t1.rows.size() << "-row tables identical";
    return o;
}

}  // namespace

int main() {
    tune_allocator();
    const std::vector<std::pair<int, std::pair<std::string, std::function<Outcome()>>>> checks{
        {1, {"DWA exactness", dwa_exactness}},
        {2, {"power normalization and AWGN channel", power_and_channel}},
        {3, {"dimension contract", dimension_contract}},
        {4, {"mask/pad round trip", mask_round_trip}},
        {5, {"Swin correctness", swin_correctness}},
        {7, {"successive refinement", successive_refinement}},
        {8, {"baseline bit budget", baseline_budget}},
        {9, {"reproducibility", reproducibility}},
    };
    int failures = 0;
    for (const auto& [id, check] : checks) {
        Outcome r;
        try {
            r = check.second();
        } catch (const std::exception& e) {
            r.require(false, std::string("exception: ") + e.what());
        }
        std::cout << "criterion " << id << " " << (r.pass ? "PASS" : "FAIL") << ": " << check.first << " ("
                  << r.detail.str() << ")" << std::endl;
        failures += r.pass ? 0 : 1;
    }
    std::cout << "criterion 6: run by acceptance_training" << std::endl;
    return failures == 0 ? 0 : 1;
}
