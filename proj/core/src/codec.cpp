#include "jscc/codec.hpp"

#include <stdexcept>
#include <string>

namespace jscc::codec {

namespace {

ag::Index make_index(std::vector<std::int32_t> v) {
    return std::make_shared<const std::vector<std::int32_t>>(std::move(v));
}

void check_level(const ExperimentConfig& cfg, int l) {
    if (l < 1 || l > cfg.grid.levels) {
        throw std::out_of_range("bandwidth index l=" + std::to_string(l) + " outside [1, " +
                                std::to_string(cfg.grid.levels) + "]");
    }
}

std::vector<swin::SwinBlockPair> make_stage(const ExperimentConfig& cfg, int stage, nn::Rng& rng) {
    const auto& m = cfg.model;
    std::vector<swin::SwinBlockPair> pairs;
    const int h = cfg.dims.stage_rows[static_cast<std::size_t>(stage)];
    const int w = cfg.dims.stage_cols[static_cast<std::size_t>(stage)];
    for (int p = 0; p < m.blocks[static_cast<std::size_t>(stage)] / 2; ++p)
        pairs.emplace_back(m.embed_dim, m.heads[static_cast<std::size_t>(stage)], h, w, m.window, m.mlp_ratio, rng);
    return pairs;
}

}  // namespace

SideInfo make_side_info(const ExperimentConfig& cfg, int l, double snr_db) {
    check_level(cfg, l);
    return SideInfo{snr_db, l, cfg.grid.rho(l).value(), cfg.model.scheme};
}

SideInfoEmbedding::SideInfoEmbedding(int side_dim, bool with_rho, nn::Rng& rng)
    : with_rho_(with_rho), layer_(with_rho ? 2 : 1, side_dim, rng) {}

ag::Var SideInfoEmbedding::operator()(const SideInfo& info) const {
    std::vector<float> in{static_cast<float>(info.snr_db)};
    if (with_rho_) in.push_back(static_cast<float>(info.rho));
    return layer_(ag::constant({1, inputs()}, std::move(in)));
}

void SideInfoEmbedding::collect(const std::string& prefix, nn::ParameterList& out) const {
    layer_.collect(prefix, out);
}

ag::Var broadcast_rows(const ag::Var& row, int rows) {
    return ag::gather_rows(row, 1, make_index(std::vector<std::int32_t>(static_cast<std::size_t>(rows), 0)));
}

// ---------------------------------------------------------------------------

Encoder::Encoder(const ExperimentConfig& cfg, nn::Rng& rng) {
    const auto& m = cfg.model;
    embed_ = swin::PatchEmbedding(m.channels, m.height, m.width, m.patch_size, m.embed_dim, rng);
    concat_width_ = m.embed_dim + m.side_dim;
    fuse_ = nn::Linear(concat_width_, m.embed_dim, rng);
    for (int i = 0; i < m.stages(); ++i) {
        if (i == 0) {
            merges_.emplace_back(std::nullopt);
        } else {
            merges_.emplace_back(swin::PatchMerging(m.embed_dim, cfg.dims.stage_rows[static_cast<std::size_t>(i - 1)],
                                                    cfg.dims.stage_cols[static_cast<std::size_t>(i - 1)], rng));
        }
        stages_.push_back(make_stage(cfg, i, rng));
    }
    project_ = nn::Linear(m.embed_dim, cfg.dims.features, rng);
}

ag::Var Encoder::operator()(const ag::Var& images, const ag::Var& u) const {
    // Pixels enter centered on [-1, 1].
    const ag::Var centered =
        ag::add(ag::scale(images, 2.0f), ag::constant(images.shape(), std::vector<float>(images.size(), -1.0f)));
    swin::FeatureMap x = embed_(centered);
    x.tokens = fuse_(ag::concat_cols(x.tokens, broadcast_rows(u, x.tokens.rows())));
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        if (merges_[i]) x = (*merges_[i])(x);
        for (const auto& pair : stages_[i]) x = pair(x);
    }
    return project_(x.tokens);
}

void Encoder::collect(const std::string& prefix, nn::ParameterList& out) const {
    embed_.collect(prefix + ".embed", out);
    fuse_.collect(prefix + ".fuse", out);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        const std::string s = prefix + ".stage" + std::to_string(i + 1);
        if (merges_[i]) merges_[i]->collect(s + ".merge", out);
        for (std::size_t p = 0; p < stages_[i].size(); ++p) stages_[i][p].collect(s + ".pair" + std::to_string(p), out);
    }
    project_.collect(prefix + ".project", out);
}

// ---------------------------------------------------------------------------

Decoder::Decoder(const ExperimentConfig& cfg, nn::Rng& rng)
    : channels_(cfg.model.channels),
      height_(cfg.model.height),
      width_(cfg.model.width),
      token_rows_(cfg.dims.token_rows),
      token_cols_(cfg.dims.token_cols),
      kernel_(cfg.model.head_kernel) {
    const auto& m = cfg.model;
    concat_width_ = cfg.dims.features + m.side_dim;
    fuse_ = nn::Linear(concat_width_, m.embed_dim, rng);
    for (int i = m.stages() - 1; i >= 0; --i) {
        stages_.push_back(make_stage(cfg, i, rng));
        divisions_.emplace_back(m.embed_dim, cfg.dims.stage_rows[static_cast<std::size_t>(i)],
                                cfg.dims.stage_cols[static_cast<std::size_t>(i)], rng);
    }

    conv_ = nn::Linear(kernel_ * kernel_ * m.embed_dim, channels_, rng);
    for (float& b : conv_.bias().mutable_value()) b = 0.5f;

    // Token-major {H*W, C} to CHW.
    std::vector<std::int32_t> chw(static_cast<std::size_t>(channels_) * height_ * width_);
    for (int c = 0; c < channels_; ++c)
        for (int p = 0; p < height_ * width_; ++p) chw[static_cast<std::size_t>(c * height_ * width_ + p)] = p * channels_ + c;
    layout_index_ = make_index(std::move(chw));
}

ag::Var Decoder::operator()(const ag::Var& y, const ag::Var& u) const {
    const int tokens = token_rows_ * token_cols_;
    if (y.cols() != concat_width_ - u.cols() || y.rows() % tokens) {
        throw std::invalid_argument("decoder: expected padded codeword {B*" + std::to_string(tokens) + ", " +
                                    std::to_string(concat_width_ - u.cols()) + "}, got " + ag::to_string(y.shape()));
    }
    const int batch = y.rows() / tokens;
    swin::FeatureMap x{fuse_(ag::concat_cols(y, broadcast_rows(u, y.rows()))), batch, token_rows_, token_cols_};
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        for (const auto& pair : stages_[i]) x = pair(x);
        x = divisions_[i](x);
    }
    if (x.height != height_ || x.width != width_)
        throw std::logic_error("decoder: upsampled map does not match the image size");
    ag::Var out = ag::conv2d_same(x.tokens, conv_.weight(), conv_.bias(), batch, height_, width_, kernel_);
    ag::Var image = ag::gather(out, batch, layout_index_, {batch, channels_, height_, width_});
    return ag::clamp(image, 0.0f, 1.0f);
}

void Decoder::collect(const std::string& prefix, nn::ParameterList& out) const {
    fuse_.collect(prefix + ".fuse", out);
    const int n = static_cast<int>(stages_.size());
    for (int i = 0; i < n; ++i) {
        const std::string s = prefix + ".stage" + std::to_string(n - i);
        for (std::size_t p = 0; p < stages_[static_cast<std::size_t>(i)].size(); ++p)
            stages_[static_cast<std::size_t>(i)][p].collect(s + ".pair" + std::to_string(p), out);
        divisions_[static_cast<std::size_t>(i)].collect(s + ".divide", out);
    }
    conv_.collect(prefix + ".conv", out);
}

// ---------------------------------------------------------------------------

std::vector<std::int32_t> mask_positions(const ExperimentConfig& cfg, int l) {
    check_level(cfg, l);
    const auto& d = cfg.dims;
    const int nt = d.tokens, nf = d.features;
    const auto& lv = d.level(l);
    std::vector<std::int32_t> pos;
    pos.reserve(static_cast<std::size_t>(lv.reals()));
    const bool features = cfg.grid.mode == GridMode::varying_features;

    if (cfg.model.scheme == Scheme::successive_refinement) {
        const auto& first = d.level(1);
        if (features) {
            const int f1 = first.features;
            for (int b = 0; b < l; ++b)
                for (int t = 0; t < nt; ++t)
                    for (int f = 0; f < f1; ++f) pos.push_back(t * nf + b * f1 + f);
        } else {
            for (int j = 0; j < l * first.tokens * nf; ++j) pos.push_back(j);
        }
    } else if (features) {
        for (int t = 0; t < nt; ++t)
            for (int f = 0; f < lv.features; ++f) pos.push_back(t * nf + f);
    } else {
        for (int j = 0; j < lv.tokens * nf; ++j) pos.push_back(j);
    }
    if (static_cast<int>(pos.size()) != lv.reals()) throw std::logic_error("mask_positions: length mismatch");
    return pos;
}

ag::Var mask_codeword(const ag::Var& z, const ExperimentConfig& cfg, int l) {
    const auto& d = cfg.dims;
    if (z.cols() != d.features || z.rows() % d.tokens) {
        throw std::invalid_argument("mask_codeword: expected {B*" + std::to_string(d.tokens) + ", " +
                                    std::to_string(d.features) + "}, got " + ag::to_string(z.shape()));
    }
    const int batch = z.rows() / d.tokens;
    auto pos = mask_positions(cfg, l);
    const int len = static_cast<int>(pos.size());
    return ag::gather(z, batch, make_index(std::move(pos)), {batch, len});
}

ag::Var pad_received(const ag::Var& y, const ExperimentConfig& cfg, int l) {
    check_level(cfg, l);
    const auto& d = cfg.dims;
    const int len = d.level(l).reals();
    if (y.cols() != len) {
        throw std::invalid_argument("pad_received: level " + std::to_string(l) + " carries " + std::to_string(len / 2) +
                                    " complex symbols, got " + std::to_string(y.cols()) + " reals");
    }
    const auto pos = mask_positions(cfg, l);
    std::vector<std::int32_t> inv(static_cast<std::size_t>(d.tokens) * d.features, -1);
    for (std::size_t j = 0; j < pos.size(); ++j) inv[static_cast<std::size_t>(pos[j])] = static_cast<std::int32_t>(j);
    const int batch = y.rows();
    return ag::gather(y, batch, make_index(std::move(inv)), {batch * d.tokens, d.features});
}

int power_blocks(const ExperimentConfig& cfg, int l) {
    check_level(cfg, l);
    return cfg.model.scheme == Scheme::successive_refinement ? l : 1;
}

// ---------------------------------------------------------------------------

JsccModel::JsccModel(const ExperimentConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    nn::Rng rng(init_seed);
    shared_side_ = cfg.model.scheme == Scheme::adaptive_bandwidth;
    enc_side_ = SideInfoEmbedding(cfg.model.side_dim, shared_side_, rng);
    if (!shared_side_) dec_side_ = SideInfoEmbedding(cfg.model.side_dim, true, rng);
    encoder_ = Encoder(cfg, rng);
    decoder_ = Decoder(cfg, rng);

    enc_side_.collect(shared_side_ ? "side" : "side.encoder", params_);
    if (!shared_side_) dec_side_.collect("side.decoder", params_);
    encoder_.collect("encoder", params_);
    decoder_.collect("decoder", params_);
}

ag::Var JsccModel::encoder_side(const SideInfo& info) const { return enc_side_(info); }

ag::Var JsccModel::decoder_side(const SideInfo& info) const {
    return shared_side_ ? enc_side_(info) : dec_side_(info);
}

ag::Var JsccModel::encode(const ag::Var& images, const SideInfo& info) const {
    return encoder_(images, encoder_side(info));
}

ag::Var JsccModel::decode(const ag::Var& padded, const SideInfo& info) const {
    return decoder_(padded, decoder_side(info));
}

Transmission JsccModel::transmit(const ag::Var& images, const SideInfo& info, channel::NoiseStream* noise) const {
    Transmission t;
    t.codeword = encode(images, info);
    t.transmitted = ag::power_normalize(mask_codeword(t.codeword, cfg_, info.l), power_blocks(cfg_, info.l));
    t.received = t.transmitted;
    const double variance = channel::NoiseModel::from_snr_db(info.snr_db).variance;
    if (noise && variance > 0.0) {
        std::vector<float> w(t.transmitted.size());
        noise->fill(w, variance);
        t.received = ag::add(t.transmitted, ag::constant(t.transmitted.shape(), std::move(w)));
    }
    t.padded = pad_received(t.received, cfg_, info.l);
    t.output = decode(t.padded, info);
    return t;
}

ImageBatch JsccModel::reconstruct(const ImageBatch& images, const SideInfo& info, channel::NoiseStream* noise) const {
    ag::NoGradGuard guard;
    return from_var(transmit(to_var(images), info, noise).output);
}

std::vector<ag::Var> JsccModel::parameter_vars() const {
    std::vector<ag::Var> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.var);
    return out;
}

std::size_t JsccModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.size();
    return n;
}

ag::Var to_var(const ImageBatch& images) {
    const ag::Shape shape{images.count, images.channels, images.height, images.width};
    if (images.peak == 1.0f) return ag::constant(shape, images.pixels);
    return ag::constant(shape, images.rescaled(1.0f).pixels);
}

ImageBatch from_var(const ag::Var& images, float peak) {
    const auto& s = images.shape();
    if (s.size() != 4) throw std::invalid_argument("from_var: expected {B, C, H, W}, got " + ag::to_string(s));
    ImageBatch b;
    b.count = s[0];
    b.channels = s[1];
    b.height = s[2];
    b.width = s[3];
    b.peak = 1.0f;
    b.pixels.assign(images.value().begin(), images.value().end());
    return peak == 1.0f ? b : b.rescaled(peak);
}

}  // namespace jscc::codec
