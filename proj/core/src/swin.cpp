#include "jscc/swin.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace jscc::swin {

namespace {

ag::Index make_index(std::vector<std::int32_t> v) {
    return std::make_shared<const std::vector<std::int32_t>>(std::move(v));
}

void expect_shape(const FeatureMap& x, int height, int width, const char* who) {
    if (x.height != height || x.width != width) {
        throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(height) + "x" +
                                    std::to_string(width) + " tokens, got " + std::to_string(x.height) + "x" +
                                    std::to_string(x.width));
    }
    if (x.tokens.rows() != x.batch * x.height * x.width)
        throw std::invalid_argument(std::string(who) + ": token count does not match batch * height * width");
}

}  // namespace

WindowLayout make_window_layout(int height, int width, int window, int shift) {
    if (height <= 0 || width <= 0 || window <= 0) throw std::invalid_argument("window layout: non-positive size");
    WindowLayout L;
    L.height = height;
    L.width = width;
    L.window = window;
    L.shift = shift;
    if (height <= window && width <= window) {
        L.window = std::max(height, width);
        L.shift = 0;
    }
    if (L.shift < 0 || L.shift >= L.window) throw std::invalid_argument("window layout: shift must lie in [0, window)");
    const int ew = L.window;
    const int s = L.shift;
    L.padded_height = (height + ew - 1) / ew * ew;
    L.padded_width = (width + ew - 1) / ew * ew;
    const int nwh = L.padded_height / ew;
    const int nww = L.padded_width / ew;
    L.windows = nwh * nww;
    L.tokens_per_window = ew * ew;
    const int T = L.tokens_per_window;
    const int Hp = L.padded_height;
    const int Wp = L.padded_width;

    std::vector<std::int32_t> part(static_cast<std::size_t>(L.windows) * T);
    for (int wy = 0; wy < nwh; ++wy)
        for (int wx = 0; wx < nww; ++wx)
            for (int i = 0; i < ew; ++i)
                for (int j = 0; j < ew; ++j) {
                    const int yp = (wy * ew + i + s) % Hp;
                    const int xp = (wx * ew + j + s) % Wp;
                    part[static_cast<std::size_t>((wy * nww + wx) * T + i * ew + j)] =
                        (yp < height && xp < width) ? yp * width + xp : -1;
                }

    std::vector<std::int32_t> rev(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int ys = (y - s + Hp) % Hp;
            const int xs = (x - s + Wp) % Wp;
            rev[static_cast<std::size_t>(y * width + x)] =
                ((ys / ew) * nww + xs / ew) * T + (ys % ew) * ew + xs % ew;
        }

    if (s > 0) {
        auto region = [ew, s](int c, int extent) { return c < extent - ew ? 0 : (c < extent - s ? 1 : 2); };
        std::vector<float> mask(static_cast<std::size_t>(L.windows) * T * T, 0.0f);
        std::vector<int> id(static_cast<std::size_t>(T));
        for (int wy = 0; wy < nwh; ++wy)
            for (int wx = 0; wx < nww; ++wx) {
                for (int i = 0; i < ew; ++i)
                    for (int j = 0; j < ew; ++j)
                        id[static_cast<std::size_t>(i * ew + j)] = region(wy * ew + i, Hp) * 3 + region(wx * ew + j, Wp);
                float* m = mask.data() + static_cast<std::size_t>(wy * nww + wx) * T * T;
                for (int a = 0; a < T; ++a)
                    for (int b = 0; b < T; ++b) m[a * T + b] = id[a] == id[b] ? 0.0f : -std::numeric_limits<float>::infinity();
            }
        L.mask = std::make_shared<const std::vector<float>>(std::move(mask));
    }
    L.partition = make_index(std::move(part));
    L.reverse = make_index(std::move(rev));
    return L;
}

ag::Index relative_position_index(int window) {
    const int T = window * window;
    const int span = 2 * window - 1;
    std::vector<std::int32_t> idx(static_cast<std::size_t>(T) * T);
    for (int a = 0; a < T; ++a)
        for (int b = 0; b < T; ++b) {
            const int dy = a / window - b / window + window - 1;
            const int dx = a % window - b % window + window - 1;
            idx[static_cast<std::size_t>(a * T + b)] = dy * span + dx;
        }
    return make_index(std::move(idx));
}

ag::Var window_partition(const FeatureMap& x, const WindowLayout& layout) {
    expect_shape(x, layout.height, layout.width, "window_partition");
    return ag::gather_rows(x.tokens, x.batch, layout.partition);
}

FeatureMap window_reverse(const ag::Var& windows, int batch, const WindowLayout& layout) {
    return {ag::gather_rows(windows, batch, layout.reverse), batch, layout.height, layout.width};
}

// ---------------------------------------------------------------------------

PatchEmbedding::PatchEmbedding(int channels, int height, int width, int patch, int dim, nn::Rng& rng)
    : channels_(channels), height_(height), width_(width), patch_(patch) {
    if (patch <= 0 || height % patch || width % patch) {
        throw std::invalid_argument("patch embedding: image " + std::to_string(height) + "x" + std::to_string(width) +
                                    " not divisible by patch size " + std::to_string(patch));
    }
    const int th = height / patch;
    const int tw = width / patch;
    const int feat = channels * patch * patch;
    std::vector<std::int32_t> idx(static_cast<std::size_t>(th) * tw * feat);
    std::size_t k = 0;
    for (int ty = 0; ty < th; ++ty)
        for (int tx = 0; tx < tw; ++tx)
            for (int c = 0; c < channels; ++c)
                for (int py = 0; py < patch; ++py)
                    for (int px = 0; px < patch; ++px)
                        idx[k++] = c * height * width + (ty * patch + py) * width + tx * patch + px;
    index_ = make_index(std::move(idx));
    proj_ = nn::Linear(feat, dim, rng);
}

FeatureMap PatchEmbedding::operator()(const ag::Var& images) const {
    const auto& s = images.shape();
    if (s.size() != 4 || s[1] != channels_ || s[2] != height_ || s[3] != width_) {
        throw std::invalid_argument("patch embedding: expected images {B," + std::to_string(channels_) + "," +
                                    std::to_string(height_) + "," + std::to_string(width_) + "}, got " +
                                    ag::to_string(s));
    }
    const int batch = s[0];
    const int tokens = out_height() * out_width();
    ag::Var patches = ag::gather(images, batch, index_, {batch * tokens, channels_ * patch_ * patch_});
    return {proj_(patches), batch, out_height(), out_width()};
}

void PatchEmbedding::collect(const std::string& prefix, nn::ParameterList& out) const {
    proj_.collect(prefix + ".proj", out);
}

// ---------------------------------------------------------------------------

SwinBlock::SwinBlock(int dim, int heads, int height, int width, int window, bool shifted, int mlp_ratio, nn::Rng& rng)
    : dim_(dim), heads_(heads) {
    if (heads <= 0 || dim % heads) throw std::invalid_argument("swin block: dim not divisible by heads");
    layout_ = make_window_layout(height, width, window, shifted ? window / 2 : 0);
    const int ew = layout_.window;
    attention_.heads = heads;
    attention_.tokens = layout_.tokens_per_window;
    attention_.windows_per_image = layout_.windows;
    attention_.relative_index = relative_position_index(ew);
    attention_.mask = layout_.mask;

    norm1_ = nn::LayerNorm(dim);
    qkv_ = nn::Linear(dim, 3 * dim, rng);
    proj_ = nn::Linear(dim, dim, rng);
    const int span = 2 * ew - 1;
    bias_table_ = ag::parameter({span * span, heads}, nn::trunc_normal(static_cast<std::size_t>(span * span * heads), 0.02f, rng));
    norm2_ = nn::LayerNorm(dim);
    fc1_ = nn::Linear(dim, mlp_ratio * dim, rng);
    fc2_ = nn::Linear(mlp_ratio * dim, dim, rng);
}

FeatureMap SwinBlock::operator()(const FeatureMap& x) const {
    expect_shape(x, layout_.height, layout_.width, "swin block");
    if (x.channels() != dim_) {
        throw std::invalid_argument("swin block: expected " + std::to_string(dim_) + " channels, got " +
                                    std::to_string(x.channels()));
    }
    // Attention branch: LN, pad + shift + partition, W-MSA, merge back.
    FeatureMap normed{norm1_(x.tokens), x.batch, x.height, x.width};
    ag::Var windows = window_partition(normed, layout_);
    ag::Var attended = proj_(ag::window_attention(qkv_(windows), bias_table_, attention_));
    ag::Var h = ag::add(x.tokens, window_reverse(attended, x.batch, layout_).tokens);

    ag::Var mlp = fc2_(ag::gelu(fc1_(norm2_(h))));
    return {ag::add(h, mlp), x.batch, x.height, x.width};
}

void SwinBlock::collect(const std::string& prefix, nn::ParameterList& out) const {
    norm1_.collect(prefix + ".norm1", out);
    qkv_.collect(prefix + ".qkv", out);
    proj_.collect(prefix + ".proj", out);
    out.push_back({prefix + ".relative_bias", bias_table_});
    norm2_.collect(prefix + ".norm2", out);
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
}

void SwinBlock::zero_residual_branches() {
    proj_.zero();
    fc2_.zero();
}

SwinBlockPair::SwinBlockPair(int dim, int heads, int height, int width, int window, int mlp_ratio, nn::Rng& rng)
    : dim_(dim),
      regular_(dim, heads, height, width, window, false, mlp_ratio, rng),
      shifted_(dim, heads, height, width, window, true, mlp_ratio, rng) {}

FeatureMap SwinBlockPair::operator()(const FeatureMap& x) const { return shifted_(regular_(x)); }

void SwinBlockPair::collect(const std::string& prefix, nn::ParameterList& out) const {
    regular_.collect(prefix + ".w_msa", out);
    shifted_.collect(prefix + ".sw_msa", out);
}

void SwinBlockPair::zero_residual_branches() {
    regular_.zero_residual_branches();
    shifted_.zero_residual_branches();
}

// ---------------------------------------------------------------------------

PatchMerging::PatchMerging(int dim, int height, int width, nn::Rng& rng) : height_(height), width_(width) {
    if (height % 2 || width % 2) {
        throw std::invalid_argument("patch merging: odd token grid " + std::to_string(height) + "x" + std::to_string(width));
    }
    const int oh = height / 2;
    const int ow = width / 2;
    std::vector<std::int32_t> idx(static_cast<std::size_t>(oh) * ow * 4);
    constexpr int dy[4] = {0, 1, 0, 1};
    constexpr int dx[4] = {0, 0, 1, 1};
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int k = 0; k < 4; ++k)
                idx[static_cast<std::size_t>((y * ow + x) * 4 + k)] = (2 * y + dy[k]) * width + 2 * x + dx[k];
    index_ = make_index(std::move(idx));
    reduce_ = nn::Linear(4 * dim, dim, rng);
}

FeatureMap PatchMerging::operator()(const FeatureMap& x) const {
    expect_shape(x, height_, width_, "patch merging");
    const int c = x.channels();
    const int rows = x.batch * (height_ / 2) * (width_ / 2);
    ag::Var grouped = ag::reshape(ag::gather_rows(x.tokens, x.batch, index_), {rows, 4 * c});
    return {reduce_(grouped), x.batch, height_ / 2, width_ / 2};
}

void PatchMerging::collect(const std::string& prefix, nn::ParameterList& out) const {
    reduce_.collect(prefix + ".reduce", out);
}

PatchDivision::PatchDivision(int dim, int height, int width, nn::Rng& rng) : height_(height), width_(width) {
    const int oh = 2 * height;
    const int ow = 2 * width;
    std::vector<std::int32_t> idx(static_cast<std::size_t>(oh) * ow);
    for (int Y = 0; Y < oh; ++Y)
        for (int X = 0; X < ow; ++X)
            idx[static_cast<std::size_t>(Y * ow + X)] = ((Y / 2) * width + X / 2) * 4 + (Y % 2) * 2 + X % 2;
    index_ = make_index(std::move(idx));
    expand_ = nn::Linear(dim, 4 * dim, rng);
}

FeatureMap PatchDivision::operator()(const FeatureMap& x) const {
    expect_shape(x, height_, width_, "patch division");
    const int c = x.channels();
    ag::Var expanded = ag::reshape(expand_(x.tokens), {x.batch * height_ * width_ * 4, c});
    return {ag::gather_rows(expanded, x.batch, index_), x.batch, 2 * height_, 2 * width_};
}

void PatchDivision::collect(const std::string& prefix, nn::ParameterList& out) const {
    expand_.collect(prefix + ".expand", out);
}

}  // namespace jscc::swin
