#pragma once

// Windowed-attention transformer primitives: patch embedding, the W-MSA /
// SW-MSA block pair, 2x2 patch merging and pixel-shuffle patch division.
//
// Feature maps are channels-last token matrices: row (b, y, x) of a
// {batch * height * width, channels} var.

#include "jscc/autograd.hpp"
#include "jscc/nn.hpp"

#include <memory>
#include <vector>

namespace jscc::swin {

struct FeatureMap {
    ag::Var tokens;
    int batch = 0;
    int height = 0;
    int width = 0;

    int channels() const { return tokens.cols(); }
};

/// Token placement for one (padded, optionally cyclic-shifted) window grid.
struct WindowLayout {
    int height = 0;
    int width = 0;
    int window = 0;  // effective window edge
    int shift = 0;
    int padded_height = 0;
    int padded_width = 0;
    int windows = 0;
    int tokens_per_window = 0;
    ag::Index partition;  // windows*T entries: source token row or -1 for padding
    ag::Index reverse;    // height*width entries into the partitioned rows
    std::shared_ptr<const std::vector<float>> mask;  // windows*T*T, only when shifted
};

/// Builds the layout. When the whole map fits inside one window the window
/// shrinks to the map and the shift is disabled.
WindowLayout make_window_layout(int height, int width, int window, int shift);

/// {T*T} indices into a (2w-1)^2-row relative position bias table.
ag::Index relative_position_index(int window);

/// {batch*windows*T, C}
ag::Var window_partition(const FeatureMap& x, const WindowLayout& layout);
FeatureMap window_reverse(const ag::Var& windows, int batch, const WindowLayout& layout);

class PatchEmbedding {
public:
    PatchEmbedding() = default;
    PatchEmbedding(int channels, int height, int width, int patch, int dim, nn::Rng& rng);

    /// images: {B, C, H, W}.
    FeatureMap operator()(const ag::Var& images) const;
    void collect(const std::string& prefix, nn::ParameterList& out) const;

    int out_height() const { return height_ / patch_; }
    int out_width() const { return width_ / patch_; }

private:
    int channels_ = 0, height_ = 0, width_ = 0, patch_ = 0;
    ag::Index index_;
    nn::Linear proj_;
};

class SwinBlock {
public:
    SwinBlock() = default;
    SwinBlock(int dim, int heads, int height, int width, int window, bool shifted, int mlp_ratio, nn::Rng& rng);

    FeatureMap operator()(const FeatureMap& x) const;
    void collect(const std::string& prefix, nn::ParameterList& out) const;

    /// Zero the attention output projection and the second MLP layer so both
    /// residual branches vanish.
    void zero_residual_branches();

    const WindowLayout& layout() const { return layout_; }
    ag::Var& bias_table() { return bias_table_; }

    // Exposed for tests that rebuild attention by hand.
    const nn::LayerNorm& norm1() const { return norm1_; }
    nn::Linear& qkv() { return qkv_; }
    nn::Linear& proj() { return proj_; }
    int heads() const { return heads_; }

private:
    int dim_ = 0;
    int heads_ = 0;
    WindowLayout layout_;
    ag::AttentionLayout attention_;
    nn::LayerNorm norm1_;
    nn::Linear qkv_;
    nn::Linear proj_;
    ag::Var bias_table_;
    nn::LayerNorm norm2_;
    nn::Linear fc1_;
    nn::Linear fc2_;
};

/// Regular-window block followed by its shifted-window partner.
class SwinBlockPair {
public:
    SwinBlockPair() = default;
    SwinBlockPair(int dim, int heads, int height, int width, int window, int mlp_ratio, nn::Rng& rng);

    FeatureMap operator()(const FeatureMap& x) const;
    void collect(const std::string& prefix, nn::ParameterList& out) const;
    void zero_residual_branches();

    SwinBlock& regular() { return regular_; }
    SwinBlock& shifted() { return shifted_; }

private:
    int dim_ = 0;
    SwinBlock regular_;
    SwinBlock shifted_;
};

/// 2x2 neighbour concatenation followed by a 4c -> c linear reduction.
class PatchMerging {
public:
    PatchMerging() = default;
    PatchMerging(int dim, int height, int width, nn::Rng& rng);

    FeatureMap operator()(const FeatureMap& x) const;
    void collect(const std::string& prefix, nn::ParameterList& out) const;

private:
    int height_ = 0, width_ = 0;
    ag::Index index_;
    nn::Linear reduce_;
};

/// c -> 4c linear expansion followed by a factor-2 pixel shuffle.
class PatchDivision {
public:
    PatchDivision() = default;
    PatchDivision(int dim, int height, int width, nn::Rng& rng);

    FeatureMap operator()(const FeatureMap& x) const;
    void collect(const std::string& prefix, nn::ParameterList& out) const;

private:
    int height_ = 0, width_ = 0;
    ag::Index index_;
    nn::Linear expand_;
};

}  // namespace jscc::swin
