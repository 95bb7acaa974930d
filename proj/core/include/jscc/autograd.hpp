#pragma once

// Minimal reverse-mode automatic differentiation over dense float32 tensors.
//
// A Var is a handle to a graph node holding a row-major value buffer and a
// lazily allocated gradient buffer. Ops record a backward closure only when
// gradient recording is enabled and at least one input requires a gradient,
// so inference under NoGradGuard builds no graph.
//
// Row conventions: a tensor of shape {d0, ..., dk} is viewed as a matrix with
// rows = size / dk and cols = dk wherever an op talks about rows.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace jscc::ag {

using Shape = std::vector<int>;
using Index = std::shared_ptr<const std::vector<std::int32_t>>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-filled on first access.
    std::span<float> grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    int cols() const { return node_->shape.back(); }
    int rows() const { return static_cast<int>(size() / static_cast<std::size_t>(cols())); }

    std::span<const float> value() const { return node_->value; }
    std::span<float> mutable_value() { return node_->value; }
    std::span<const float> grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }

    void zero_grad();

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Shape shape, std::vector<float> values);
Var zeros(Shape shape);
/// Leaf that accumulates gradients across backward passes until zero_grad().
Var parameter(Shape shape, std::vector<float> values);

/// Runs reverse accumulation from a scalar (size 1) var.
void backward(const Var& loss);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---------------------------------------------------------------------------
// Ops

/// x [rows, in] * weight [in, out] + bias [out]; bias may be an empty Var.
Var linear(const Var& x, const Var& weight, const Var& bias);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, float factor);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);
/// Exact (erf based) GELU.
Var gelu(const Var& x);
Var clamp(const Var& x, float lo, float hi);
Var reshape(const Var& x, Shape shape);
/// Concatenate along the last dimension; rows must match.
Var concat_cols(const Var& a, const Var& b);

/// Per-group row gather. x is split into `groups` equal row blocks; output
/// group g row i copies input row index[i] of group g, or zeros when index[i]
/// is negative. Output shape {groups * index.size(), cols}.
Var gather_rows(const Var& x, int groups, const Index& index);

/// Per-group element gather with the same negative-means-zero rule. The
/// product of out_shape must equal groups * index.size().
Var gather(const Var& x, int groups, const Index& index, Shape out_shape);

struct AttentionLayout {
    int heads = 1;
    int tokens = 1;             // tokens per window
    int windows_per_image = 1;  // mask period along the window axis
    Index relative_index;       // tokens * tokens entries into bias table rows
    std::shared_ptr<const std::vector<float>> mask;  // windows_per_image * tokens^2, or null
};

/// Multi-head self-attention inside fixed-size token groups.
/// qkv: {groups * tokens, 3C} laid out as [q | k | v]; bias_table: {R, heads}
/// additive relative position bias. Output {groups * tokens, C}.
Var window_attention(const Var& qkv, const Var& bias_table, const AttentionLayout& layout);

/// Each row is a real codeword of interleaved (re, im) pairs. Every row is cut
/// into `blocks` equal contiguous blocks and each block is scaled to unit
/// average complex-symbol power. Throws on an all-zero block.
Var power_normalize(const Var& x, int blocks);

/// Same-padded k x k convolution over channels-last maps. x: {B*H*W, cin},
/// weight: {k*k*cin, cout} with rows ordered (dy, dx, cin), bias: {cout}.
/// Output {B*H*W, cout}.
Var conv2d_same(const Var& x, const Var& weight, const Var& bias, int batch, int height, int width, int kernel);

/// Mean of squared differences; scalar output.
Var mse(const Var& a, const Var& b);

}  // namespace jscc::ag
