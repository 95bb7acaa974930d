#pragma once

// Encoder f and decoder g of the bandwidth-adaptive JSCC system, plus the
// masking and zero-padding maps between the full codeword and the symbols
// actually sent.
//
// Codeword layout: a batch of codewords is a {B * N_T, N_F} var, one row per
// token, feature index fastest. Consecutive feature pairs form one complex
// symbol (re, im). A masked codeword is {B, 2 rho_l N}.
//
// Successive refinement uses a block-major order: block b holds feature
// group b of every token (varying features) or token group b (varying
// patches), each block being 2 rho_1 N reals. The first l blocks are sent
// and every block is power-normalized on its own.

#include "jscc/autograd.hpp"
#include "jscc/channel.hpp"
#include "jscc/config.hpp"
#include "jscc/dataset.hpp"
#include "jscc/nn.hpp"
#include "jscc/swin.hpp"

#include <optional>
#include <vector>

namespace jscc::codec {

struct SideInfo {
    double snr_db = 0.0;
    int l = 1;
    double rho = 0.0;
    Scheme mode = Scheme::adaptive_bandwidth;
};

/// Side info for grid level l. Throws std::out_of_range for an invalid l.
SideInfo make_side_info(const ExperimentConfig& cfg, int l, double snr_db);

/// Single affine layer mapping [snr_db, rho_l] (or [snr_db] when
/// `with_rho` is false) to a length n_u embedding.
class SideInfoEmbedding {
public:
    SideInfoEmbedding() = default;
    SideInfoEmbedding(int side_dim, bool with_rho, nn::Rng& rng);

    /// {1, n_u}
    ag::Var operator()(const SideInfo& info) const;
    int inputs() const { return with_rho_ ? 2 : 1; }
    int dim() const { return layer_.out_features(); }
    void collect(const std::string& prefix, nn::ParameterList& out) const;

private:
    bool with_rho_ = true;
    nn::Linear layer_;
};

/// Replicates a {1, n} row to {rows, n}.
ag::Var broadcast_rows(const ag::Var& row, int rows);

class Encoder {
public:
    Encoder() = default;
    Encoder(const ExperimentConfig& cfg, nn::Rng& rng);

    /// images {B, C, H, W} on the [0, 1] scale, u {1, n_u} -> Z {B * N_T, N_F}.
    ag::Var operator()(const ag::Var& images, const ag::Var& u) const;
    /// Token width after the side-info concat (c + n_u).
    int concat_width() const { return concat_width_; }
    void collect(const std::string& prefix, nn::ParameterList& out) const;

private:
    int concat_width_ = 0;
    swin::PatchEmbedding embed_;
    nn::Linear fuse_;
    std::vector<std::optional<swin::PatchMerging>> merges_;
    std::vector<std::vector<swin::SwinBlockPair>> stages_;
    nn::Linear project_;
};

class Decoder {
public:
    Decoder() = default;
    Decoder(const ExperimentConfig& cfg, nn::Rng& rng);

    /// y {B * N_T, N_F}, u {1, n_u} -> images {B, C, H, W} clamped to [0, 1].
    ag::Var operator()(const ag::Var& y, const ag::Var& u) const;
    /// Token width after the side-info concat (N_F + n_u).
    int concat_width() const { return concat_width_; }
    void collect(const std::string& prefix, nn::ParameterList& out) const;

private:
    int channels_ = 0, height_ = 0, width_ = 0;
    int token_rows_ = 0, token_cols_ = 0;
    int concat_width_ = 0;
    nn::Linear fuse_;
    std::vector<std::vector<swin::SwinBlockPair>> stages_;  // deepest stage first
    std::vector<swin::PatchDivision> divisions_;
    ag::Index layout_index_;
    int kernel_ = 3;
    nn::Linear conv_;  // weight rows ordered (dy, dx, channel)
};

/// Flat per-image positions of the reals kept at level l, in transmit order,
/// as offsets into the N_T * N_F codeword. Length 2 rho_l N.
std::vector<std::int32_t> mask_positions(const ExperimentConfig& cfg, int l);

/// {B * N_T, N_F} -> {B, 2 rho_l N}.
ag::Var mask_codeword(const ag::Var& z, const ExperimentConfig& cfg, int l);
/// {B, 2 rho_l N} -> {B * N_T, N_F} with zeros at unsent positions. Throws
/// std::invalid_argument when the length does not match level l.
ag::Var pad_received(const ag::Var& y, const ExperimentConfig& cfg, int l);

/// Number of separately normalized power blocks when sending level l.
int power_blocks(const ExperimentConfig& cfg, int l);

struct Transmission {
    ag::Var codeword;     // Z {B * N_T, N_F}
    ag::Var transmitted;  // normalized z_l {B, 2 rho_l N}
    ag::Var received;     // y_l
    ag::Var padded;       // Y {B * N_T, N_F}
    ag::Var output;       // {B, C, H, W}
};

class JsccModel {
public:
    JsccModel(const ExperimentConfig& cfg, std::uint64_t init_seed);

    const ExperimentConfig& config() const { return cfg_; }

    ag::Var encoder_side(const SideInfo& info) const;
    ag::Var decoder_side(const SideInfo& info) const;
    ag::Var encode(const ag::Var& images, const SideInfo& info) const;
    ag::Var decode(const ag::Var& padded, const SideInfo& info) const;

    /// encode -> mask -> normalize -> AWGN -> pad -> decode. A null noise
    /// stream gives a noiseless channel.
    Transmission transmit(const ag::Var& images, const SideInfo& info, channel::NoiseStream* noise) const;

    /// Inference convenience on an ImageBatch; no graph is recorded.
    ImageBatch reconstruct(const ImageBatch& images, const SideInfo& info, channel::NoiseStream* noise) const;

    /// Named parameters in a stable order.
    const nn::ParameterList& parameters() const { return params_; }
    std::vector<ag::Var> parameter_vars() const;
    std::size_t parameter_count() const;

private:
    ExperimentConfig cfg_;
    SideInfoEmbedding enc_side_;
    SideInfoEmbedding dec_side_;  // unused for the adaptive scheme, where one embedding serves both ends
    bool shared_side_ = true;
    Encoder encoder_;
    Decoder decoder_;
    nn::ParameterList params_;
};

/// Images {B, C, H, W} var from an ImageBatch on the [0, 1] scale.
ag::Var to_var(const ImageBatch& images);
ImageBatch from_var(const ag::Var& images, float peak = 1.0f);

}  // namespace jscc::codec
