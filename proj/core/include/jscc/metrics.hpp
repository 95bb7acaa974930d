#pragma once

#include "jscc/dataset.hpp"

#include <limits>
#include <span>
#include <vector>

namespace jscc {

/// PSNR on the 0-255 scale. `value` is +infinity when mse is zero.
struct PsnrResult {
    double value = 0.0;
    double mse = 0.0;

    bool infinite() const { return value == std::numeric_limits<double>::infinity(); }
};

/// Mean squared difference over all elements, on whatever scale the inputs
/// share. Throws std::invalid_argument on a length mismatch.
double mse(std::span<const float> a, std::span<const float> b);
/// Shape-checked batch MSE; both batches must use the same peak.
double mse(const ImageBatch& s, const ImageBatch& s_hat);

/// 10 log10(255^2 / mse).
double psnr_from_mse(double mse_255);

/// Single-image PSNR for 0-255 scale buffers.
PsnrResult psnr(std::span<const float> s, std::span<const float> s_hat);

/// Batch PSNR: `value` is the mean of per-image PSNRs and `mse` the pooled
/// MSE. Inputs must be on the 0-255 scale (peak 255).
PsnrResult psnr(const ImageBatch& s, const ImageBatch& s_hat);

/// Per-image PSNRs; each batch is rescaled to 0-255 internally.
std::vector<double> psnr_per_image(const ImageBatch& s, const ImageBatch& s_hat);

}  // namespace jscc
