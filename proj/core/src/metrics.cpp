#include "jscc/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace jscc {

namespace {

void require_same_shape(const ImageBatch& a, const ImageBatch& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("image shapes differ: " + std::to_string(a.count) + "x" +
                                    std::to_string(a.channels) + "x" + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + " vs " + std::to_string(b.count) + "x" +
                                    std::to_string(b.channels) + "x" + std::to_string(b.height) + "x" +
                                    std::to_string(b.width));
    }
}

}  // namespace

double mse(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw std::invalid_argument("mse: length mismatch");
    if (a.empty()) throw std::invalid_argument("mse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double mse(const ImageBatch& s, const ImageBatch& s_hat) {
    require_same_shape(s, s_hat);
    if (s.peak != s_hat.peak) throw std::invalid_argument("mse: batches use different pixel scales");
    return mse(s.pixels, s_hat.pixels);
}

double psnr_from_mse(double mse_255) {
    if (mse_255 < 0.0) throw std::invalid_argument("psnr: negative mse");
    if (mse_255 == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse_255);
}

PsnrResult psnr(std::span<const float> s, std::span<const float> s_hat) {
    const double m = mse(s, s_hat);
    return PsnrResult{psnr_from_mse(m), m};
}

PsnrResult psnr(const ImageBatch& s, const ImageBatch& s_hat) {
    require_same_shape(s, s_hat);
    if (s.peak != 255.0f || s_hat.peak != 255.0f) throw std::invalid_argument("psnr: inputs must be on the 0-255 scale");
    if (s.count == 0) throw std::invalid_argument("psnr: empty batch");
    double sum = 0.0;
    for (int i = 0; i < s.count; ++i) sum += psnr(s.image(i), s_hat.image(i)).value;
    return PsnrResult{sum / s.count, mse(s.pixels, s_hat.pixels)};
}

std::vector<double> psnr_per_image(const ImageBatch& s, const ImageBatch& s_hat) {
    require_same_shape(s, s_hat);
    const ImageBatch a = s.rescaled(255.0f);
    const ImageBatch b = s_hat.rescaled(255.0f);
    std::vector<double> out(static_cast<std::size_t>(s.count));
    for (int i = 0; i < s.count; ++i) out[static_cast<std::size_t>(i)] = psnr(a.image(i), b.image(i)).value;
    return out;
}

}  // namespace jscc
