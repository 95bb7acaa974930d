#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace jscc {

/// Dense CHW float images. `peak` records the pixel scale: 1 for the
/// network's [0, 1] range, 255 for the metric scale.
struct ImageBatch {
    int count = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    float peak = 1.0f;
    std::vector<float> pixels;

    std::size_t image_size() const { return static_cast<std::size_t>(channels) * height * width; }
    std::span<const float> image(int i) const {
        return std::span<const float>(pixels).subspan(static_cast<std::size_t>(i) * image_size(), image_size());
    }
    bool same_shape(const ImageBatch& other) const {
        return count == other.count && channels == other.channels && height == other.height && width == other.width;
    }
    /// Copy rescaled to a new peak value.
    ImageBatch rescaled(float new_peak) const;
};

/// 8-bit image collection held in memory.
class ImageDataset {
public:
    ImageDataset() = default;
    ImageDataset(int channels, int height, int width, std::vector<std::uint8_t> pixels, std::vector<std::uint8_t> labels = {});

    int size() const { return count_; }
    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }

    /// Batch on the [0, 1] network scale.
    ImageBatch batch(std::span<const int> indices) const;
    ImageBatch range(int first, int count) const;
    /// Subset [first, first + count).
    ImageDataset slice(int first, int count) const;
    const std::vector<std::uint8_t>& labels() const { return labels_; }
    const std::vector<std::uint8_t>& pixels() const { return pixels_; }

private:
    int count_ = 0, channels_ = 0, height_ = 0, width_ = 0;
    std::vector<std::uint8_t> pixels_;
    std::vector<std::uint8_t> labels_;
};

/// Reads CIFAR-10 binary records (1 label byte + 3072 CHW bytes).
/// `limit` < 0 reads the whole file.
ImageDataset read_cifar_binary(const std::filesystem::path& file, int limit = -1);

struct DataSplits {
    ImageDataset train;
    ImageDataset val;
    ImageDataset test;
};

/// CIFAR-10 directory layout: data_batch_*.bin feed train (the first
/// n_train records) and validation (the last n_val records); test_batch.bin
/// feeds test. Throws std::runtime_error when files are missing or short.
DataSplits load_cifar10(const std::filesystem::path& dir, int n_train, int n_val, int n_test);

}  // namespace jscc
