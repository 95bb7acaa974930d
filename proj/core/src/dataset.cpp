#include "jscc/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace jscc {

namespace fs = std::filesystem;

ImageBatch ImageBatch::rescaled(float new_peak) const {
    ImageBatch out = *this;
    const float k = new_peak / peak;
    for (float& v : out.pixels) v *= k;
    out.peak = new_peak;
    return out;
}

ImageDataset::ImageDataset(int channels, int height, int width, std::vector<std::uint8_t> pixels,
                           std::vector<std::uint8_t> labels)
    : channels_(channels), height_(height), width_(width), pixels_(std::move(pixels)), labels_(std::move(labels)) {
    const std::size_t per = static_cast<std::size_t>(channels) * height * width;
    if (per == 0 || pixels_.size() % per) throw std::invalid_argument("image dataset: pixel buffer is not a whole number of images");
    count_ = static_cast<int>(pixels_.size() / per);
}

ImageBatch ImageDataset::batch(std::span<const int> indices) const {
    ImageBatch b;
    b.count = static_cast<int>(indices.size());
    b.channels = channels_;
    b.height = height_;
    b.width = width_;
    b.peak = 1.0f;
    const std::size_t per = b.image_size();
    b.pixels.resize(per * indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const int i = indices[k];
        if (i < 0 || i >= count_) throw std::out_of_range("image dataset: index " + std::to_string(i) + " out of range");
        const std::uint8_t* src = pixels_.data() + static_cast<std::size_t>(i) * per;
        float* dst = b.pixels.data() + k * per;
        for (std::size_t j = 0; j < per; ++j) dst[j] = static_cast<float>(src[j]) / 255.0f;
    }
    return b;
}

ImageBatch ImageDataset::range(int first, int count) const {
    std::vector<int> idx(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = first + i;
    return batch(idx);
}

ImageDataset ImageDataset::slice(int first, int count) const {
    if (first < 0 || count < 0 || first + count > count_) throw std::out_of_range("image dataset: slice out of range");
    const std::size_t per = static_cast<std::size_t>(channels_) * height_ * width_;
    std::vector<std::uint8_t> px(pixels_.begin() + static_cast<std::ptrdiff_t>(first * per),
                                 pixels_.begin() + static_cast<std::ptrdiff_t>((first + count) * per));
    std::vector<std::uint8_t> lb;
    if (!labels_.empty()) lb.assign(labels_.begin() + first, labels_.begin() + first + count);
    return ImageDataset(channels_, height_, width_, std::move(px), std::move(lb));
}

ImageDataset read_cifar_binary(const fs::path& file, int limit) {
    constexpr int kChannels = 3, kSide = 32;
    constexpr std::size_t kImage = 3 * 32 * 32;
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open CIFAR file " + file.string());
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> labels;
    std::vector<std::uint8_t> record(kImage + 1);
    while ((limit < 0 || static_cast<int>(labels.size()) < limit) &&
           in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()))) {
        labels.push_back(record[0]);
        pixels.insert(pixels.end(), record.begin() + 1, record.end());
    }
    if (limit < 0 && in.gcount() != 0) throw std::runtime_error("truncated CIFAR record in " + file.string());
    return ImageDataset(kChannels, kSide, kSide, std::move(pixels), std::move(labels));
}

DataSplits load_cifar10(const fs::path& dir, int n_train, int n_val, int n_test) {
    std::vector<fs::path> batches;
    for (int i = 1; i <= 5; ++i) {
        fs::path p = dir / ("data_batch_" + std::to_string(i) + ".bin");
        if (fs::exists(p)) batches.push_back(p);
    }
    if (batches.empty()) throw std::runtime_error("no data_batch_*.bin files under " + dir.string());

    std::vector<std::uint8_t> pixels, labels;
    for (const auto& p : batches) {
        ImageDataset part = read_cifar_binary(p);
        pixels.insert(pixels.end(), part.pixels().begin(), part.pixels().end());
        labels.insert(labels.end(), part.labels().begin(), part.labels().end());
    }
    ImageDataset pool(3, 32, 32, std::move(pixels), std::move(labels));
    if (n_train + n_val > pool.size()) {
        throw std::runtime_error("training files hold " + std::to_string(pool.size()) + " images; need " +
                                 std::to_string(n_train + n_val));
    }
    DataSplits s;
    s.train = pool.slice(0, n_train);
    s.val = pool.slice(pool.size() - n_val, n_val);

    const fs::path test = dir / "test_batch.bin";
    ImageDataset t = read_cifar_binary(test, n_test);
    if (t.size() < n_test)
        throw std::runtime_error("test_batch.bin holds " + std::to_string(t.size()) + " images; need " + std::to_string(n_test));
    s.test = std::move(t);
    return s;
}

}  // namespace jscc
