#pragma once

// Separate source/channel coding reference: an image compressor whose output
// must fit the bit budget of an ideal capacity-achieving channel code.

#include "jscc/config.hpp"
#include "jscc/dataset.hpp"
#include "jscc/eval.hpp"
#include "jscc/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace jscc::separation {

/// Thrown when an external compressor is missing or fails.
class FeatureUnavailableError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// floor(rho * N * log2(1 + 10^(snr_db / 10))). Saturates to UINT64_MAX for
/// an infinite SNR; throws std::invalid_argument for a non-positive rho or N.
std::uint64_t capacity_bits(double rho, std::int64_t source_dim, double snr_db);
std::uint64_t capacity_bits(const Rational& rho, std::int64_t source_dim, double snr_db);

/// Lossy codec with an integer quality knob where larger is better and the
/// payload size is nondecreasing in quality.
class ImageCompressor {
public:
    virtual ~ImageCompressor() = default;
    virtual std::string name() const = 0;
    virtual int min_quality() const = 0;
    virtual int max_quality() const = 0;
    /// Single image (count 1, peak 255) -> complete encoded file.
    virtual std::vector<std::uint8_t> compress(const ImageBatch& image, int quality) const = 0;
    virtual ImageBatch decompress(const std::vector<std::uint8_t>& data) const = 0;
};

/// bpgenc/bpgdec invoked as subprocesses. Quality q maps to -q (51 - q).
class BpgCompressor : public ImageCompressor {
public:
    explicit BpgCompressor(std::string encoder = "bpgenc", std::string decoder = "bpgdec",
                           std::filesystem::path work_dir = {});

    /// True when both executables resolve on PATH (or as given paths).
    static bool available(const std::string& encoder = "bpgenc", const std::string& decoder = "bpgdec");

    std::string name() const override { return "bpg"; }
    int min_quality() const override { return 0; }
    int max_quality() const override { return 51; }
    std::vector<std::uint8_t> compress(const ImageBatch& image, int quality) const override;
    ImageBatch decompress(const std::vector<std::uint8_t>& data) const override;

private:
    std::string encoder_, decoder_;
    std::filesystem::path work_dir_;
};

/// In-process fallback: keeps the top `quality` bits of every sample (1..8)
/// and deflates the result. An 8-byte header is part of the payload.
class QuantizingCompressor : public ImageCompressor {
public:
    std::string name() const override { return "quantize"; }
    int min_quality() const override { return 1; }
    int max_quality() const override { return 8; }
    std::vector<std::uint8_t> compress(const ImageBatch& image, int quality) const override;
    ImageBatch decompress(const std::vector<std::uint8_t>& data) const override;
};

struct BaselineResult {
    bool feasible = false;
    std::uint64_t budget_bits = 0;
    std::uint64_t payload_bits = 0;  // whole file, headers included
    int quality = -1;
    std::optional<PsnrResult> psnr;  // set when feasible
};

/// Largest-quality payload that fits the capacity budget, found by binary
/// search; infeasible when even the minimum quality exceeds it.
BaselineResult baseline_separation(const Rational& rho, double snr_db, const ImageBatch& image,
                                   const ImageCompressor& codec);

/// Baseline over every image of `test` at each (rho, snr). Infeasible images
/// are excluded from the mean; a row with n = 0 has NaN statistics. The
/// `infeasible.<rho>@<snr>` metadata entries count them.
ResultTable baseline_sweep(const ExperimentConfig& cfg, const ImageDataset& test, const std::vector<Rational>& rhos,
                           const std::vector<double>& snrs_db, const ImageCompressor& codec,
                           const std::string& test_set = {});

/// PNG encode/decode used for the subprocess hand-off (8-bit RGB or gray).
void write_png(const std::filesystem::path& path, const ImageBatch& image);
ImageBatch read_png(const std::filesystem::path& path);

}  // namespace jscc::separation
