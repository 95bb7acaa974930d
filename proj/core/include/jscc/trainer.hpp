#pragma once

// Training loop with per-batch (l, SNR) sampling, DWA-weighted loss,
// per-epoch validation, plateau learning-rate decay and early stopping.

#include "jscc/channel.hpp"
#include "jscc/codec.hpp"
#include "jscc/config.hpp"
#include "jscc/dataset.hpp"
#include "jscc/dwa.hpp"
#include "jscc/nn.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jscc {

/// Raised when a training loss is NaN or infinite. `snapshot` is a JSON
/// object describing the failing step.
class NonFiniteLossError : public std::runtime_error {
public:
    NonFiniteLossError(const std::string& what, std::string snapshot)
        : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
    const std::string& snapshot() const { return snapshot_; }

private:
    std::string snapshot_;
};

struct StepResult {
    double loss = 0.0;  // weight * mse
    double mse = 0.0;   // unweighted, network scale
    bool applied = false;  // false when the weight was zero and no update ran
};

/// One optimizer step on w * mse(S, S_hat). A zero weight skips the
/// backward pass and the update entirely.
StepResult train_step(const codec::JsccModel& model, nn::Adam& optimizer, const ImageBatch& batch,
                      const Condition& cond, double weight, channel::NoiseStream& noise);

struct Validation {
    std::vector<int> levels;
    std::vector<double> psnr;  // mean per-image PSNR per level
    std::vector<double> mse;   // network-scale MSE per level
    double mean_mse = 0.0;     // unweighted mean over levels
};

/// Full pass over `val` for each level at a fixed SNR. Noise for level l is
/// drawn from a stream seeded by (noise_seed, l), so repeated calls see the
/// same draws.
Validation validate_epoch(const codec::JsccModel& model, const ImageDataset& val, double snr_db,
                          std::uint64_t noise_seed, int batch_size, std::span<const int> levels);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // mean weighted loss over batches
    double train_mse = 0.0;
    int batches = 0;
    int skipped = 0;                   // zero-weight batches
    std::vector<double> weights;       // used during this epoch
    std::vector<double> next_weights;  // after the post-validation update
    std::vector<int> levels;
    std::vector<double> val_psnr;
    std::vector<double> val_mse;
    std::vector<double> gaps;  // empty without upper bounds
    double metric = 0.0;
    bool improved = false;
    std::vector<std::vector<int>> histogram;  // [l-1][1 dB SNR bin]
};

/// Append-only per-epoch log, serialized as JSON Lines.
class TrainLog {
public:
    void append(EpochRecord r) { records_.push_back(std::move(r)); }
    const std::vector<EpochRecord>& records() const { return records_; }
    bool empty() const { return records_.empty(); }

    static std::string to_json_line(const EpochRecord& r);
    static EpochRecord from_json_line(const std::string& line);
    std::string to_jsonl() const;
    static TrainLog from_jsonl(const std::string& text);
    static TrainLog load(const std::filesystem::path& path);

private:
    std::vector<EpochRecord> records_;
};

struct TrainOptions {
    std::filesystem::path out_dir;  // empty: nothing is written to disk
    std::string run_name;           // subdirectory under <out>/<hash>
    std::optional<int> fixed_level;  // non-adaptive model at one level
    std::optional<double> fixed_snr;
    const UpperBoundRegistry* registry = nullptr;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    std::shared_ptr<codec::JsccModel> model;  // holds the best-validation parameters
    TrainLog log;
    int best_epoch = 0;
    double best_metric = 0.0;
    std::vector<double> best_psnr;
    DwaState final_state;
    bool early_stopped = false;
    std::filesystem::path run_dir;
};

/// <out>/<hash>[/<run_name>]
std::filesystem::path run_directory(const std::filesystem::path& out, const ExperimentConfig& cfg,
                                    const std::string& run_name);

/// Trains one model. An adaptive run with DWA enabled requires a registry
/// covering every level (RegistryError otherwise). Files written under the
/// run directory: config.json, train_log.jsonl, best.ckpt, last.ckpt, BEST
/// (best epoch marker) and epoch_<n>.ckpt when snapshots are enabled.
TrainResult train(const ExperimentConfig& cfg, const ImageDataset& train_set, const ImageDataset& val_set,
                  const TrainOptions& options = {});

/// Trains L fixed-(rho_l, snr_val) models and records their best validation
/// PSNR. Entries are merged into `existing` when given. The registry is
/// saved to <out>/<hash>/registry.json when an output directory is set.
UpperBoundRegistry train_upper_bounds(const ExperimentConfig& cfg, const ImageDataset& train_set,
                                      const ImageDataset& val_set, const TrainOptions& options = {},
                                      const UpperBoundRegistry* existing = nullptr);

/// Raises glibc's mmap and trim thresholds so large per-step tensors reuse
/// heap pages instead of faulting in fresh ones. No-op elsewhere.
void tune_allocator();

}  // namespace jscc
