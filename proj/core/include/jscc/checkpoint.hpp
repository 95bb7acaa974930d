#pragma once

// Versioned binary checkpoints: magic, format version, architecture hash,
// canonical config JSON, dimension table JSON, training metadata and named
// float32 parameters.

#include "jscc/codec.hpp"
#include "jscc/config.hpp"

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

namespace jscc {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointInfo {
    int epoch = 0;
    double metric = 0.0;  // validation metric at save time
    std::string tag;      // free-form run label
};

struct CheckpointHeader {
    std::uint32_t version = 0;
    std::uint64_t hash = 0;
    ExperimentConfig config;
    std::string dimensions_json;
    CheckpointInfo info;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const codec::JsccModel& model, const CheckpointInfo& info);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Copies stored parameters into `model`. Throws CheckpointError when the
/// stored architecture hash differs from the model's or a parameter name or
/// shape does not match.
CheckpointHeader load_parameters(const std::filesystem::path& path, codec::JsccModel& model);

/// Rebuilds a model from the embedded config and loads its parameters.
std::unique_ptr<codec::JsccModel> load_model(const std::filesystem::path& path);

/// Same, but refuses checkpoints whose hash differs from `expected`.
std::unique_ptr<codec::JsccModel> load_model(const std::filesystem::path& path, const ExperimentConfig& expected);

}  // namespace jscc
