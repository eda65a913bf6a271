#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmreg/field.hpp"
#include "mmreg/image.hpp"
#include "mmreg/losses.hpp"
#include "mmreg/network.hpp"
#include "mmreg/record.hpp"

namespace mmreg {

enum class TrainMode { unsupervised, supervised, direct };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(std::string_view name);

struct SplitCounts {
    std::size_t train = 360;
    std::size_t val = 90;
    std::size_t test = 115;

    std::size_t total() const { return train + val + test; }
    friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

struct TrainConfig {
    TrainMode mode = TrainMode::unsupervised;
    std::size_t epochs = 200;
    std::size_t steps_per_epoch = 100;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    LossConfig loss;
    SplitCounts split;
    std::uint64_t seed = 0;

    /// Iterations per pyramid level for register_direct, coarsest first.
    std::vector<std::size_t> direct_iterations{200, 100, 50};
    /// Peak Adam step size for register_direct, in pixels; cosine-decayed within each level.
    double direct_lr = 0.03;
    /// Std (px) of the Gaussian applied to the field gradient before each step; 0 disables.
    double direct_grad_sigma = 2.0;
    /// A level ends early after this many iterations without improvement; 0 disables.
    std::size_t direct_patience = 10;
    /// Adam epsilon for the field optimizer. Per-pixel gradients are O(1/N), so the usual 1e-8 lets noise through.
    double direct_epsilon = 1e-5;

    /// Worker threads for per-pair gradients within a batch. Results do not depend on it.
    std::size_t threads = 1;
    /// Record wall-clock seconds per epoch; disable for byte-reproducible logs.
    bool timing = true;

    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

TrainConfig load_train_config(const std::filesystem::path& path);
TrainConfig parse_train_config(std::string_view json_text);
void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_dice_median = 0.0;
    double val_mi_median = 0.0;
    double seconds = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Row 0 holds the metrics of the initial parameters; row k those after epoch k.
/// register_direct fills `iterations` with the loss of every optimizer step instead.
struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::vector<double> iterations;

    friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path);
TrainLog read_train_log_csv(const std::filesystem::path& path);

struct DatasetSplit {
    std::vector<PairRecord> train;
    std::vector<PairRecord> val;
    std::vector<PairRecord> test;
};

/// Shuffles source groups with cfg.seed and packs whole groups into train, val, test in order.
DatasetSplit split_dataset(const std::vector<PairRecord>& records, const TrainConfig& cfg);

struct Checkpoint {
    NetParams<float> params;
    std::optional<AdamState<float>> adam;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const NetParams<float>& params, const AdamState<float>* state, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
    NetParams<float> params;
    AdamState<float> adam;
    TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&, const NetParams<float>&, const AdamState<float>&)>;

/// Passing `resume` continues from the checkpoint's optimizer step; the log then starts after that epoch.
TrainResult train_unsupervised(const std::vector<PairRecord>& train, const std::vector<PairRecord>& val,
                               const TrainConfig& cfg, const Checkpoint* resume = nullptr,
                               const EpochCallback& on_epoch = {});

TrainResult train_supervised(const std::vector<PairRecord>& train, const std::vector<PairRecord>& val,
                             const TrainConfig& cfg, const Checkpoint* resume = nullptr,
                             const EpochCallback& on_epoch = {});

/// Dispatches on cfg.mode.
TrainResult train(const std::vector<PairRecord>& train, const std::vector<PairRecord>& val, const TrainConfig& cfg,
                  const Checkpoint* resume = nullptr, const EpochCallback& on_epoch = {});

struct DirectResult {
    DisplacementField field;
    TrainLog log;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

DirectResult register_direct(const GrayImage& fixed, const GrayImage& moving, const TrainConfig& cfg);

DisplacementField register_with_model(const NetParams<float>& params, const GrayImage& fixed, const GrayImage& moving);

} // namespace mmreg
