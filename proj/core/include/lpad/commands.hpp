#pragma once

#include <string>

#include "lpad/run_config.hpp"
#include "lpad/train.hpp"

namespace lpad::cli {

enum class Command { synth, train, eval, transfer, sweep };

Command parse_command(const std::string& name);

/// Executes one command, writing its artifacts under cfg.out_dir. Throws
/// std::runtime_error with a structured message on failure; the binary maps
/// that to a nonzero exit.
void run(const RunConfig& cfg, Command cmd);

// Building blocks shared by commands, tests, and the acceptance suite.

/// Model spec for a dataset shape under this config (pads the window up to a
/// multiple of 2^blocks).
vae::ModelSpec make_model_spec(const RunConfig& cfg, std::int64_t in_channels,
                               std::int64_t window_len);

vae::TrainConfig make_train_config(const RunConfig& cfg, std::uint64_t seed);

/// Trains one repeat end to end on pre-split data (used by train/sweep).
struct FitResult {
    vae::TrainStats stats;
    bool ok = true;
};
FitResult fit_model(vae::Model& model, const data::Dataset& train_ds, const data::Dataset* val_ds,
                    const vae::TrainConfig& tcfg);

std::string checkpoint_path(const std::string& dir, std::int64_t repeat);

}  // namespace lpad::cli
