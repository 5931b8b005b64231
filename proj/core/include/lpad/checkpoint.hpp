#pragma once

#include <optional>
#include <string>

#include "lpad/dataset.hpp"
#include "lpad/param_store.hpp"
#include "lpad/rbm.hpp"

namespace lpad {

inline constexpr const char* kCheckpointMagic = "LPAD-CKPT-1";

/// Everything a run needs to resume: parameters with optimizer state,
/// batch-norm buffers (they live in the store), persistent RBM chains, the
/// normalization statistics fitted at training time, and the config snapshot
/// of the producing run.
struct Checkpoint {
    std::string config_snapshot;
    ParamStore store;
    std::optional<rbm::RbmChains> chains;
    std::optional<data::NormStats> norm;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lpad
