#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lpad/dataset.hpp"
#include "lpad/model.hpp"

namespace lpad::vae {

struct TrainConfig {
    std::int64_t epochs = 400;
    std::int64_t minibatch = 128;
    double lr = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    std::uint64_t seed = 0;
    // checkpoint cadence: the caller always persists the final state; with
    // checkpoint_every > 0 the callback also fires at that epoch interval
    std::int64_t checkpoint_every = 0;
    std::function<void(const Model&, std::int64_t epoch)> on_checkpoint;
};

struct EpochRow {
    std::int64_t epoch = 0;
    double train_total = 0, train_recon = 0, train_kl_weighted = 0;
    bool has_val = false;
    double val_total = 0, val_recon = 0, val_kl_weighted = 0;
};

struct TrainStats {
    std::vector<EpochRow> rows;
    bool diverged = false;
    std::int64_t completed_epochs = 0;
};

/// Minibatch Adam training. Instances are put into a content-derived
/// canonical order and re-shuffled each epoch by a seed-derived permutation,
/// so results depend only on the seed and the data, not on storage order.
/// The final partial minibatch is dropped. Validation passes run in eval
/// mode: no weight updates, no batch-norm stat updates, no chain sweeps.
/// On a non-finite loss the model is restored to the last epoch-end state
/// and the stats are returned with `diverged` set.
TrainStats train(Model& model, const data::Dataset& train_ds, const data::Dataset* val_ds,
                 const TrainConfig& cfg);

/// `samples` eval-mode reconstructions of a batch, each with fresh posterior
/// noise.
std::vector<Tensor> reconstruct(Model& model, const Tensor& batch, std::int64_t samples, Rng& rng);

/// CSV with columns (epoch, split, total, recon, kl_weighted); `comments`
/// become leading '#' lines.
void write_train_stats_csv(const TrainStats& stats, const std::string& path,
                           const std::vector<std::string>& comments);

}  // namespace lpad::vae
