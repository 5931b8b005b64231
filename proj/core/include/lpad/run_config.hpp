#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lpad/anomaly.hpp"
#include "lpad/model.hpp"
#include "lpad/synth.hpp"

namespace lpad::cli {

/// Flat `key = value` run configuration ('#' comments, comma-separated
/// lists). A `profile` key loads shipped defaults first; explicit keys then
/// override regardless of file order. Unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;  // mandatory, no wall-clock seeding
    std::string out_dir = "out";
    std::string profile;

    // data
    std::string data;      // dataset CSV
    std::string run_dir;   // where train artifacts live (defaults to out_dir)
    std::vector<double> split_fractions = {0.6, 0.2, 0.2};
    data::NormMode normalize = data::NormMode::zscore;

    // model
    vae::PriorKind model = vae::PriorKind::gaussian;
    std::int64_t latent = 256;
    double beta = 60.0;
    double lambda = 0.1;
    vae::ReconMetric recon_metric = vae::ReconMetric::mse;
    std::optional<nets::DecoderOutput> decoder_output;  // default: derived from recon_metric
    bool logvar_softplus = true;
    std::vector<nets::Branch> branches = {{32, 3}, {32, 5}, {32, 7}};
    std::int64_t blocks = 2;
    diff::Upsample upsample = diff::Upsample::linear;

    // rbm prior
    rbm::Topology topology = rbm::Topology::augmented_positive_phase;
    std::int64_t fantasy_particles = 500;
    std::int64_t gibbs_k = 20;
    bool replay_buffer = false;
    double replay_fraction = 0.05;
    double rbm_l2 = 0.0;  // accepted for compatibility; only 0 is supported

    // training
    std::int64_t epochs = 400;
    std::int64_t minibatch = 128;
    double lr = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    bool combine_train_val = false;
    std::int64_t repeats = 5;
    std::int64_t checkpoint_every = 0;  // 0: final checkpoint only

    // evaluation
    std::int64_t samples = 10;
    anomaly::ThresholdSource threshold_source = anomaly::ThresholdSource::self_run;
    double anomaly_fraction = -1.0;  // < 0: from training labels

    // transfer
    std::string source_run;
    std::string source_report;
    bool post_train = false;
    std::int64_t post_epochs = 300;
    std::int64_t post_minibatch = 32;

    // sweep
    std::vector<std::int64_t> sweep_latents = {32, 64, 128, 256};
    std::vector<double> sweep_betas = {1, 10, 25, 50, 100};
    std::int64_t workers = 0;  // 0: hardware concurrency

    // synth
    std::int64_t synth_n = 2000;
    std::int64_t synth_channels = 7;
    std::int64_t synth_len = 60;
    double synth_fraction = 0.05;
    data::AnomalyKind synth_kind = data::AnomalyKind::level_drop;

    bool seed_set = false;

    /// Canonical sorted `key = value` text embedded in every artifact.
    std::string snapshot() const;
};

RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);  // same grammar, for tests

/// Consistency checks beyond per-key parsing (metric/normalization pairing,
/// rbm constraints, fraction ranges). Throws naming the key and constraint.
void validate(const RunConfig& cfg);

}  // namespace lpad::cli
