#pragma once

#include <cstdint>

#include "lpad/dataset.hpp"

namespace lpad::data {

enum class AnomalyKind { level_drop, delayed_step };

struct SynthConfig {
    std::int64_t n_instances = 2000;
    std::int64_t channels = 7;  // first channels-2 continuous, last 2 binary step channels
    std::int64_t window_len = 60;
    double anomaly_fraction = 0.05;
    AnomalyKind kind = AnomalyKind::level_drop;
    std::uint64_t seed = 1;
};

/// Deterministic flight-like generator. Continuous channels are smooth ramps
/// and sinusoids with seeded noise; binary channels are threshold (step)
/// events. level_drop injects a mid-window additive drop of more than 20
/// units on channel 0; delayed_step pushes the last step channel's onset to
/// late in the window. Exactly floor(fraction * N) instances are labeled
/// anomalous.
Dataset synth_generate(const SynthConfig& cfg);

}  // namespace lpad::data
