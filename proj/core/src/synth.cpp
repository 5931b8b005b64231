#include "lpad/synth.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lpad/rng.hpp"

namespace lpad::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Smooth additive drop with two-step cosine on/off ramps.
double drop_profile(std::int64_t t, std::int64_t start, std::int64_t dur) {
    if (t < start || t >= start + dur) return 0.0;
    const std::int64_t ramp = 3;
    const auto into = static_cast<double>(t - start);
    const auto from_end = static_cast<double>(start + dur - 1 - t);
    if (into < ramp) return 0.5 * (1.0 - std::cos(kPi * (into + 1.0) / (ramp + 1.0)));
    if (from_end < ramp) return 0.5 * (1.0 - std::cos(kPi * (from_end + 1.0) / (ramp + 1.0)));
    return 1.0;
}

}  // namespace

Dataset synth_generate(const SynthConfig& cfg) {
    if (cfg.n_instances <= 0) throw std::invalid_argument("synth_generate: n_instances must be positive");
    if (cfg.channels < 1) throw std::invalid_argument("synth_generate: channels must be >= 1");
    if (cfg.window_len < 8) throw std::invalid_argument("synth_generate: window_len must be >= 8");
    if (!(cfg.anomaly_fraction > 0.0 && cfg.anomaly_fraction < 0.5)) {
        throw std::invalid_argument("synth_generate: anomaly_fraction must lie in (0, 0.5)");
    }

    const std::int64_t N = cfg.n_instances, T = cfg.window_len, C = cfg.channels;
    const std::int64_t n_binary = C >= 3 ? 2 : 0;
    const std::int64_t n_cont = C - n_binary;

    // exactly floor(fraction * N) anomalous instances, picked by a
    // seed-derived permutation
    const auto n_anom = static_cast<std::int64_t>(std::floor(cfg.anomaly_fraction * static_cast<double>(N)));
    std::vector<std::int64_t> perm(static_cast<std::size_t>(N));
    std::iota(perm.begin(), perm.end(), 0);
    Rng pick = Rng::derive(cfg.seed, "synth-pick");
    pick.shuffle(perm);
    std::vector<std::uint8_t> is_anom(static_cast<std::size_t>(N), 0);
    for (std::int64_t i = 0; i < n_anom; ++i) is_anom[static_cast<std::size_t>(perm[i])] = 1;

    Dataset ds;
    ds.n = N;
    ds.channels = C;
    ds.len = T;
    ds.values.assign(static_cast<std::size_t>(N * C * T), 0.0);
    ds.labels = is_anom;

    for (std::int64_t i = 0; i < N; ++i) {
        Rng rng = Rng::derive(cfg.seed, "synth-inst", static_cast<std::uint64_t>(i));
        double* inst = ds.instance(i);
        const bool anom = is_anom[static_cast<std::size_t>(i)] != 0;

        // a few shared per-instance factors drive the whole window, so the
        // nominal data live on a low-dimensional manifold
        const double climb = rng.uniform();    // how aggressively this flight climbs
        const double heading = rng.uniform();  // runway direction
        const double trim = rng.uniform();     // pitch trim / engine level

        for (std::int64_t c = 0; c < n_cont; ++c) {
            double* row = inst + c * T;
            switch (c % 5) {
                case 0: {  // airspeed ramp
                    const double v0 = 92.0 + 6.0 * trim;
                    const double slope = 1.2 + 0.6 * climb;
                    for (std::int64_t t = 0; t < T; ++t) {
                        row[t] = v0 + slope * t + 1.5 * std::sin(2.0 * kPi * t / 23.0) +
                                 0.8 * rng.normal();
                    }
                    break;
                }
                case 1: {  // altitude climb-out
                    const double r = 8.0 + 4.0 * climb;
                    for (std::int64_t t = 0; t < T; ++t) {
                        row[t] = r * t + 0.05 * t * t + 2.5 * rng.normal();
                    }
                    break;
                }
                case 2: {  // pitch oscillation
                    const double base = 8.0 + 3.0 * climb;
                    for (std::int64_t t = 0; t < T; ++t) {
                        row[t] = base + 2.0 * std::sin(2.0 * kPi * t / 31.0) + 0.4 * rng.normal();
                    }
                    break;
                }
                case 3: {  // engine speed, slowly bleeding off
                    const double n1 = 88.0 + 6.0 * trim;
                    for (std::int64_t t = 0; t < T; ++t) {
                        row[t] = n1 - 0.06 * t + 0.3 * rng.normal();
                    }
                    break;
                }
                default: {  // heading drift
                    const double h0 = 60.0 * heading;
                    const double drift = -0.2 + 0.4 * climb;
                    for (std::int64_t t = 0; t < T; ++t) {
                        row[t] = h0 + drift * t + 0.8 * rng.normal();
                    }
                    break;
                }
            }
        }

        std::int64_t gear_t = 0, step_t = 0;
        if (n_binary > 0) {
            gear_t = T / 6 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(T / 6)));
            const std::int64_t lo = (3 * T) / 5;
            step_t = lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(T / 8)));
        }

        if (anom && cfg.kind == AnomalyKind::level_drop) {
            // mid-window airspeed drop, always deeper than 20 units, with the
            // physically coupled engine-speed dip on channel 3
            const std::int64_t start = T / 4 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(T / 5)));
            const std::int64_t dur = T / 3 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(T / 6)));
            const double depth = 30.0 + 20.0 * rng.uniform();
            for (std::int64_t t = 0; t < T; ++t) {
                const double d = drop_profile(t, start, dur);
                inst[t] -= depth * d;
                if (n_cont > 3) inst[3 * T + t] -= 0.5 * depth * d;
            }
        }
        if (anom && cfg.kind == AnomalyKind::delayed_step) {
            // late onset of the step channel
            step_t = T - 8 + static_cast<std::int64_t>(rng.below(5));
        }

        if (n_binary > 0) {
            double* gear = inst + n_cont * T;
            double* step = inst + (n_cont + 1) * T;
            for (std::int64_t t = 0; t < T; ++t) {
                gear[t] = t >= gear_t ? 1.0 : 0.0;
                step[t] = t >= step_t ? 1.0 : 0.0;
            }
        }
    }

    ds.channel_meta.assign(static_cast<std::size_t>(C), ChannelKind::continuous);
    for (std::int64_t c = n_cont; c < C; ++c) ds.channel_meta[static_cast<std::size_t>(c)] = ChannelKind::binary;
    return ds;
}

}  // namespace lpad::data
