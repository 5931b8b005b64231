#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lpad/tensor.hpp"

namespace lpad::data {

enum class ChannelKind { continuous, binary };
enum class NormMode { zscore, minmax };

struct NormStats {
    NormMode mode = NormMode::zscore;
    std::vector<double> p1;               // per-channel mean (zscore) or min (minmax)
    std::vector<double> p2;               // per-channel sd or max
    std::vector<std::uint8_t> degenerate; // sd == 0 or max == min: zero-center passthrough
    bool operator==(const NormStats&) const = default;
};

/// Windowed multichannel time series with per-instance binary labels,
/// stored as a dense [N, C, T] block.
struct Dataset {
    std::int64_t n = 0;
    std::int64_t channels = 0;
    std::int64_t len = 0;
    std::vector<double> values;            // n * channels * len
    std::vector<std::uint8_t> labels;      // 1 = anomalous
    std::vector<ChannelKind> channel_meta;
    std::optional<NormStats> norm;

    std::int64_t instance_size() const { return channels * len; }
    const double* instance(std::int64_t i) const { return values.data() + i * instance_size(); }
    double* instance(std::int64_t i) { return values.data() + i * instance_size(); }

    std::int64_t anomaly_count() const {
        std::int64_t c = 0;
        for (auto l : labels) c += l;
        return c;
    }

    /// Gather instances into a [B,C,T] tensor.
    Tensor batch(const std::vector<std::int64_t>& idx) const;
};

struct CsvSchema {
    std::string id_col = "instance_id";
    std::string time_col = "time";
    std::string label_col = "label";
    std::vector<std::string> channel_cols;  // empty: every remaining header column
};

/// Reads the flat CSV schema (header `instance_id,time,<channels...>,label`).
/// Leading '#' lines are skipped. Rows are grouped by instance id in order of
/// first appearance and sorted by time within an instance; uniform length and
/// per-instance label consistency are enforced.
Dataset load_csv(const std::string& path, const CsvSchema& schema = {});

/// Writes the same schema; `comments` become leading '#' lines.
void write_csv(const Dataset& ds, const std::string& path,
               const std::vector<std::string>& comments = {});

/// Per-channel normalization. Without `stats` the statistics are fitted on
/// `ds`; with `stats` they are reused (test/transfer data). Applying the
/// transform twice with the same stats is a no-op.
Dataset normalize(const Dataset& ds, NormMode mode, const std::optional<NormStats>& stats = {});

struct SplitSpec {
    std::vector<double> fractions;  // positive, sum 1
    std::uint64_t seed = 0;
};

/// Label-stratified partition. Split i receives floor(f_i * N) instances with
/// the remainder going to the first split; anomaly fractions stay within one
/// instance of the global rate.
std::vector<Dataset> split(const Dataset& ds, const SplitSpec& spec);

}  // namespace lpad::data
