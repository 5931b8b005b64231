#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpad/dataset.hpp"
#include "lpad/model.hpp"

namespace lpad::anomaly {

enum class Metric { mse, bce };

/// Per-instance reconstruction error. mse: mean over all C*T elements of
/// (x - xhat)^2 (window-length-invariant; the minibatch-level mean squared
/// error is the average of instance scores). bce: sum over elements of
/// -[x log xhat + (1-x) log(1-xhat)] with xhat clamped to [1e-7, 1-1e-7];
/// x must lie in [0,1].
double score(const Tensor& x, const Tensor& xhat, Metric metric);

/// Natural log elementwise, scores floored at 1e-12 first.
std::vector<double> log_transform(std::vector<double> scores);

/// Inverse standard-normal CDF by bisection/Newton on the erfc-based Phi;
/// |Phi(result) - p| <= 1e-12.
double normal_quantile(double p);

/// thr = mean(scores) + normal_quantile(1 - fraction) * sd(scores), with
/// population sd. Constant scores give thr = mean and set `degenerate`.
double threshold(const std::vector<double>& train_scores, double anomaly_fraction,
                 bool* degenerate = nullptr);

/// label = 1 iff score >= thr (ties are anomalous).
std::vector<std::uint8_t> classify(const std::vector<double>& scores, double thr);

struct Metrics {
    double precision = 0, recall = 0, f1 = 0;
    bool precision_defined = true, recall_defined = true, f1_defined = true;
};

/// Precision, recall, F1 over instances; zero-denominator ratios become 0
/// with the corresponding *_defined flag cleared.
Metrics metrics(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth);

enum class ThresholdSource { self_run, source_run, mixed };

struct EvalOptions {
    std::int64_t samples = 10;
    Metric metric = Metric::mse;
    double anomaly_fraction = -1.0;  // < 0: take the train split's label rate
    std::uint64_t seed = 0;
    ThresholdSource threshold_source = ThresholdSource::self_run;
    double external_threshold = 0.0;  // used by source_run and mixed
};

struct EvalReport {
    double threshold = 0;       // the threshold that was applied
    double self_threshold = 0;  // derived from the train split here
    std::vector<double> scores;  // per-instance test scores, averaged over samples
    std::vector<std::uint8_t> pred;
    std::vector<std::uint8_t> truth;
    Metrics m;
    std::int64_t samples = 0;
    bool log_transformed = false;
    bool threshold_degenerate = false;
};

/// Scores the train split `samples` times (threshold per pass, averaged) and
/// the test split `samples` times (per-instance scores averaged), applying
/// the log transform for the mse metric, then classifies and computes
/// metrics against the true labels. Both datasets must carry the training
/// normalization.
EvalReport evaluate_model(vae::Model& model, const data::Dataset& train_ds,
                          const data::Dataset& test_ds, const EvalOptions& opts);

}  // namespace lpad::anomaly
