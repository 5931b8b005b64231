#include "lpad/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lpad::anomaly {

namespace {

constexpr double kClamp = 1e-7;
constexpr double kScoreFloor = 1e-12;

double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double sd_population(const std::vector<double>& v, double mean) {
    double acc = 0.0;
    for (double x : v) {
        const double d = x - mean;
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

double score(const Tensor& x, const Tensor& xhat, Metric metric) {
    if (x.shape != xhat.shape) {
        throw std::invalid_argument("score: shape mismatch " + shape_str(x.shape) + " vs " +
                                    shape_str(xhat.shape));
    }
    const std::int64_t n = x.numel();
    if (metric == Metric::mse) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double d = x[i] - xhat[i];
            acc += d * d;
        }
        return acc / static_cast<double>(n);
    }
    // bce
    const std::int64_t per_channel = x.rank() >= 2 ? x.shape[x.rank() - 1] : n;
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (x[i] < 0.0 || x[i] > 1.0) {
            throw std::domain_error("score: bce input outside [0,1] at channel " +
                                    std::to_string(per_channel > 0 ? i / per_channel : i));
        }
        const double p = std::clamp(xhat[i], kClamp, 1.0 - kClamp);
        acc -= x[i] * std::log(p) + (1.0 - x[i]) * std::log(1.0 - p);
    }
    return acc;
}

std::vector<double> log_transform(std::vector<double> scores) {
    for (double& s : scores) s = std::log(std::max(s, kScoreFloor));
    return scores;
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::domain_error("normal_quantile: p must lie in (0,1), got " + std::to_string(p));
    }
    // bisection bracket, then Newton polish on the erfc-based Phi
    double lo = -12.0, hi = 12.0;
    for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (phi(mid) < p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    double z = 0.5 * (lo + hi);
    for (int i = 0; i < 4; ++i) {
        const double err = phi(z) - p;
        const double dens = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
        if (dens <= 0.0) break;
        z -= err / dens;
    }
    return z;
}

double threshold(const std::vector<double>& train_scores, double anomaly_fraction, bool* degenerate) {
    if (train_scores.empty()) throw std::invalid_argument("threshold: empty scores");
    if (!(anomaly_fraction > 0.0 && anomaly_fraction < 1.0)) {
        throw std::domain_error("threshold: anomaly_fraction must lie in (0,1), got " +
                                std::to_string(anomaly_fraction));
    }
    const double mean =
        std::accumulate(train_scores.begin(), train_scores.end(), 0.0) /
        static_cast<double>(train_scores.size());
    const double sd = sd_population(train_scores, mean);
    if (degenerate) *degenerate = sd == 0.0;
    if (sd == 0.0) return mean;
    return mean + normal_quantile(1.0 - anomaly_fraction) * sd;
}

std::vector<std::uint8_t> classify(const std::vector<double>& scores, double thr) {
    std::vector<std::uint8_t> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= thr ? 1 : 0;
    return out;
}

Metrics metrics(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
    if (pred.size() != truth.size()) {
        throw std::invalid_argument("metrics: length mismatch " + std::to_string(pred.size()) +
                                    " vs " + std::to_string(truth.size()));
    }
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && truth[i]) ++tp;
        else if (pred[i] && !truth[i]) ++fp;
        else if (!pred[i] && truth[i]) ++fn;
    }
    Metrics m;
    if (tp + fp == 0) {
        m.precision = 0.0;
        m.precision_defined = false;
    } else {
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    if (tp + fn == 0) {
        m.recall = 0.0;
        m.recall_defined = false;
    } else {
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    if (m.precision + m.recall == 0.0) {
        m.f1 = 0.0;
        m.f1_defined = false;  // harmonic mean has a zero denominator
    } else {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return m;
}

namespace {

Tensor clamp01(Tensor x) {
    for (auto& v : x.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return x;
}

// One scoring pass: a single posterior sample per instance.
std::vector<double> score_pass(vae::Model& model, const data::Dataset& ds, Metric metric, Rng& rng) {
    std::vector<double> scores(static_cast<std::size_t>(ds.n));
    const std::int64_t chunk = 256;
    for (std::int64_t start = 0; start < ds.n; start += chunk) {
        const std::int64_t end = std::min(ds.n, start + chunk);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);
        Tensor batch = ds.batch(idx);
        if (metric == Metric::bce) batch = clamp01(std::move(batch));
        Tensor xhat = model.reconstruct_once(batch, rng);
        const std::int64_t m = ds.instance_size();
        for (std::int64_t i = 0; i < end - start; ++i) {
            Tensor xi(Shape{ds.channels, ds.len},
                      std::vector<double>(batch.data.begin() + i * m, batch.data.begin() + (i + 1) * m));
            Tensor ri(Shape{ds.channels, ds.len},
                      std::vector<double>(xhat.data.begin() + i * m, xhat.data.begin() + (i + 1) * m));
            scores[static_cast<std::size_t>(start + i)] = score(xi, ri, metric);
        }
    }
    return scores;
}

}  // namespace

EvalReport evaluate_model(vae::Model& model, const data::Dataset& train_ds,
                          const data::Dataset& test_ds, const EvalOptions& opts) {
    if (opts.samples < 1) throw std::invalid_argument("evaluate_model: samples must be >= 1");
    double fraction = opts.anomaly_fraction;
    if (fraction <= 0.0) {
        fraction = static_cast<double>(train_ds.anomaly_count()) / static_cast<double>(train_ds.n);
    }
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::domain_error("evaluate_model: anomaly fraction " + std::to_string(fraction) +
                                " not in (0,1); provide anomaly_fraction explicitly");
    }
    const bool log_scores = opts.metric == Metric::mse;

    EvalReport rep;
    rep.samples = opts.samples;
    rep.log_transformed = log_scores;
    rep.truth = test_ds.labels;

    // threshold: one pass per sample over the train split, averaged
    double thr_acc = 0.0;
    bool degen_any = false;
    for (std::int64_t s = 0; s < opts.samples; ++s) {
        Rng rng = Rng::derive(opts.seed, "eval-train", static_cast<std::uint64_t>(s));
        std::vector<double> sc = score_pass(model, train_ds, opts.metric, rng);
        if (log_scores) sc = log_transform(std::move(sc));
        bool degen = false;
        thr_acc += threshold(sc, fraction, &degen);
        degen_any = degen_any || degen;
    }
    rep.self_threshold = thr_acc / static_cast<double>(opts.samples);
    rep.threshold_degenerate = degen_any;

    switch (opts.threshold_source) {
        case ThresholdSource::self_run:
            rep.threshold = rep.self_threshold;
            break;
        case ThresholdSource::source_run:
            rep.threshold = opts.external_threshold;
            break;
        case ThresholdSource::mixed:
            rep.threshold = 0.5 * (rep.self_threshold + opts.external_threshold);
            break;
    }

    // test scores: per-instance averages over samples
    rep.scores.assign(static_cast<std::size_t>(test_ds.n), 0.0);
    for (std::int64_t s = 0; s < opts.samples; ++s) {
        Rng rng = Rng::derive(opts.seed, "eval-test", static_cast<std::uint64_t>(s));
        std::vector<double> sc = score_pass(model, test_ds, opts.metric, rng);
        if (log_scores) sc = log_transform(std::move(sc));
        for (std::size_t i = 0; i < sc.size(); ++i) rep.scores[i] += sc[i];
    }
    for (double& s : rep.scores) s /= static_cast<double>(opts.samples);

    rep.pred = classify(rep.scores, rep.threshold);
    rep.m = metrics(rep.pred, rep.truth);
    return rep;
}

}  // namespace lpad::anomaly
