#include "lpad/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace lpad::vae {

namespace {

// Content-derived canonical order: minibatch composition then depends only on
// the seed and the data, not on how the file happened to be ordered.
std::vector<std::int64_t> canonical_order(const data::Dataset& ds) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(ds.n));
    std::iota(idx.begin(), idx.end(), 0);
    const std::int64_t m = ds.instance_size();
    std::sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        const double* pa = ds.instance(a);
        const double* pb = ds.instance(b);
        for (std::int64_t i = 0; i < m; ++i) {
            if (pa[i] != pb[i]) return pa[i] < pb[i];
        }
        return ds.labels[a] < ds.labels[b];
    });
    return idx;
}

struct Snapshot {
    std::vector<ParamStore::Entry> entries;
    std::int64_t step = 0;
    rbm::RbmChains chains;
};

Snapshot take_snapshot(const Model& model) {
    Snapshot s;
    s.entries = model.store().entries();
    s.step = model.store().step_count();
    s.chains = model.chains();
    return s;
}

void restore_snapshot(Model& model, const Snapshot& s) {
    model.store().entries() = s.entries;
    model.store().set_step_count(s.step);
    model.chains() = s.chains;
}

struct Acc {
    double total = 0, recon = 0, kl = 0;
    std::int64_t weight = 0;
    void add(const LossParts& p, std::int64_t w) {
        total += p.total * w;
        recon += p.recon * w;
        kl += p.kl * w;
        weight += w;
    }
};

}  // namespace

TrainStats train(Model& model, const data::Dataset& train_ds, const data::Dataset* val_ds,
                 const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (cfg.minibatch < 1) throw std::invalid_argument("train: minibatch must be >= 1");
    const std::int64_t n_batches = train_ds.n / cfg.minibatch;
    if (n_batches == 0) {
        throw std::invalid_argument("train: minibatch " + std::to_string(cfg.minibatch) +
                                    " exceeds training set size " + std::to_string(train_ds.n));
    }
    const double beta = model.spec().beta;
    const AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8};
    const std::vector<std::int64_t> canon = canonical_order(train_ds);

    TrainStats stats;
    Snapshot good = take_snapshot(model);

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::int64_t> perm = canon;
        Rng shuffle_rng = Rng::derive(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(perm);

        Acc tr;
        bool diverged = false;
        for (std::int64_t bi = 0; bi < n_batches; ++bi) {
            std::vector<std::int64_t> idx(perm.begin() + bi * cfg.minibatch,
                                          perm.begin() + (bi + 1) * cfg.minibatch);
            Tensor batch = train_ds.batch(idx);
            Rng noise = Rng::derive(cfg.seed, "noise",
                                    static_cast<std::uint64_t>(epoch * n_batches + bi));
            std::unordered_map<std::string, Tensor> grads;
            LossParts parts;
            try {
                parts = model.beta_elbo_loss(batch, noise, LossOptions{}, &grads);
            } catch (const std::runtime_error&) {
                diverged = true;
                break;
            }
            model.store().adam_step(grads, adam);
            tr.add(parts, 1);
        }
        if (diverged) {
            restore_snapshot(model, good);
            stats.diverged = true;
            break;
        }

        EpochRow row;
        row.epoch = epoch + 1;
        row.train_total = tr.total / tr.weight;
        row.train_recon = tr.recon / tr.weight;
        row.train_kl_weighted = beta * tr.kl / tr.weight;

        if (val_ds && val_ds->n > 0) {
            Acc va;
            Rng vnoise = Rng::derive(cfg.seed, "val-noise", static_cast<std::uint64_t>(epoch));
            LossOptions vopts;
            vopts.mode = diff::Mode::eval;
            vopts.advance_chains = false;
            vopts.update_bn = false;
            for (std::int64_t start = 0; start < val_ds->n; start += cfg.minibatch) {
                const std::int64_t end = std::min(val_ds->n, start + cfg.minibatch);
                std::vector<std::int64_t> idx(static_cast<std::size_t>(end - start));
                std::iota(idx.begin(), idx.end(), start);
                Tensor batch = val_ds->batch(idx);
                LossParts parts = model.beta_elbo_loss(batch, vnoise, vopts, nullptr);
                va.add(parts, end - start);
            }
            row.has_val = true;
            row.val_total = va.total / va.weight;
            row.val_recon = va.recon / va.weight;
            row.val_kl_weighted = beta * va.kl / va.weight;
        }
        stats.rows.push_back(row);
        stats.completed_epochs = epoch + 1;
        good = take_snapshot(model);
        if (cfg.checkpoint_every > 0 && cfg.on_checkpoint && (epoch + 1) % cfg.checkpoint_every == 0) {
            cfg.on_checkpoint(model, epoch + 1);
        }
    }
    return stats;
}

std::vector<Tensor> reconstruct(Model& model, const Tensor& batch, std::int64_t samples, Rng& rng) {
    if (samples < 1) throw std::invalid_argument("reconstruct: samples must be >= 1");
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(samples));
    for (std::int64_t s = 0; s < samples; ++s) {
        out.push_back(model.reconstruct_once(batch, rng));
    }
    return out;
}

void write_train_stats_csv(const TrainStats& stats, const std::string& path,
                           const std::vector<std::string>& comments) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_train_stats_csv: cannot open " + path);
    for (const auto& c : comments) out << "# " << c << "\n";
    out << "epoch,split,total,recon,kl_weighted\n";
    char buf[128];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const EpochRow& r : stats.rows) {
        out << r.epoch << ",train," << fmt(r.train_total) << "," << fmt(r.train_recon) << ","
            << fmt(r.train_kl_weighted) << "\n";
        if (r.has_val) {
            out << r.epoch << ",val," << fmt(r.val_total) << "," << fmt(r.val_recon) << ","
                << fmt(r.val_kl_weighted) << "\n";
        }
    }
    if (stats.diverged) out << "# diverged: restored last finite epoch state\n";
}

}  // namespace lpad::vae
