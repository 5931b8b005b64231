#include "lpad/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <atomic>
#include <functional>
#include <future>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "lpad/anomaly.hpp"
#include "lpad/checkpoint.hpp"
#include "lpad/synth.hpp"

namespace lpad::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::vector<std::string> snapshot_lines(const RunConfig& cfg) {
    std::vector<std::string> lines;
    std::istringstream in(cfg.snapshot());
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

anomaly::Metric metric_of(const RunConfig& cfg) {
    return cfg.recon_metric == vae::ReconMetric::mse ? anomaly::Metric::mse : anomaly::Metric::bce;
}

struct SplitData {
    data::Dataset train;              // normalized, fitted here
    std::optional<data::Dataset> val; // normalized with train stats
    data::Dataset test;               // normalized with train stats
};

// Loads, splits and normalizes per the config. Training statistics are fitted
// on the training portion (train+val when combined) and reused everywhere.
SplitData prepare_data(const RunConfig& cfg, const std::optional<data::NormStats>& reuse_stats) {
    if (cfg.data.empty()) throw std::runtime_error("config: key 'data': required for this command");
    data::Dataset ds = data::load_csv(cfg.data);
    std::vector<data::Dataset> parts = data::split(ds, {cfg.split_fractions, cfg.seed});

    data::Dataset train_raw = std::move(parts[0]);
    std::optional<data::Dataset> val_raw;
    if (parts.size() >= 3) {
        if (cfg.combine_train_val) {
            data::Dataset& v = parts[1];
            train_raw.values.insert(train_raw.values.end(), v.values.begin(), v.values.end());
            train_raw.labels.insert(train_raw.labels.end(), v.labels.begin(), v.labels.end());
            train_raw.n += v.n;
        } else {
            val_raw = std::move(parts[1]);
        }
    }
    data::Dataset test_raw = std::move(parts.back());

    SplitData out;
    if (reuse_stats) {
        out.train = data::normalize(train_raw, reuse_stats->mode, reuse_stats);
    } else {
        out.train = data::normalize(train_raw, cfg.normalize);
    }
    const auto& stats = *out.train.norm;
    if (val_raw) out.val = data::normalize(*val_raw, stats.mode, stats);
    out.test = data::normalize(test_raw, stats.mode, stats);
    return out;
}

void restore_model(vae::Model& model, Checkpoint&& ckpt) {
    // shape-check against a fresh registration of the same spec
    const auto& expect = model.store().entries();
    if (expect.size() != ckpt.store.entries().size()) {
        throw std::runtime_error("checkpoint does not match the configured model (parameter count " +
                                 std::to_string(ckpt.store.entries().size()) + " vs " +
                                 std::to_string(expect.size()) + ")");
    }
    for (std::size_t i = 0; i < expect.size(); ++i) {
        const auto& a = expect[i];
        const auto& b = ckpt.store.entries()[i];
        if (a.name != b.name || a.value.shape != b.value.shape) {
            throw std::runtime_error("checkpoint mismatch at parameter '" + b.name + "'");
        }
    }
    model.store() = std::move(ckpt.store);
    if (ckpt.chains) model.chains() = std::move(*ckpt.chains);
}

json metrics_json(const anomaly::EvalReport& rep) {
    json j;
    j["threshold"] = rep.threshold;
    j["self_threshold"] = rep.self_threshold;
    j["threshold_degenerate"] = rep.threshold_degenerate;
    j["log_transformed"] = rep.log_transformed;
    j["samples"] = rep.samples;
    j["precision"] = rep.m.precision;
    j["recall"] = rep.m.recall;
    j["f1"] = rep.m.f1;
    j["precision_defined"] = rep.m.precision_defined;
    j["recall_defined"] = rep.m.recall_defined;
    j["f1_defined"] = rep.m.f1_defined;
    return j;
}

void write_scores_csv(const anomaly::EvalReport& rep, const std::string& path,
                      const std::vector<std::string>& comments) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    for (const auto& c : comments) out << "# " << c << "\n";
    out << "instance,score,pred,truth\n";
    char buf[64];
    for (std::size_t i = 0; i < rep.scores.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", rep.scores[i]);
        out << i << "," << buf << "," << static_cast<int>(rep.pred[i]) << ","
            << static_cast<int>(rep.truth[i]) << "\n";
    }
}

struct Aggregate {
    double mean = 0, sd = 0;
};

Aggregate aggregate(const std::vector<double>& v) {
    Aggregate a;
    if (v.empty()) return a;
    for (double x : v) a.mean += x;
    a.mean /= static_cast<double>(v.size());
    for (double x : v) a.sd += (x - a.mean) * (x - a.mean);
    a.sd = std::sqrt(a.sd / static_cast<double>(v.size()));
    return a;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << j.dump(2) << "\n";
}

void run_parallel(std::int64_t n_tasks, std::int64_t workers,
                  const std::function<void(std::int64_t)>& task) {
    if (workers <= 0) {
        workers = static_cast<std::int64_t>(std::thread::hardware_concurrency());
        if (workers <= 0) workers = 1;
    }
    workers = std::min(workers, n_tasks);
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n_tasks; ++i) task(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::vector<std::future<void>> futs;
    futs.reserve(static_cast<std::size_t>(workers));
    for (std::int64_t w = 0; w < workers; ++w) {
        futs.push_back(std::async(std::launch::async, [&] {
            for (;;) {
                const std::int64_t i = next.fetch_add(1);
                if (i >= n_tasks) return;
                task(i);
            }
        }));
    }
    for (auto& f : futs) f.get();  // propagates the first exception
}

void cmd_synth(const RunConfig& cfg) {
    data::SynthConfig sc;
    sc.n_instances = cfg.synth_n;
    sc.channels = cfg.synth_channels;
    sc.window_len = cfg.synth_len;
    sc.anomaly_fraction = cfg.synth_fraction;
    sc.kind = cfg.synth_kind;
    sc.seed = cfg.seed;
    data::Dataset ds = data::synth_generate(sc);
    data::write_csv(ds, (fs::path(cfg.out_dir) / "dataset.csv").string(), snapshot_lines(cfg));
}

void cmd_train(const RunConfig& cfg) {
    SplitData sd = prepare_data(cfg, std::nullopt);
    std::vector<std::int64_t> diverged;
    for (std::int64_t r = 0; r < cfg.repeats; ++r) {
        vae::Model model(make_model_spec(cfg, sd.train.channels, sd.train.len));
        model.init_params(derive_seed(cfg.seed, "repeat", static_cast<std::uint64_t>(r)));
        vae::TrainConfig tcfg = make_train_config(cfg, derive_seed(cfg.seed, "train", static_cast<std::uint64_t>(r)));
        tcfg.checkpoint_every = cfg.checkpoint_every;
        if (cfg.checkpoint_every > 0) {
            tcfg.on_checkpoint = [&cfg, &sd, r](const vae::Model& m, std::int64_t epoch) {
                Checkpoint mid;
                mid.config_snapshot = cfg.snapshot();
                mid.store = m.store();
                if (cfg.model == vae::PriorKind::rbm) mid.chains = m.chains();
                mid.norm = sd.train.norm;
                save_checkpoint((fs::path(cfg.out_dir) /
                                 ("ckpt-r" + std::to_string(r) + "-e" + std::to_string(epoch) + ".lpad"))
                                    .string(),
                                mid);
            };
        }
        vae::TrainStats stats =
            vae::train(model, sd.train, sd.val ? &*sd.val : nullptr, tcfg);
        vae::write_train_stats_csv(stats,
                                   (fs::path(cfg.out_dir) / ("train_stats-r" + std::to_string(r) + ".csv")).string(),
                                   snapshot_lines(cfg));
        Checkpoint ckpt;
        ckpt.config_snapshot = cfg.snapshot();
        ckpt.store = model.store();
        if (cfg.model == vae::PriorKind::rbm) ckpt.chains = model.chains();
        ckpt.norm = sd.train.norm;
        save_checkpoint(checkpoint_path(cfg.out_dir, r), ckpt);
        if (stats.diverged) diverged.push_back(r);
    }
    if (!diverged.empty()) {
        std::string what = "train: loss diverged (non-finite) in repeat(s)";
        for (auto r : diverged) what += " " + std::to_string(r);
        what += "; last good checkpoints were written";
        throw std::runtime_error(what);
    }
}

anomaly::EvalOptions eval_options(const RunConfig& cfg, std::int64_t repeat, double external_thr) {
    anomaly::EvalOptions opts;
    opts.samples = cfg.samples;
    opts.metric = metric_of(cfg);
    opts.anomaly_fraction = cfg.anomaly_fraction;
    opts.seed = derive_seed(cfg.seed, "eval", static_cast<std::uint64_t>(repeat));
    opts.threshold_source = cfg.threshold_source;
    opts.external_threshold = external_thr;
    return opts;
}

json eval_repeats(const RunConfig& cfg, SplitData& sd, const std::string& ckpt_dir,
                  const std::string& scores_prefix, bool post_train,
                  const std::vector<double>& external_thresholds) {
    json repeats = json::array();
    std::vector<double> ps, rs, f1s, thrs;
    for (std::int64_t r = 0; r < cfg.repeats; ++r) {
        Checkpoint ckpt = load_checkpoint(checkpoint_path(ckpt_dir, r));
        if (!ckpt.norm) throw std::runtime_error("checkpoint lacks normalization statistics");
        vae::Model model(make_model_spec(cfg, sd.train.channels, sd.train.len));
        model.init_params(0);  // registration only; values replaced below
        restore_model(model, std::move(ckpt));

        json jr;
        jr["repeat"] = r;
        if (post_train) {
            vae::TrainConfig tcfg = make_train_config(cfg, derive_seed(cfg.seed, "post", static_cast<std::uint64_t>(r)));
            tcfg.epochs = cfg.post_epochs;
            tcfg.minibatch = cfg.post_minibatch;
            vae::TrainStats stats = vae::train(model, sd.train, nullptr, tcfg);
            vae::write_train_stats_csv(
                stats,
                (fs::path(cfg.out_dir) / ("transfer_stats-r" + std::to_string(r) + ".csv")).string(),
                snapshot_lines(cfg));
            Checkpoint out;
            out.config_snapshot = cfg.snapshot();
            out.store = model.store();
            if (cfg.model == vae::PriorKind::rbm) out.chains = model.chains();
            out.norm = sd.train.norm;
            save_checkpoint((fs::path(cfg.out_dir) / ("transfer_ckpt-r" + std::to_string(r) + ".lpad")).string(), out);
            jr["post_trained_epochs"] = stats.completed_epochs;
            jr["diverged"] = stats.diverged;
        }
        const double ext = external_thresholds.empty()
                               ? 0.0
                               : external_thresholds[static_cast<std::size_t>(r) % external_thresholds.size()];
        anomaly::EvalReport rep = anomaly::evaluate_model(model, sd.train, sd.test,
                                                          eval_options(cfg, r, ext));
        write_scores_csv(rep,
                         (fs::path(cfg.out_dir) / (scores_prefix + std::to_string(r) + ".csv")).string(),
                         snapshot_lines(cfg));
        jr.update(metrics_json(rep));
        repeats.push_back(jr);
        ps.push_back(rep.m.precision);
        rs.push_back(rep.m.recall);
        f1s.push_back(rep.m.f1);
        thrs.push_back(rep.threshold);
    }
    json j;
    j["repeats"] = repeats;
    const Aggregate ap = aggregate(ps), ar = aggregate(rs), af = aggregate(f1s), at = aggregate(thrs);
    j["aggregate"] = {{"precision_mean", ap.mean}, {"precision_sd", ap.sd},
                      {"recall_mean", ar.mean},    {"recall_sd", ar.sd},
                      {"f1_mean", af.mean},        {"f1_sd", af.sd},
                      {"threshold_mean", at.mean}};
    return j;
}

void cmd_eval(const RunConfig& cfg) {
    const std::string run_dir = cfg.run_dir.empty() ? cfg.out_dir : cfg.run_dir;
    // normalization comes from the checkpoint so eval sees the training stats
    Checkpoint probe = load_checkpoint(checkpoint_path(run_dir, 0));
    if (!probe.norm) throw std::runtime_error("checkpoint lacks normalization statistics");
    SplitData sd = prepare_data(cfg, probe.norm);
    json j;
    j["command"] = "eval";
    j["seed"] = cfg.seed;
    j["config"] = cfg.snapshot();
    j.update(eval_repeats(cfg, sd, run_dir, "scores-r", false, {}));
    write_json(j, (fs::path(cfg.out_dir) / "eval_report.json").string());
}

std::vector<double> load_source_thresholds(const std::string& report_path, std::int64_t repeats) {
    std::ifstream in(report_path);
    if (!in) throw std::runtime_error("transfer: cannot open source_report " + report_path);
    json j = json::parse(in);
    std::vector<double> out;
    if (j.contains("repeats")) {
        for (const auto& jr : j["repeats"]) {
            if (jr.contains("self_threshold")) out.push_back(jr["self_threshold"].get<double>());
        }
    }
    if (out.empty() && j.contains("aggregate") && j["aggregate"].contains("threshold_mean")) {
        out.push_back(j["aggregate"]["threshold_mean"].get<double>());
    }
    if (out.empty()) {
        throw std::runtime_error("transfer: source_report " + report_path + " carries no thresholds");
    }
    (void)repeats;
    return out;
}

void cmd_transfer(const RunConfig& cfg) {
    if (cfg.source_run.empty()) {
        throw std::runtime_error("config: key 'source_run': required for transfer");
    }
    Checkpoint probe = load_checkpoint(checkpoint_path(cfg.source_run, 0));
    if (!probe.norm) throw std::runtime_error("source checkpoint lacks normalization statistics");
    // the target dataset is normalized with the source training statistics
    SplitData sd = prepare_data(cfg, probe.norm);

    std::vector<double> external;
    if (cfg.threshold_source != anomaly::ThresholdSource::self_run) {
        if (cfg.source_report.empty()) {
            throw std::runtime_error("config: key 'source_report': required for threshold_source source_run|mixed");
        }
        external = load_source_thresholds(cfg.source_report, cfg.repeats);
    }

    json j;
    j["command"] = "transfer";
    j["seed"] = cfg.seed;
    j["post_train"] = cfg.post_train;
    j["config"] = cfg.snapshot();
    j.update(eval_repeats(cfg, sd, cfg.source_run, "transfer_scores-r", cfg.post_train, external));
    write_json(j, (fs::path(cfg.out_dir) / "transfer_report.json").string());
}

void cmd_sweep(const RunConfig& cfg) {
    SplitData sd = prepare_data(cfg, std::nullopt);
    const std::int64_t nl = static_cast<std::int64_t>(cfg.sweep_latents.size());
    const std::int64_t nb = static_cast<std::int64_t>(cfg.sweep_betas.size());
    const std::int64_t cells = nl * nb;
    const std::int64_t tasks = cells * cfg.repeats;
    std::vector<double> f1(static_cast<std::size_t>(tasks), 0.0);

    run_parallel(tasks, cfg.workers, [&](std::int64_t ti) {
        const std::int64_t cell = ti / cfg.repeats;
        const std::int64_t li = cell / nb;
        const std::int64_t bi = cell % nb;
        RunConfig c = cfg;
        c.latent = cfg.sweep_latents[static_cast<std::size_t>(li)];
        c.beta = cfg.sweep_betas[static_cast<std::size_t>(bi)];
        vae::Model model(make_model_spec(c, sd.train.channels, sd.train.len));
        model.init_params(derive_seed(cfg.seed, "sweep-init", static_cast<std::uint64_t>(ti)));
        vae::TrainConfig tcfg = make_train_config(c, derive_seed(cfg.seed, "sweep-train", static_cast<std::uint64_t>(ti)));
        vae::TrainStats stats = vae::train(model, sd.train, nullptr, tcfg);
        if (stats.diverged) {
            f1[static_cast<std::size_t>(ti)] = 0.0;  // degenerate cell, reported as 0
            return;
        }
        anomaly::EvalOptions opts = eval_options(c, 0, 0.0);
        opts.seed = derive_seed(cfg.seed, "sweep-eval", static_cast<std::uint64_t>(ti));
        anomaly::EvalReport rep2 = anomaly::evaluate_model(model, sd.train, sd.test, opts);
        f1[static_cast<std::size_t>(ti)] = rep2.m.f1;
    });

    std::ofstream out((fs::path(cfg.out_dir) / "sweep_f1.csv").string());
    if (!out) throw std::runtime_error("cannot open sweep_f1.csv");
    for (const auto& c : snapshot_lines(cfg)) out << "# " << c << "\n";
    out << "latent";
    char buf[64];
    for (double b : cfg.sweep_betas) {
        std::snprintf(buf, sizeof(buf), "%.17g", b);
        out << ",beta=" << buf;
    }
    out << "\n";
    for (std::int64_t li = 0; li < nl; ++li) {
        out << cfg.sweep_latents[static_cast<std::size_t>(li)];
        for (std::int64_t bi = 0; bi < nb; ++bi) {
            double acc = 0.0;
            for (std::int64_t r = 0; r < cfg.repeats; ++r) {
                acc += f1[static_cast<std::size_t>((li * nb + bi) * cfg.repeats + r)];
            }
            std::snprintf(buf, sizeof(buf), "%.17g", acc / static_cast<double>(cfg.repeats));
            out << "," << buf;
        }
        out << "\n";
    }
}

}  // namespace

Command parse_command(const std::string& name) {
    if (name == "synth") return Command::synth;
    if (name == "train") return Command::train;
    if (name == "eval") return Command::eval;
    if (name == "transfer") return Command::transfer;
    if (name == "sweep") return Command::sweep;
    throw std::invalid_argument("unknown command '" + name + "' (expected synth|train|eval|transfer|sweep)");
}

vae::ModelSpec make_model_spec(const RunConfig& cfg, std::int64_t in_channels,
                               std::int64_t window_len) {
    vae::ModelSpec spec;
    spec.prior = cfg.model;
    spec.beta = cfg.beta;
    spec.lambda = cfg.lambda;
    spec.recon = cfg.recon_metric;
    spec.data_window = window_len;

    nets::NetConfig net;
    net.in_channels = in_channels;
    const std::int64_t div = std::int64_t{1} << cfg.blocks;
    net.window_len = (window_len + div - 1) / div * div;  // right-pad to a pooling multiple
    net.branches = cfg.branches;
    net.blocks_per_branch = cfg.blocks;
    net.latent_dim = cfg.latent;
    net.head_kind = cfg.model == vae::PriorKind::gaussian ? nets::HeadKind::gaussian
                                                          : nets::HeadKind::bernoulli;
    net.decoder_output = cfg.decoder_output
                             ? *cfg.decoder_output
                             : (cfg.recon_metric == vae::ReconMetric::bce ? nets::DecoderOutput::sigmoid
                                                                          : nets::DecoderOutput::linear);
    net.logvar_softplus = cfg.logvar_softplus;
    net.upsample = cfg.upsample;
    spec.net = net;

    if (cfg.model == vae::PriorKind::rbm) {
        vae::RbmSpec rs;
        rs.topology = cfg.topology;
        rs.fantasy_particles = cfg.fantasy_particles;
        rs.gibbs_k = cfg.gibbs_k;
        rs.replay_buffer = cfg.replay_buffer;
        rs.replay_fraction = cfg.replay_fraction;
        spec.rbm = rs;
    }
    return spec;
}

vae::TrainConfig make_train_config(const RunConfig& cfg, std::uint64_t seed) {
    vae::TrainConfig t;
    t.epochs = cfg.epochs;
    t.minibatch = cfg.minibatch;
    t.lr = cfg.lr;
    t.adam_beta1 = cfg.adam_beta1;
    t.adam_beta2 = cfg.adam_beta2;
    t.seed = seed;
    return t;
}

FitResult fit_model(vae::Model& model, const data::Dataset& train_ds, const data::Dataset* val_ds,
                    const vae::TrainConfig& tcfg) {
    FitResult out;
    out.stats = vae::train(model, train_ds, val_ds, tcfg);
    out.ok = !out.stats.diverged;
    return out;
}

std::string checkpoint_path(const std::string& dir, std::int64_t repeat) {
    return (fs::path(dir) / ("ckpt-r" + std::to_string(repeat) + ".lpad")).string();
}

void run(const RunConfig& cfg, Command cmd) {
    validate(cfg);
    fs::create_directories(cfg.out_dir);
    switch (cmd) {
        case Command::synth: cmd_synth(cfg); break;
        case Command::train: cmd_train(cfg); break;
        case Command::eval: cmd_eval(cfg); break;
        case Command::transfer: cmd_transfer(cfg); break;
        case Command::sweep: cmd_sweep(cfg); break;
    }
}

}  // namespace lpad::cli
