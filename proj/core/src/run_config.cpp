#include "lpad/run_config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lpad::cli {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& want) {
    throw std::invalid_argument("config: key '" + key + "': invalid value '" + value + "' (" + want + ")");
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("t");
        return d;
    } catch (...) {
        bad_value(key, v, "expected a real number");
    }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("t");
        return d;
    } catch (...) {
        bad_value(key, v, "expected an integer");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long d = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("t");
        return d;
    } catch (...) {
        bad_value(key, v, "expected a non-negative integer");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    bad_value(key, v, "expected on/off");
}

std::vector<nets::Branch> parse_branches(const std::string& key, const std::string& v) {
    std::vector<nets::Branch> out;
    for (const std::string& item : split_list(v)) {
        const std::size_t col = item.find(':');
        if (col == std::string::npos) bad_value(key, v, "expected filters:kernel pairs");
        nets::Branch b;
        b.filters = parse_int(key, trim(item.substr(0, col)));
        b.kernel = parse_int(key, trim(item.substr(col + 1)));
        out.push_back(b);
    }
    return out;
}

void apply_profile(RunConfig& c, const std::string& name) {
    const auto rbm_common = [&] {
        c.model = vae::PriorKind::rbm;
        c.lambda = 0.1;
        c.fantasy_particles = 500;
    };
    if (name == "baseline-gaussian") {
        c.model = vae::PriorKind::gaussian;
        c.latent = 256;
        c.beta = 60;
    } else if (name == "baseline-bernoulli") {
        c.model = vae::PriorKind::bernoulli;
        c.latent = 128;
        c.beta = 60;
        c.lambda = 0.1;
    } else if (name == "baseline-rbm") {
        rbm_common();
        c.latent = 64;
        c.beta = 60;
        c.gibbs_k = 20;
    } else if (name == "approach-rbm") {
        rbm_common();
        c.latent = 32;
        c.beta = 30;
        c.gibbs_k = 25;
        c.recon_metric = vae::ReconMetric::bce;
        c.normalize = data::NormMode::minmax;
    } else if (name == "bench-gaussian" || name == "bench-bernoulli" || name == "bench-rbm") {
        // desk-scale profiles for the bundled synthetic benchmark
        c.branches = {{8, 3}, {8, 5}};
        c.blocks = 2;
        c.epochs = 50;
        c.beta = 10;
        c.repeats = 5;
        if (name == "bench-gaussian") {
            c.model = vae::PriorKind::gaussian;
            c.latent = 16;
        } else if (name == "bench-bernoulli") {
            c.model = vae::PriorKind::bernoulli;
            c.latent = 16;
        } else {
            rbm_common();
            c.latent = 8;
            c.gibbs_k = 20;
        }
    } else {
        throw std::invalid_argument("config: unknown profile '" + name + "'");
    }
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"seed", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.seed = parse_u64(k, v);
             c.seed_set = true;
         }},
        {"out_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
        {"data", [](RunConfig& c, const std::string&, const std::string& v) { c.data = v; }},
        {"run_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.run_dir = v; }},
        {"split", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.split_fractions.clear();
             for (const auto& f : split_list(v)) c.split_fractions.push_back(parse_double(k, f));
         }},
        {"normalize", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "zscore") c.normalize = data::NormMode::zscore;
             else if (v == "minmax") c.normalize = data::NormMode::minmax;
             else bad_value(k, v, "expected zscore|minmax");
         }},
        {"model", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "gaussian") c.model = vae::PriorKind::gaussian;
             else if (v == "bernoulli") c.model = vae::PriorKind::bernoulli;
             else if (v == "rbm") c.model = vae::PriorKind::rbm;
             else bad_value(k, v, "expected gaussian|bernoulli|rbm");
         }},
        {"latent", [](RunConfig& c, const std::string& k, const std::string& v) { c.latent = parse_int(k, v); }},
        {"beta", [](RunConfig& c, const std::string& k, const std::string& v) { c.beta = parse_double(k, v); }},
        {"lambda", [](RunConfig& c, const std::string& k, const std::string& v) { c.lambda = parse_double(k, v); }},
        {"recon_metric", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "mse") c.recon_metric = vae::ReconMetric::mse;
             else if (v == "bce") c.recon_metric = vae::ReconMetric::bce;
             else bad_value(k, v, "expected mse|bce");
         }},
        {"decoder_output", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "linear") c.decoder_output = nets::DecoderOutput::linear;
             else if (v == "sigmoid") c.decoder_output = nets::DecoderOutput::sigmoid;
             else bad_value(k, v, "expected linear|sigmoid");
         }},
        {"logvar_softplus", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.logvar_softplus = parse_bool(k, v);
         }},
        {"branches", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.branches = parse_branches(k, v);
         }},
        {"blocks", [](RunConfig& c, const std::string& k, const std::string& v) { c.blocks = parse_int(k, v); }},
        {"upsample", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "linear") c.upsample = diff::Upsample::linear;
             else if (v == "nearest") c.upsample = diff::Upsample::nearest;
             else bad_value(k, v, "expected linear|nearest");
         }},
        {"topology", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "bipartite") c.topology = rbm::Topology::bipartite_latent_space;
             else if (v == "augmented") c.topology = rbm::Topology::augmented_positive_phase;
             else bad_value(k, v, "expected bipartite|augmented");
         }},
        {"fantasy_particles", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.fantasy_particles = parse_int(k, v);
         }},
        {"gibbs_k", [](RunConfig& c, const std::string& k, const std::string& v) { c.gibbs_k = parse_int(k, v); }},
        {"replay_buffer", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.replay_buffer = parse_bool(k, v);
         }},
        {"replay_fraction", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.replay_fraction = parse_double(k, v);
         }},
        {"rbm_l2", [](RunConfig& c, const std::string& k, const std::string& v) { c.rbm_l2 = parse_double(k, v); }},
        {"epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.epochs = parse_int(k, v); }},
        {"minibatch", [](RunConfig& c, const std::string& k, const std::string& v) { c.minibatch = parse_int(k, v); }},
        {"lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr = parse_double(k, v); }},
        {"adam_beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_beta1 = parse_double(k, v); }},
        {"adam_beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_beta2 = parse_double(k, v); }},
        {"combine_train_val", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.combine_train_val = parse_bool(k, v);
         }},
        {"repeats", [](RunConfig& c, const std::string& k, const std::string& v) { c.repeats = parse_int(k, v); }},
        {"checkpoint_every", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.checkpoint_every = parse_int(k, v);
         }},
        {"samples", [](RunConfig& c, const std::string& k, const std::string& v) { c.samples = parse_int(k, v); }},
        {"threshold_source", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "self") c.threshold_source = anomaly::ThresholdSource::self_run;
             else if (v == "source_run") c.threshold_source = anomaly::ThresholdSource::source_run;
             else if (v == "mixed") c.threshold_source = anomaly::ThresholdSource::mixed;
             else bad_value(k, v, "expected self|source_run|mixed");
         }},
        {"anomaly_fraction", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.anomaly_fraction = parse_double(k, v);
         }},
        {"source_run", [](RunConfig& c, const std::string&, const std::string& v) { c.source_run = v; }},
        {"source_report", [](RunConfig& c, const std::string&, const std::string& v) { c.source_report = v; }},
        {"post_train", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.post_train = parse_bool(k, v);
         }},
        {"post_epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.post_epochs = parse_int(k, v); }},
        {"post_minibatch", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.post_minibatch = parse_int(k, v);
         }},
        {"sweep_latents", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.sweep_latents.clear();
             for (const auto& f : split_list(v)) c.sweep_latents.push_back(parse_int(k, f));
         }},
        {"sweep_betas", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.sweep_betas.clear();
             for (const auto& f : split_list(v)) c.sweep_betas.push_back(parse_double(k, f));
         }},
        {"workers", [](RunConfig& c, const std::string& k, const std::string& v) { c.workers = parse_int(k, v); }},
        {"synth_n", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth_n = parse_int(k, v); }},
        {"synth_channels", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.synth_channels = parse_int(k, v);
         }},
        {"synth_len", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth_len = parse_int(k, v); }},
        {"synth_fraction", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.synth_fraction = parse_double(k, v);
         }},
        {"synth_kind", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "level_drop") c.synth_kind = data::AnomalyKind::level_drop;
             else if (v == "delayed_step") c.synth_kind = data::AnomalyKind::delayed_step;
             else bad_value(k, v, "expected level_drop|delayed_step");
         }},
    };
    return table;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kvs;
    std::istringstream in(text);
    std::string line;
    std::int64_t lineno = 0;
    std::string profile;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        }
        if (key == "profile") {
            profile = value;
            continue;
        }
        if (!setters().count(key)) {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
        kvs.emplace_back(key, value);
    }

    RunConfig cfg;
    if (!profile.empty()) {
        apply_profile(cfg, profile);
        cfg.profile = profile;
    }
    for (const auto& [key, value] : kvs) setters().at(key)(cfg, key, value);
    validate(cfg);
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void validate(const RunConfig& cfg) {
    auto fail = [](const std::string& key, const std::string& what) {
        throw std::invalid_argument("config: key '" + key + "': " + what);
    };
    if (!cfg.seed_set) fail("seed", "mandatory (no wall-clock seeding)");
    if (cfg.latent <= 0) fail("latent", "must be positive");
    if (cfg.beta < 0) fail("beta", "must be >= 0");
    if (cfg.model != vae::PriorKind::gaussian && !(cfg.lambda > 0)) fail("lambda", "must be positive");
    if (cfg.blocks < 1) fail("blocks", "must be >= 1");
    if (cfg.branches.empty()) fail("branches", "at least one branch");
    for (const auto& b : cfg.branches) {
        if (b.filters <= 0) fail("branches", "filters must be positive");
        if (b.kernel <= 0 || b.kernel % 2 == 0) fail("branches", "kernel sizes must be odd");
    }
    if (cfg.rbm_l2 != 0.0) {
        fail("rbm_l2", "only 0 is supported (the weight penalty is exposed but intentionally inert)");
    }
    if (cfg.fantasy_particles <= 0) fail("fantasy_particles", "must be positive");
    if (cfg.gibbs_k < 0) fail("gibbs_k", "must be >= 0");
    if (!(cfg.replay_fraction >= 0.0 && cfg.replay_fraction < 1.0)) fail("replay_fraction", "must lie in [0,1)");
    if (cfg.model == vae::PriorKind::rbm &&
        cfg.topology == rbm::Topology::bipartite_latent_space && cfg.latent % 2 != 0) {
        fail("latent", "bipartite topology needs an even latent dimension");
    }
    const bool bce = cfg.recon_metric == vae::ReconMetric::bce;
    if (bce != (cfg.normalize == data::NormMode::minmax)) {
        fail("recon_metric", "bce pairs with normalize = minmax, mse with zscore");
    }
    if (cfg.decoder_output && (*cfg.decoder_output == nets::DecoderOutput::sigmoid) != bce) {
        fail("decoder_output", "must pair with recon_metric (sigmoid <-> bce)");
    }
    if (cfg.epochs < 1) fail("epochs", "must be >= 1");
    if (cfg.minibatch < 1) fail("minibatch", "must be >= 1");
    if (!(cfg.lr > 0)) fail("lr", "must be positive");
    if (cfg.repeats < 1) fail("repeats", "must be >= 1");
    if (cfg.checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
    if (cfg.samples < 1) fail("samples", "must be >= 1");
    if (cfg.split_fractions.empty()) fail("split", "at least one fraction");
    double fsum = 0;
    for (double f : cfg.split_fractions) {
        if (!(f > 0)) fail("split", "fractions must be positive");
        fsum += f;
    }
    if (std::abs(fsum - 1.0) > 1e-9) fail("split", "fractions must sum to 1");
    if (cfg.anomaly_fraction >= 0 && !(cfg.anomaly_fraction > 0 && cfg.anomaly_fraction < 1)) {
        fail("anomaly_fraction", "must lie in (0,1)");
    }
    if (cfg.post_epochs < 1) fail("post_epochs", "must be >= 1");
    if (cfg.post_minibatch < 1) fail("post_minibatch", "must be >= 1");
    if (!(cfg.synth_fraction > 0 && cfg.synth_fraction < 0.5)) fail("synth_fraction", "must lie in (0,0.5)");
    if (cfg.synth_n <= 0) fail("synth_n", "must be positive");
    if (cfg.synth_channels < 1) fail("synth_channels", "must be >= 1");
    if (cfg.synth_len < 8) fail("synth_len", "must be >= 8");
    if (cfg.workers < 0) fail("workers", "must be >= 0");
}

std::string RunConfig::snapshot() const {
    char buf[64];
    auto d = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    auto onoff = [](bool b) { return b ? std::string("on") : std::string("off"); };
    std::map<std::string, std::string> kv;
    kv["seed"] = std::to_string(seed);
    kv["out_dir"] = out_dir;
    if (!profile.empty()) kv["profile"] = profile;
    if (!data.empty()) kv["data"] = data;
    if (!run_dir.empty()) kv["run_dir"] = run_dir;
    {
        std::string s;
        for (std::size_t i = 0; i < split_fractions.size(); ++i) {
            if (i) s += ",";
            s += d(split_fractions[i]);
        }
        kv["split"] = s;
    }
    kv["normalize"] = normalize == data::NormMode::zscore ? "zscore" : "minmax";
    kv["model"] = model == vae::PriorKind::gaussian    ? "gaussian"
                  : model == vae::PriorKind::bernoulli ? "bernoulli"
                                                       : "rbm";
    kv["latent"] = std::to_string(latent);
    kv["beta"] = d(beta);
    kv["lambda"] = d(lambda);
    kv["recon_metric"] = recon_metric == vae::ReconMetric::mse ? "mse" : "bce";
    kv["decoder_output"] = (decoder_output ? *decoder_output
                                           : (recon_metric == vae::ReconMetric::bce
                                                  ? nets::DecoderOutput::sigmoid
                                                  : nets::DecoderOutput::linear)) ==
                                   nets::DecoderOutput::sigmoid
                               ? "sigmoid"
                               : "linear";
    kv["logvar_softplus"] = onoff(logvar_softplus);
    {
        std::string s;
        for (std::size_t i = 0; i < branches.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(branches[i].filters) + ":" + std::to_string(branches[i].kernel);
        }
        kv["branches"] = s;
    }
    kv["blocks"] = std::to_string(blocks);
    kv["upsample"] = upsample == diff::Upsample::linear ? "linear" : "nearest";
    if (model == vae::PriorKind::rbm) {
        kv["topology"] = topology == rbm::Topology::bipartite_latent_space ? "bipartite" : "augmented";
        kv["fantasy_particles"] = std::to_string(fantasy_particles);
        kv["gibbs_k"] = std::to_string(gibbs_k);
        kv["replay_buffer"] = onoff(replay_buffer);
        kv["replay_fraction"] = d(replay_fraction);
        kv["rbm_l2"] = d(rbm_l2);
    }
    kv["epochs"] = std::to_string(epochs);
    kv["minibatch"] = std::to_string(minibatch);
    kv["lr"] = d(lr);
    kv["adam_beta1"] = d(adam_beta1);
    kv["adam_beta2"] = d(adam_beta2);
    kv["combine_train_val"] = onoff(combine_train_val);
    kv["repeats"] = std::to_string(repeats);
    kv["checkpoint_every"] = std::to_string(checkpoint_every);
    kv["samples"] = std::to_string(samples);
    kv["threshold_source"] = threshold_source == anomaly::ThresholdSource::self_run ? "self"
                             : threshold_source == anomaly::ThresholdSource::source_run
                                 ? "source_run"
                                 : "mixed";
    if (anomaly_fraction >= 0) kv["anomaly_fraction"] = d(anomaly_fraction);
    if (!source_run.empty()) kv["source_run"] = source_run;
    if (!source_report.empty()) kv["source_report"] = source_report;
    kv["post_train"] = onoff(post_train);
    kv["post_epochs"] = std::to_string(post_epochs);
    kv["post_minibatch"] = std::to_string(post_minibatch);
    {
        std::string s;
        for (std::size_t i = 0; i < sweep_latents.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(sweep_latents[i]);
        }
        kv["sweep_latents"] = s;
    }
    {
        std::string s;
        for (std::size_t i = 0; i < sweep_betas.size(); ++i) {
            if (i) s += ",";
            s += d(sweep_betas[i]);
        }
        kv["sweep_betas"] = s;
    }
    kv["synth_n"] = std::to_string(synth_n);
    kv["synth_channels"] = std::to_string(synth_channels);
    kv["synth_len"] = std::to_string(synth_len);
    kv["synth_fraction"] = d(synth_fraction);
    kv["synth_kind"] = synth_kind == data::AnomalyKind::level_drop ? "level_drop" : "delayed_step";

    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

}  // namespace lpad::cli
