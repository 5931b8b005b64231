#include <doctest.h>

#include <cmath>

#include "lpad/fd_check.hpp"
#include "lpad/model.hpp"
#include "lpad/rng.hpp"
#include "lpad/synth.hpp"
#include "lpad/train.hpp"

using namespace lpad;
using namespace lpad::vae;

namespace {

// 1 channel, window 2, one 1x1 conv block, latent 1: small enough to
// recompute the whole loss with scalar arithmetic.
ModelSpec micro_spec(PriorKind prior, double beta) {
    ModelSpec spec;
    spec.prior = prior;
    spec.beta = beta;
    spec.lambda = 0.1;
    spec.data_window = 2;
    nets::NetConfig net;
    net.in_channels = 1;
    net.window_len = 2;
    net.branches = {{1, 1}};
    net.blocks_per_branch = 1;
    net.latent_dim = prior == PriorKind::rbm ? 2 : 1;
    net.head_kind = prior == PriorKind::gaussian ? nets::HeadKind::gaussian : nets::HeadKind::bernoulli;
    net.decoder_output = nets::DecoderOutput::linear;
    spec.net = net;
    if (prior == PriorKind::rbm) {
        RbmSpec rs;
        rs.topology = rbm::Topology::augmented_positive_phase;
        rs.fantasy_particles = 3;
        rs.gibbs_k = 4;
        spec.rbm = rs;
    }
    return spec;
}

data::Dataset micro_dataset(std::int64_t n, std::uint64_t seed) {
    data::Dataset ds;
    ds.n = n;
    ds.channels = 1;
    ds.len = 2;
    ds.values.resize(static_cast<std::size_t>(n * 2));
    ds.labels.assign(static_cast<std::size_t>(n), 0);
    ds.channel_meta = {data::ChannelKind::continuous};
    Rng rng(seed);
    for (auto& v : ds.values) v = rng.normal();
    return ds;
}

void set_param(Model& m, const std::string& name, std::vector<double> vals) {
    Tensor& t = m.store().value(name);
    REQUIRE(static_cast<std::size_t>(t.numel()) == vals.size());
    t.data = std::move(vals);
}

}  // namespace

TEST_CASE("ModelSpec invariants") {
    // rbm settings present iff the prior is rbm
    ModelSpec s1 = micro_spec(PriorKind::gaussian, 1.0);
    s1.rbm = RbmSpec{};
    CHECK_THROWS_AS(Model{s1}, std::invalid_argument);
    ModelSpec s2 = micro_spec(PriorKind::rbm, 1.0);
    s2.rbm.reset();
    CHECK_THROWS_AS(Model{s2}, std::invalid_argument);
    // recon metric pairs with the decoder output
    ModelSpec s3 = micro_spec(PriorKind::gaussian, 1.0);
    s3.recon = ReconMetric::bce;
    CHECK_THROWS_WITH_AS(Model{s3}, doctest::Contains("bce"), std::invalid_argument);
    // discrete priors need a positive temperature
    ModelSpec s4 = micro_spec(PriorKind::bernoulli, 1.0);
    s4.lambda = 0.0;
    CHECK_THROWS_WITH_AS(Model{s4}, doctest::Contains("lambda"), std::invalid_argument);
}

TEST_CASE("beta = 0 reduces exactly to the reconstruction loss") {
    for (PriorKind prior : {PriorKind::gaussian, PriorKind::bernoulli, PriorKind::rbm}) {
        Model model(micro_spec(prior, 0.0));
        model.init_params(5);
        Tensor batch(Shape{4, 1, 2});
        Rng xr(6);
        for (auto& v : batch.data) v = xr.normal();
        Rng noise(7);
        LossParts parts = model.beta_elbo_loss(batch, noise);
        CHECK(std::abs(parts.total - parts.recon) <= 1e-12);
    }
}

TEST_CASE("beta = 1 gives the plain VAE objective") {
    Model model(micro_spec(PriorKind::gaussian, 1.0));
    model.init_params(5);
    Tensor batch(Shape{2, 1, 2}, 0.3);
    Rng noise(7);
    LossParts parts = model.beta_elbo_loss(batch, noise);
    CHECK(parts.total == doctest::Approx(parts.recon + parts.kl).epsilon(1e-12));
}

TEST_CASE("hand-set gaussian micro model matches an independent scalar evaluation") {
    const double beta = 0.7;
    Model model(micro_spec(PriorKind::gaussian, beta));
    model.init_params(1);
    const double wc = 0.8, bc = 0.1, gam = 1.2, bet = -0.05;
    const double wmu = 0.6, bmu = 0.2, wlv = -0.4, blv = 0.3;
    const double wd = 0.9, bd = -0.1, wt = 0.7, bt = 0.05;
    set_param(model, "enc.br0.0.conv.w", {wc});
    set_param(model, "enc.br0.0.conv.b", {bc});
    set_param(model, "enc.br0.0.bn.gamma", {gam});
    set_param(model, "enc.br0.0.bn.beta", {bet});
    set_param(model, "enc.head.mu.w", {wmu});
    set_param(model, "enc.head.mu.b", {bmu});
    set_param(model, "enc.head.logvar.w", {wlv});
    set_param(model, "enc.head.logvar.b", {blv});
    set_param(model, "dec.lin.w", {wd});
    set_param(model, "dec.lin.b", {bd});
    set_param(model, "dec.br0.0.tconv.w", {wt});
    set_param(model, "dec.br0.0.tconv.b", {bt});

    const double x0 = 0.4, x1 = -0.7;
    Tensor batch(Shape{1, 1, 2}, std::vector<double>{x0, x1});
    LossOptions opts;
    opts.update_bn = false;
    Rng noise(42);
    LossParts got = model.beta_elbo_loss(batch, noise, opts);

    // independent scalar route
    Rng noise2(42);
    const double eps = noise2.normal();
    const double y0 = wc * x0 + bc, y1 = wc * x1 + bc;
    const double m = 0.5 * (y0 + y1);
    const double var = 0.5 * ((y0 - m) * (y0 - m) + (y1 - m) * (y1 - m));
    const double sd = std::sqrt(var + 1e-5);
    auto bn = [&](double y) { return gam * (y - m) / sd + bet; };
    auto relu = [](double v) { return v > 0 ? v : 0.0; };
    const double o0 = relu(bn(y0)), o1 = relu(bn(y1));
    const double pooled = std::max(o0, o1);
    const double mu = wmu * pooled + bmu;
    const double lv_raw = wlv * pooled + blv;
    const double lv = std::log1p(std::exp(lv_raw));  // softplus-constrained log-variance head, the default
    const double z = mu + std::exp(0.5 * lv) * eps;
    const double dlin = wd * z + bd;
    const double up0 = dlin, up1 = dlin;  // linear upsample of a length-1 row
    const double r0 = wt * up0 + bt, r1 = wt * up1 + bt;
    const double recon = (r0 - x0) * (r0 - x0) + (r1 - x1) * (r1 - x1);
    const double kl = -0.5 * (1.0 + lv - mu * mu - std::exp(lv));
    const double total = recon + beta * kl;

    CHECK(got.recon == doctest::Approx(recon).epsilon(1e-9));
    CHECK(got.kl == doctest::Approx(kl).epsilon(1e-9));
    CHECK(got.total == doctest::Approx(total).epsilon(1e-9));
}

TEST_CASE("train: minibatch count, determinism, and chain persistence") {
    data::Dataset ds = micro_dataset(1280, 9);
    TrainConfig tc;
    tc.epochs = 2;
    tc.minibatch = 128;
    tc.lr = 1e-3;
    tc.seed = 11;

    // 1280 / 128 = 10 minibatches per epoch; chains advance k sweeps each
    Model model(micro_spec(PriorKind::rbm, 1.0));
    model.init_params(3);
    TrainStats stats = train(model, ds, nullptr, tc);
    CHECK(stats.rows.size() == 2);
    CHECK(model.chains().sweep_count == 2 * 10 * 4);

    // identical seeds give bit-identical stats
    Model m1(micro_spec(PriorKind::gaussian, 1.0));
    Model m2(micro_spec(PriorKind::gaussian, 1.0));
    m1.init_params(3);
    m2.init_params(3);
    TrainStats s1 = train(m1, ds, nullptr, tc);
    TrainStats s2 = train(m2, ds, nullptr, tc);
    REQUIRE(s1.rows.size() == s2.rows.size());
    for (std::size_t i = 0; i < s1.rows.size(); ++i) {
        CHECK(s1.rows[i].train_total == s2.rows[i].train_total);
        CHECK(s1.rows[i].train_recon == s2.rows[i].train_recon);
        CHECK(s1.rows[i].train_kl_weighted == s2.rows[i].train_kl_weighted);
    }

    // the stats identity total = recon + beta * kl holds per row
    for (const auto& r : s1.rows) {
        CHECK(std::abs(r.train_total - (r.train_recon + r.train_kl_weighted)) < 1e-9);
    }
}

TEST_CASE("training is invariant to the storage order of the training set") {
    data::Dataset ds = micro_dataset(256, 21);
    data::Dataset shuffled = ds;
    // rotate the instances: same multiset, different storage order
    const std::int64_t m = ds.instance_size();
    for (std::int64_t i = 0; i < ds.n; ++i) {
        const std::int64_t j = (i + 97) % ds.n;
        std::copy(ds.instance(j), ds.instance(j) + m, shuffled.instance(i));
        shuffled.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(j)];
    }
    TrainConfig tc;
    tc.epochs = 2;
    tc.minibatch = 64;
    tc.seed = 31;
    Model m1(micro_spec(PriorKind::gaussian, 1.0));
    Model m2(micro_spec(PriorKind::gaussian, 1.0));
    m1.init_params(4);
    m2.init_params(4);
    TrainStats s1 = train(m1, ds, nullptr, tc);
    TrainStats s2 = train(m2, shuffled, nullptr, tc);
    for (std::size_t i = 0; i < s1.rows.size(); ++i) {
        CHECK(s1.rows[i].train_total == s2.rows[i].train_total);
    }
}

TEST_CASE("validation passes do not move batch-norm stats or rbm chains") {
    data::Dataset tr = micro_dataset(128, 41);
    data::Dataset val = micro_dataset(64, 43);
    Model model(micro_spec(PriorKind::rbm, 1.0));
    model.init_params(6);
    TrainConfig tc;
    tc.epochs = 1;
    tc.minibatch = 64;
    tc.seed = 51;
    TrainStats stats = train(model, tr, &val, tc);
    REQUIRE(stats.rows.size() == 1);
    CHECK(stats.rows[0].has_val);
    // 2 train minibatches * k=4 sweeps; the validation pass adds none
    CHECK(model.chains().sweep_count == 2 * 4);
}

TEST_CASE("divergence restores the last good state and flags the stats") {
    data::Dataset ds = micro_dataset(128, 61);
    Model model(micro_spec(PriorKind::gaussian, 1.0));
    model.init_params(8);
    TrainConfig tc;
    tc.epochs = 6;
    tc.minibatch = 64;
    tc.lr = 1e200;  // guaranteed blow-up
    tc.seed = 71;
    TrainStats stats = train(model, ds, nullptr, tc);
    CHECK(stats.diverged);
    CHECK(model.store().value("enc.br0.0.conv.w").all_finite());
}

TEST_CASE("reconstruct draws the requested number of fresh samples") {
    Model model(micro_spec(PriorKind::gaussian, 1.0));
    model.init_params(9);
    Tensor batch(Shape{2, 1, 2}, 0.4);
    Rng rng(81);
    std::vector<Tensor> outs = reconstruct(model, batch, 10, rng);
    CHECK(outs.size() == 10);
    CHECK(outs[0].shape == Shape{2, 1, 2});
    // fresh noise: samples differ
    CHECK(outs[0].data != outs[1].data);

    // degenerate posterior: unconstrained logvar pushed to -inf makes the
    // samples coincide
    ModelSpec spec = micro_spec(PriorKind::gaussian, 1.0);
    spec.net.logvar_softplus = false;
    Model degen(spec);
    degen.init_params(9);
    degen.store().value("enc.head.logvar.w").data = {0.0};
    degen.store().value("enc.head.logvar.b").data = {-60.0};
    Rng rng2(82);
    std::vector<Tensor> outs2 = reconstruct(degen, batch, 3, rng2);
    for (std::int64_t i = 0; i < outs2[0].numel(); ++i) {
        CHECK(outs2[0][i] == doctest::Approx(outs2[1][i]).epsilon(1e-12));
        CHECK(outs2[1][i] == doctest::Approx(outs2[2][i]).epsilon(1e-12));
    }
}

TEST_CASE("training reduces the loss on the bundled synthetic generator") {
    data::SynthConfig sc;
    sc.n_instances = 160;
    sc.channels = 3;
    sc.window_len = 16;
    sc.anomaly_fraction = 0.05;
    sc.seed = 2;
    data::Dataset raw = data::synth_generate(sc);
    data::Dataset ds = data::normalize(raw, data::NormMode::zscore);

    ModelSpec spec;
    spec.prior = PriorKind::gaussian;
    spec.beta = 1.0;
    spec.data_window = 16;
    spec.net.in_channels = 3;
    spec.net.window_len = 16;
    spec.net.branches = {{4, 3}};
    spec.net.blocks_per_branch = 2;
    spec.net.latent_dim = 4;
    spec.net.head_kind = nets::HeadKind::gaussian;
    spec.net.decoder_output = nets::DecoderOutput::linear;
    Model model(spec);
    model.init_params(10);
    TrainConfig tc;
    tc.epochs = 30;
    tc.minibatch = 32;
    tc.lr = 3e-3;
    tc.seed = 91;
    TrainStats stats = train(model, ds, nullptr, tc);
    REQUIRE(stats.rows.size() == 30);
    CHECK(stats.rows.back().train_total < stats.rows.front().train_total);
}

TEST_CASE("full-loss gradients for bernoulli and rbm priors (chains frozen)") {
    for (PriorKind prior : {PriorKind::bernoulli, PriorKind::rbm}) {
        Model model(micro_spec(prior, 1.5));
        model.init_params(12);
        if (prior == PriorKind::rbm) {
            Rng crng(13);
            rbm::pcd_update(model.chains(), model.rbm_params(), 3, crng);
        }
        Tensor batch(Shape{3, 1, 2});
        Rng xr(14);
        for (auto& v : batch.data) v = xr.normal();
        LossOptions opts;
        opts.advance_chains = false;
        opts.update_bn = false;
        std::unordered_map<std::string, Tensor> grads;
        {
            Rng noise(909);
            model.beta_elbo_loss(batch, noise, opts, &grads);
        }
        for (auto& e : model.store().entries()) {
            if (!e.trainable) continue;
            Tensor fd = diff::finite_difference_grad(
                [&](const Tensor& probe) {
                    Tensor save = model.store().value(e.name);
                    model.store().value(e.name) = probe;
                    Rng noise(909);
                    const double v = model.beta_elbo_loss(batch, noise, opts, nullptr).total;
                    model.store().value(e.name) = save;
                    return v;
                },
                e.value, 1e-5);
            INFO("prior ", static_cast<int>(prior), " parameter ", e.name);
            CHECK(diff::max_rel_error(grads.at(e.name), fd) <= 1e-4);
        }
    }
}
