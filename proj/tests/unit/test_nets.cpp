#include <doctest.h>

#include <cmath>

#include "lpad/fd_check.hpp"
#include "lpad/model.hpp"
#include "lpad/nets.hpp"
#include "lpad/rng.hpp"

using namespace lpad;
using namespace lpad::nets;

namespace {

NetConfig tiny_cfg() {
    NetConfig cfg;
    cfg.in_channels = 2;
    cfg.window_len = 8;
    cfg.branches = {{2, 3}};
    cfg.blocks_per_branch = 1;
    cfg.latent_dim = 4;
    cfg.head_kind = HeadKind::gaussian;
    cfg.decoder_output = DecoderOutput::linear;
    return cfg;
}

void zero_params_matching(ParamStore& store, const std::string& substr) {
    for (auto& e : store.entries()) {
        if (e.name.find(substr) != std::string::npos) {
            for (auto& v : e.value.data) v = 0.0;
        }
    }
}

}  // namespace

TEST_CASE("NetConfig validation lists the violated invariant") {
    NetConfig cfg;
    cfg.in_channels = 7;
    cfg.window_len = 60;  // 60 mod 8 != 0 with three pooling blocks
    cfg.blocks_per_branch = 3;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("divisible"), std::invalid_argument);

    cfg.window_len = 64;
    CHECK_NOTHROW(cfg.validate());
    cfg.window_len = 60;  // but 60 mod 4 == 0: fine with two blocks
    cfg.blocks_per_branch = 2;
    CHECK_NOTHROW(cfg.validate());

    cfg.window_len = 64;
    cfg.branches = {{32, 4}};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("odd"), std::invalid_argument);
    cfg.branches = {{32, 3}};
    cfg.latent_dim = 0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("latent"), std::invalid_argument);
}

TEST_CASE("encoder head shapes for the published configurations") {
    Rng rng(1);
    {
        // 7 channels, padded 60 -> 64, three branches, gaussian head of 256
        NetConfig cfg;
        cfg.in_channels = 7;
        cfg.window_len = 64;
        cfg.branches = {{32, 3}, {32, 5}, {32, 7}};
        cfg.blocks_per_branch = 2;
        cfg.latent_dim = 256;
        cfg.head_kind = HeadKind::gaussian;
        Encoder enc(cfg);
        ParamStore store;
        Rng r2(2);
        enc.register_params(store, r2);
        diff::Tape t(diff::Mode::eval);
        ParamBinder bind(t, store);
        Tensor x(Shape{2, 7, 64});
        for (auto& v : x.data) v = rng.normal();
        EncoderHead head = enc.forward(t, bind, store, t.constant(x), false);
        CHECK(t.val(head.mu).shape == Shape{2, 256});
        CHECK(t.val(head.logvar).shape == Shape{2, 256});
    }
    {
        // bernoulli head of 64: one log-odds vector
        NetConfig cfg;
        cfg.in_channels = 7;
        cfg.window_len = 64;
        cfg.branches = {{8, 3}, {8, 5}};
        cfg.blocks_per_branch = 2;
        cfg.latent_dim = 64;
        cfg.head_kind = HeadKind::bernoulli;
        Encoder enc(cfg);
        ParamStore store;
        Rng r2(2);
        enc.register_params(store, r2);
        diff::Tape t(diff::Mode::eval);
        ParamBinder bind(t, store);
        Tensor x(Shape{3, 7, 64}, 0.25);
        EncoderHead head = enc.forward(t, bind, store, t.constant(x), false);
        CHECK(head.mu == -1);
        CHECK(t.val(head.log_alpha).shape == Shape{3, 64});
    }
}

TEST_CASE("zero-initialized heads give mu = 0 and logvar = softplus(0)") {
    NetConfig cfg = tiny_cfg();
    Encoder enc(cfg);
    ParamStore store;
    Rng rng(3);
    enc.register_params(store, rng);
    zero_params_matching(store, ".head.");

    diff::Tape t(diff::Mode::eval);
    ParamBinder bind(t, store);
    Rng xr(4);
    Tensor x(Shape{3, 2, 8});
    for (auto& v : x.data) v = xr.normal();
    EncoderHead head = enc.forward(t, bind, store, t.constant(x), false);
    for (double v : t.val(head.mu).data) CHECK(v == doctest::Approx(0.0));
    for (double v : t.val(head.logvar).data) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // bernoulli variant: zero head -> log odds 0 (q = 1/2)
    NetConfig bc = tiny_cfg();
    bc.head_kind = HeadKind::bernoulli;
    Encoder benc(bc);
    ParamStore bstore;
    Rng r5(5);
    benc.register_params(bstore, r5);
    zero_params_matching(bstore, ".head.");
    diff::Tape t2(diff::Mode::eval);
    ParamBinder bind2(t2, bstore);
    EncoderHead bh = benc.forward(t2, bind2, bstore, t2.constant(x), false);
    for (double v : t2.val(bh.log_alpha).data) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("decoder inverts the encoder shape and zero init gives sigmoid 0.5") {
    {
        NetConfig cfg;
        cfg.in_channels = 10;
        cfg.window_len = 160;
        cfg.branches = {{8, 3}, {8, 5}};
        cfg.blocks_per_branch = 2;
        cfg.latent_dim = 32;
        cfg.head_kind = HeadKind::bernoulli;
        cfg.decoder_output = DecoderOutput::sigmoid;
        Decoder dec(cfg);
        ParamStore store;
        Rng rng(6);
        dec.register_params(store, rng);
        diff::Tape t(diff::Mode::eval);
        ParamBinder bind(t, store);
        Tensor z(Shape{2, 32}, 0.3);
        diff::Var pre = dec.forward(t, bind, store, t.constant(z), false);
        CHECK(t.val(pre).shape == Shape{2, 10, 160});
        diff::Var out = dec.activate(t, pre);
        for (double v : t.val(out).data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    {
        NetConfig cfg = tiny_cfg();
        cfg.decoder_output = DecoderOutput::sigmoid;
        Decoder dec(cfg);
        ParamStore store;
        Rng rng(7);
        dec.register_params(store, rng);
        for (auto& e : store.entries())
            for (auto& v : e.value.data) v = 0.0;
        for (auto& e : store.entries())
            if (e.name.find("rvar") != std::string::npos)
                for (auto& v : e.value.data) v = 1.0;
        diff::Tape t(diff::Mode::eval);
        ParamBinder bind(t, store);
        diff::Var out = dec.activate(t, dec.forward(t, bind, store, t.constant(Tensor(Shape{1, 4})), false));
        for (double v : t.val(out).data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
    }
    {
        // linear mode admits negative outputs
        NetConfig cfg = tiny_cfg();
        Decoder dec(cfg);
        ParamStore store;
        Rng rng(8);
        dec.register_params(store, rng);
        diff::Tape t(diff::Mode::eval);
        ParamBinder bind(t, store);
        Tensor z(Shape{4, 4});
        Rng zr(9);
        for (auto& v : z.data) v = 3.0 * zr.normal();
        const Tensor& out = t.val(dec.activate(t, dec.forward(t, bind, store, t.constant(z), false)));
        bool has_neg = false;
        for (double v : out.data) has_neg = has_neg || v < 0.0;
        CHECK(has_neg);
    }
}

TEST_CASE("parameter count formula matches construction") {
    auto check_counts = [](NetConfig cfg) {
        Encoder enc(cfg);
        Decoder dec(cfg);
        ParamStore es, ds;
        Rng r1(10), r2(11);
        enc.register_params(es, r1);
        dec.register_params(ds, r2);
        CHECK(es.trainable_count() == cfg.encoder_param_count());
        CHECK(ds.trainable_count() == cfg.decoder_param_count());
    };
    check_counts(tiny_cfg());
    NetConfig big;
    big.in_channels = 7;
    big.window_len = 64;
    big.branches = {{32, 3}, {32, 5}, {32, 7}};
    big.blocks_per_branch = 2;
    big.latent_dim = 64;
    big.head_kind = HeadKind::bernoulli;
    check_counts(big);
}

TEST_CASE("eval-mode encode/decode is bit-identical across runs") {
    vae::ModelSpec spec;
    spec.prior = vae::PriorKind::gaussian;
    spec.net = tiny_cfg();
    spec.data_window = 8;
    spec.beta = 1.0;
    vae::Model m1(spec), m2(spec);
    m1.init_params(123);
    m2.init_params(123);
    Rng xr(12);
    Tensor x(Shape{2, 2, 8});
    for (auto& v : x.data) v = xr.normal();
    vae::PosteriorValues p1 = m1.encode(x);
    vae::PosteriorValues p2 = m2.encode(x);
    CHECK(p1.mu.data == p2.mu.data);
    CHECK(p1.logvar.data == p2.logvar.data);
    Tensor z(Shape{2, 4}, 0.7);
    CHECK(m1.decode(z).data == m2.decode(z).data);
}

TEST_CASE("full beta-ELBO gradient matches finite differences on the tiny config") {
    vae::ModelSpec spec;
    spec.prior = vae::PriorKind::gaussian;
    spec.net = tiny_cfg();
    spec.data_window = 8;
    spec.beta = 2.5;
    vae::Model model(spec);
    model.init_params(77);

    Rng xr(13);
    Tensor batch(Shape{3, 2, 8});
    for (auto& v : batch.data) v = xr.normal();

    vae::LossOptions opts;
    opts.advance_chains = false;
    opts.update_bn = false;

    std::unordered_map<std::string, Tensor> grads;
    {
        Rng noise(555);
        model.beta_elbo_loss(batch, noise, opts, &grads);
    }
    auto loss_value = [&]() {
        Rng noise(555);
        return model.beta_elbo_loss(batch, noise, opts, nullptr).total;
    };
    for (auto& e : model.store().entries()) {
        if (!e.trainable) continue;
        Tensor fd = diff::finite_difference_grad(
            [&](const Tensor& probe) {
                Tensor save = model.store().value(e.name);
                model.store().value(e.name) = probe;
                const double v = loss_value();
                model.store().value(e.name) = save;
                return v;
            },
            e.value, 1e-5);
        INFO("parameter ", e.name);
        CHECK(diff::max_rel_error(grads.at(e.name), fd) <= 1e-4);
    }
}
