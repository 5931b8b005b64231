#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "lpad/checkpoint.hpp"
#include "lpad/fd_check.hpp"
#include "lpad/param_store.hpp"
#include "lpad/rng.hpp"
#include "lpad/tape.hpp"

using namespace lpad;
using namespace lpad::diff;

namespace {

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
}

// FD check of a unary tensor op through a sum reduction.
double op_rel_error(const std::function<Var(Tape&, Var)>& op, const Tensor& x) {
    Tape t(Mode::train);
    Var vx = t.leaf(x);
    Var loss = sum(t, op(t, vx));
    t.backward(loss);
    Tensor analytic = t.grad(vx);
    Tensor fd = finite_difference_grad(
        [&](const Tensor& p) {
            Tape t2(Mode::train);
            Var v = t2.leaf(p);
            return t2.val(sum(t2, op(t2, v))).item();
        },
        x, 1e-5);
    return max_rel_error(analytic, fd);
}

}  // namespace

TEST_CASE("tensor shape invariants") {
    CHECK_THROWS(Tensor(Shape{2, 0}));
    CHECK_THROWS(Tensor(Shape{2, 3}, std::vector<double>{1.0}));
    Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.all_finite());
}

TEST_CASE("evaluate examples: sigmoid, softplus, maxpool") {
    Tape t(Mode::eval);
    Var x = t.constant(Tensor::scalar(0.0));
    CHECK(t.val(sigmoid(t, x)).item() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(t.val(softplus(t, x)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Var m = t.constant(Tensor(Shape{1, 1, 4}, {1, 3, 2, 5}));
    const Tensor& pooled = t.val(maxpool2(t, m));
    CHECK(pooled.shape == Shape{1, 1, 2});
    CHECK(pooled[0] == 3.0);
    CHECK(pooled[1] == 5.0);
}

TEST_CASE("backward examples: sigmoid', x^2, mean") {
    {
        Tape t;
        Var x = t.leaf(Tensor::scalar(0.0));
        t.backward(sigmoid(t, x));
        CHECK(t.grad(x)[0] == doctest::Approx(0.25).epsilon(1e-12));
    }
    {
        Tape t;
        Var x = t.leaf(Tensor::scalar(3.0));
        t.backward(mul(t, x, x));
        CHECK(t.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-12));
    }
    {
        Tape t;
        Var x = t.leaf(Tensor(Shape{5}, 2.0));
        t.backward(mean(t, x));
        for (std::int64_t i = 0; i < 5; ++i) CHECK(t.grad(x)[i] == doctest::Approx(0.2).epsilon(1e-12));
    }
}

TEST_CASE("backward usage errors") {
    Tape t;
    CHECK_THROWS_AS(t.backward(0), std::logic_error);  // nothing recorded
    Var x = t.leaf(Tensor(Shape{2}, 1.0));
    CHECK_THROWS_AS(t.grad(x), std::logic_error);  // grad before backward
    CHECK_THROWS_AS(t.backward(x), std::logic_error);  // non-scalar root
}

TEST_CASE("finite_difference_grad examples") {
    auto square = [](const Tensor& x) { return x[0] * x[0]; };
    Tensor x = Tensor::scalar(3.0);
    Tensor g = finite_difference_grad(square, x, 1e-5);
    CHECK(std::abs(g[0] - 6.0) < 1e-8);

    auto sum_sigmoid = [](const Tensor& v) {
        double acc = 0;
        for (double e : v.data) acc += 1.0 / (1.0 + std::exp(-e));
        return acc;
    };
    Tensor zeros(Shape{4});
    Tensor g2 = finite_difference_grad(sum_sigmoid, zeros, 1e-5);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(g2[i] == doctest::Approx(0.25).epsilon(1e-7));

    auto constant = [](const Tensor&) { return 7.0; };
    Tensor g3 = finite_difference_grad(constant, zeros, 1e-5);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(g3[i] == 0.0);

    CHECK_THROWS(finite_difference_grad(square, x, 0.0));
    auto blows_up = [](const Tensor& v) { return std::log(v[0] - 100.0); };
    CHECK_THROWS_WITH_AS(finite_difference_grad(blows_up, x, 1e-5),
                         doctest::Contains("coordinate"), std::runtime_error);
}

TEST_CASE("every primitive passes the gradient oracle") {
    Rng rng(7);
    const Tensor x3 = randn(Shape{2, 3, 8}, rng);

    CHECK(op_rel_error([](Tape& t, Var v) { return relu(t, v); }, randn(Shape{17}, rng)) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return sigmoid(t, v); }, randn(Shape{17}, rng)) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return softplus(t, v); }, randn(Shape{17}, rng)) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return exp(t, v); }, randn(Shape{17}, rng)) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return log(t, add_scalar(t, mul(t, v, v), 1.0)); },
                       randn(Shape{9}, rng)) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return scale(t, v, -2.5); }, randn(Shape{9}, rng)) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return maxpool2(t, v); }, x3) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return upsample2(t, v, Upsample::linear); }, x3) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return upsample2(t, v, Upsample::nearest); }, x3) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return pad_right_edge(t, v, 3); }, x3) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return crop_right(t, v, 3); }, x3) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return slice_channels(t, v, 1, 3); }, x3) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return reshape(t, v, Shape{6, 8}); }, x3) < 1e-4);
    CHECK(op_rel_error([](Tape& t, Var v) { return mean(t, v); }, randn(Shape{11}, rng)) < 1e-4);

    // binary ops: perturb each input in turn
    {
        Tensor a = randn(Shape{6}, rng), b = randn(Shape{6}, rng);
        for (int which = 0; which < 2; ++which) {
            auto run = [&](const Tensor& probe) {
                Tape t;
                Var va = t.leaf(which == 0 ? probe : a);
                Var vb = t.leaf(which == 1 ? probe : b);
                return t.val(sum(t, mul(t, sub(t, va, vb), add(t, va, vb)))).item();
            };
            Tape t;
            Var va = t.leaf(a), vb = t.leaf(b);
            t.backward(sum(t, mul(t, sub(t, va, vb), add(t, va, vb))));
            const Tensor& an = t.grad(which == 0 ? va : vb);
            Tensor fd = finite_difference_grad(run, which == 0 ? a : b, 1e-5);
            CHECK(max_rel_error(an, fd) < 1e-4);
        }
    }
    // matmul / bias_add_row
    {
        Tensor a = randn(Shape{3, 4}, rng), b = randn(Shape{4, 5}, rng), c = randn(Shape{5}, rng);
        auto build = [&](Tape& t, Var va, Var vb, Var vc) {
            return sum(t, bias_add_row(t, matmul(t, va, vb), vc));
        };
        Tape t;
        Var va = t.leaf(a), vb = t.leaf(b), vc = t.leaf(c);
        t.backward(build(t, va, vb, vc));
        auto fd_of = [&](int which, const Tensor& x0) {
            return finite_difference_grad(
                [&](const Tensor& p) {
                    Tape t2;
                    Var w0 = t2.leaf(which == 0 ? p : a);
                    Var w1 = t2.leaf(which == 1 ? p : b);
                    Var w2 = t2.leaf(which == 2 ? p : c);
                    return t2.val(build(t2, w0, w1, w2)).item();
                },
                x0, 1e-5);
        };
        CHECK(max_rel_error(t.grad(va), fd_of(0, a)) < 1e-4);
        CHECK(max_rel_error(t.grad(vb), fd_of(1, b)) < 1e-4);
        CHECK(max_rel_error(t.grad(vc), fd_of(2, c)) < 1e-4);
    }
    // conv1d / tconv1d / concat / batchnorm in one composite graph
    {
        Tensor w = randn(Shape{4, 3, 5}, rng, 0.4);
        Tensor bb = randn(Shape{4}, rng, 0.1);
        Tensor wt = randn(Shape{4, 2, 3}, rng, 0.4);
        Tensor bt = randn(Shape{2}, rng, 0.1);
        Tensor gamma = randn(Shape{4}, rng, 0.2);
        for (auto& v : gamma.data) v += 1.0;
        Tensor beta = randn(Shape{4}, rng, 0.2);
        Tensor rmean(Shape{4}), rvar(Shape{4}, 1.0);
        auto build = [&](Tape& t, Var vx, Var vw, Var vb, Var vg, Var vbe, Var vwt, Var vbt) {
            Tensor rm = rmean, rv = rvar;
            Var y = conv1d(t, vx, vw, vb);
            y = batchnorm1d(t, y, vg, vbe, rm, rv, 0.1, false);
            y = relu(t, y);
            Var z = tconv1d(t, y, vwt, vbt);
            Var cc = concat_channels(t, {z, vx});
            return sum(t, mul(t, cc, cc));
        };
        Tape t;
        Var vx = t.leaf(x3), vw = t.leaf(w), vb = t.leaf(bb), vg = t.leaf(gamma), vbe = t.leaf(beta),
            vwt = t.leaf(wt), vbt = t.leaf(bt);
        t.backward(build(t, vx, vw, vb, vg, vbe, vwt, vbt));
        const Tensor* inputs[] = {&x3, &w, &bb, &gamma, &beta, &wt, &bt};
        Var vars[] = {vx, vw, vb, vg, vbe, vwt, vbt};
        for (int which = 0; which < 7; ++which) {
            Tensor fd = finite_difference_grad(
                [&](const Tensor& p) {
                    Tape t2;
                    Var nv[7];
                    for (int i = 0; i < 7; ++i) nv[i] = t2.leaf(i == which ? p : *inputs[i]);
                    return t2.val(build(t2, nv[0], nv[1], nv[2], nv[3], nv[4], nv[5], nv[6])).item();
                },
                *inputs[which], 1e-5);
            CHECK(max_rel_error(t.grad(vars[which]), fd) < 1e-4);
        }
    }
}

TEST_CASE("forward is pure: identical seeds give bit-identical outputs") {
    auto run = [] {
        Rng rng(99);
        Tensor x = randn(Shape{2, 2, 8}, rng);
        Tensor w = randn(Shape{3, 2, 3}, rng);
        Tensor b = randn(Shape{3}, rng);
        Tape t(Mode::train);
        Var y = conv1d(t, t.constant(x), t.constant(w), t.constant(b));
        return t.val(sum(t, sigmoid(t, y))).item();
    };
    CHECK(run() == run());
}

TEST_CASE("batch-norm eval output is independent of batch composition") {
    Rng rng(5);
    Tensor gamma(Shape{2}, 1.3), beta(Shape{2}, -0.2);
    Tensor rmean(Shape{2}, 0.4), rvar(Shape{2}, 2.0);
    Tensor a = randn(Shape{1, 2, 4}, rng);
    Tensor big(Shape{3, 2, 4});
    // instance 0 of `big` equals `a`; the rest is other data
    for (std::int64_t i = 0; i < a.numel(); ++i) big[i] = a[i];
    for (std::int64_t i = a.numel(); i < big.numel(); ++i) big[i] = rng.normal();

    auto eval_bn = [&](const Tensor& x) {
        Tape t(Mode::eval);
        Tensor rm = rmean, rv = rvar;
        Var y = batchnorm1d(t, t.constant(x), t.constant(gamma), t.constant(beta), rm, rv, 0.1, false);
        return t.val(y);
    };
    Tensor alone = eval_bn(a);
    Tensor batched = eval_bn(big);
    for (std::int64_t i = 0; i < alone.numel(); ++i) CHECK(alone[i] == batched[i]);
}

TEST_CASE("batch-norm train mode updates running stats") {
    Rng rng(6);
    Tensor x = randn(Shape{4, 2, 8}, rng);
    Tensor gamma(Shape{2}, 1.0), beta(Shape{2});
    Tensor rm(Shape{2}), rv(Shape{2}, 1.0);
    Tape t(Mode::train);
    batchnorm1d(t, t.constant(x), t.constant(gamma), t.constant(beta), rm, rv, 0.1, true);
    CHECK(rm[0] != 0.0);
    CHECK(rv[0] != 1.0);
}

TEST_CASE("shape errors name the op and extents") {
    Tape t;
    Var a = t.constant(Tensor(Shape{2, 3}, 0.0));
    Var b = t.constant(Tensor(Shape{3, 2}, 0.0));
    CHECK_THROWS_WITH_AS(add(t, a, b), doctest::Contains("add"), std::invalid_argument);
    Var x = t.constant(Tensor(Shape{1, 3, 8}, 0.0));
    Var w = t.constant(Tensor(Shape{4, 2, 3}, 0.0));
    Var bias = t.constant(Tensor(Shape{4}, 0.0));
    CHECK_THROWS_WITH_AS(conv1d(t, x, w, bias), doctest::Contains("conv1d"), std::invalid_argument);
}

TEST_CASE("adam matches a scripted update") {
    ParamStore store;
    store.add("p", Tensor(Shape{2}, std::vector<double>{1.0, -2.0}));
    AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
    std::unordered_map<std::string, Tensor> grads;
    grads.emplace("p", Tensor(Shape{2}, std::vector<double>{0.5, -1.0}));
    store.adam_step(grads, cfg);
    // first step: mhat = g, vhat = g^2, so update is lr * g / (|g| + eps)
    CHECK(store.value("p")[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(store.value("p")[1] == doctest::Approx(-2.0 + 0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));

    CHECK_THROWS(store.add("p", Tensor(Shape{1})));  // duplicate name
}

TEST_CASE("checkpoint round-trips the store, chains, and stats") {
    Rng rng(11);
    Checkpoint ckpt;
    ckpt.config_snapshot = "k = v\n";
    ckpt.store.add("w", randn(Shape{3, 2}, rng));
    ckpt.store.add("buf", randn(Shape{2}, rng), false);
    ckpt.store.entries()[0].m = randn(Shape{3, 2}, rng);
    ckpt.store.entries()[0].v = randn(Shape{3, 2}, rng);
    ckpt.store.set_step_count(42);
    rbm::RbmChains chains = rbm::RbmChains::zeros(3, 2, 2);
    chains.v[1] = 1;
    chains.h[4] = 1;
    chains.sweep_count = 17;
    ckpt.chains = chains;
    data::NormStats norm;
    norm.mode = data::NormMode::minmax;
    norm.p1 = {0.0, -1.0};
    norm.p2 = {2.0, 3.5};
    norm.degenerate = {0, 0};
    ckpt.norm = norm;

    const std::string path = (std::filesystem::temp_directory_path() / "lpad_test.ckpt").string();
    save_checkpoint(path, ckpt);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.config_snapshot == ckpt.config_snapshot);
    CHECK(back.store.entries().size() == 2);
    CHECK(back.store.value("w").data == ckpt.store.value("w").data);
    CHECK(back.store.entries()[0].m.data == ckpt.store.entries()[0].m.data);
    CHECK(back.store.step_count() == 42);
    REQUIRE(back.chains.has_value());
    CHECK(back.chains->v == chains.v);
    CHECK(back.chains->sweep_count == 17);
    REQUIRE(back.norm.has_value());
    CHECK(*back.norm == norm);
    std::filesystem::remove(path);
}
