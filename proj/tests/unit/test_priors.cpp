#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lpad/fd_check.hpp"
#include "lpad/priors.hpp"
#include "lpad/rng.hpp"

using namespace lpad;
using namespace lpad::priors;

namespace {

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Eq-19-style enumeration oracle: sum over k in {0,1} of q^k (1-q)^(1-k)
// log(q^k (1-q)^(1-k) / 0.5), per latent dimension.
double kl_bernoulli_enum(const std::vector<double>& qs) {
    double acc = 0.0;
    for (double q : qs) {
        for (int k = 0; k <= 1; ++k) {
            const double mass = (k ? q : 1.0 - q);
            acc += mass * std::log(mass / 0.5);
        }
    }
    return acc;
}

}  // namespace

TEST_CASE("reparameterize_gaussian examples") {
    auto t = [](double v) { return Tensor::scalar(v); };
    CHECK(reparameterize_gaussian(t(0), t(1), t(0.5)).z[0] == doctest::Approx(0.5));
    CHECK(reparameterize_gaussian(t(2), t(1e-14), t(123.0)).z[0] == doctest::Approx(2.0));
    CHECK(reparameterize_gaussian(t(1), t(2), t(-1)).z[0] == doctest::Approx(-1.0));
    CHECK_THROWS_AS(reparameterize_gaussian(t(0), t(0), t(0)), std::domain_error);
    CHECK_THROWS_AS(reparameterize_gaussian(t(0), t(-1), t(0)), std::domain_error);
}

TEST_CASE("kl_gaussian_closed_form examples") {
    auto t = [](double v) { return Tensor::scalar(v); };
    CHECK(kl_gaussian_closed_form(t(0), t(0)) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(kl_gaussian_closed_form(t(1), t(0)) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl_gaussian_closed_form(t(0), t(1)) ==
          doctest::Approx((std::exp(1.0) - 2.0) / 2.0).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(kl_gaussian_closed_form(t(0), t(800)), doctest::Contains("coordinate"),
                         std::runtime_error);
}

TEST_CASE("kl_gaussian matches a Monte Carlo estimate of E_q[log q - log p]") {
    Rng rng(31);
    for (int rep = 0; rep < 4; ++rep) {
        const std::int64_t L = 1 + static_cast<std::int64_t>(rng.below(8));
        Tensor mu(Shape{L}), lv(Shape{L});
        for (auto& v : mu.data) v = rng.normal();
        for (auto& v : lv.data) v = 0.8 * rng.normal();
        const double exact = kl_gaussian_closed_form(mu, lv);

        const int n = 100000;
        double acc = 0.0, acc2 = 0.0;
        for (int s = 0; s < n; ++s) {
            double val = 0.0;
            for (std::int64_t l = 0; l < L; ++l) {
                const double sd = std::exp(0.5 * lv[l]);
                const double z = mu[l] + sd * rng.normal();
                const double logq = -0.5 * std::log(2 * M_PI) - 0.5 * lv[l] -
                                    (z - mu[l]) * (z - mu[l]) / (2 * sd * sd);
                const double logp = -0.5 * std::log(2 * M_PI) - 0.5 * z * z;
                val += logq - logp;
            }
            acc += val;
            acc2 += val * val;
        }
        const double mean = acc / n;
        const double se = std::sqrt(std::max(0.0, acc2 / n - mean * mean) / n);
        CHECK(std::abs(mean - exact) < 3.0 * se + 1e-12);
    }
}

TEST_CASE("sample_concrete examples") {
    auto t = [](double v) { return Tensor::scalar(v); };
    CHECK(sample_concrete(t(0), t(0.5), 0.77).z[0] == doctest::Approx(0.5).epsilon(1e-12));
    // log_alpha=0, rho=0.9, lambda=0.1 -> sigmoid(ln(9)/0.1)
    const double expect = sigmoid_d(std::log(9.0) / 0.1);
    CHECK(sample_concrete(t(0), t(0.9), 0.1).z[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(1.0 - expect == doctest::Approx(2.85e-10).epsilon(0.05));
    // lambda -> infinity pushes every draw to 1/2
    CHECK(sample_concrete(t(3.0), t(0.123), 1e9).z[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK_THROWS_AS(sample_concrete(t(0), t(0.5), 0.0), std::domain_error);
    // relaxed draws stay strictly inside (0,1) even for extreme noise
    ConcreteSample s = sample_concrete(t(0), t(1.0 - 1e-16), 1.0);
    CHECK(s.z[0] < 1.0);
    CHECK(s.z[0] > 0.0);
}

TEST_CASE("sample_bernoulli_hard examples") {
    auto t = [](double v) { return Tensor::scalar(v); };
    CHECK(sample_bernoulli_hard(t(50.0), t(0.999999)).z[0] == 1.0);
    CHECK(sample_bernoulli_hard(t(0.0), t(0.3)).z[0] == 1.0);  // 0.3 < 0.5
    CHECK(sample_bernoulli_hard(t(0.0), t(0.5)).z[0] == 0.0);  // strict inequality

    // empirical mean over 1e5 draws at p = 0.8 within a 3-sigma binomial bound
    Rng rng(17);
    const double p = 0.8;
    const double log_alpha = std::log(p / (1 - p));
    const int n = 100000;
    double acc = 0.0;
    Tensor la = Tensor::scalar(log_alpha);
    for (int i = 0; i < n; ++i) acc += sample_bernoulli_hard(la, Tensor::scalar(rng.uniform())).z[0];
    const double bound = 3.0 * std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(acc / n - p) < bound);
}

TEST_CASE("kl_bernoulli examples and oracle agreement") {
    // q = 0.5 everywhere: zero in both modes, for any z
    Tensor la0(Shape{4});
    Tensor z(Shape{4}, std::vector<double>{0.0, 1.0, 0.25, 0.75});
    CHECK(kl_bernoulli(la0, z, KlMode::mc) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(kl_bernoulli(la0, z, KlMode::analytic) == doctest::Approx(0.0).epsilon(1e-14));

    // analytic at q = 0.8 equals the Eq-19 enumeration and the hand value
    Tensor la = Tensor::scalar(std::log(4.0));  // odds 4 -> q = 0.8
    const double expect = 0.8 * std::log(1.6) + 0.2 * std::log(0.4);
    CHECK(kl_bernoulli(la, Tensor::scalar(0.0), KlMode::analytic) ==
          doctest::Approx(expect).epsilon(1e-12));
    CHECK(kl_bernoulli_enum({0.8}) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(0.19274).epsilon(1e-4));

    // mc averaged over resampled hard z matches analytic within 3 SE
    Rng rng(23);
    const int n = 100000;
    double acc = 0.0, acc2 = 0.0;
    for (int i = 0; i < n; ++i) {
        Tensor zc = sample_bernoulli_hard(la, Tensor::scalar(rng.uniform())).z;
        const double v = kl_bernoulli(la, zc, KlMode::mc);
        acc += v;
        acc2 += v * v;
    }
    const double mean = acc / n;
    const double se = std::sqrt(std::max(0.0, acc2 / n - mean * mean) / n);
    CHECK(std::abs(mean - expect) < 3.0 * se);

    // saturation clamps and flags
    bool clamped = false;
    kl_bernoulli(Tensor::scalar(100.0), Tensor::scalar(1.0), KlMode::mc, &clamped);
    CHECK(clamped);
}

TEST_CASE("kl is invariant under latent permutation") {
    Rng rng(41);
    const std::int64_t L = 6;
    Tensor mu(Shape{L}), lv(Shape{L}), la(Shape{L});
    for (auto& v : mu.data) v = rng.normal();
    for (auto& v : lv.data) v = rng.normal();
    for (auto& v : la.data) v = rng.normal();
    std::vector<std::int64_t> perm = {3, 0, 5, 1, 4, 2};
    Tensor mu2(Shape{L}), lv2(Shape{L}), la2(Shape{L});
    for (std::int64_t i = 0; i < L; ++i) {
        mu2[i] = mu[perm[i]];
        lv2[i] = lv[perm[i]];
        la2[i] = la[perm[i]];
    }
    CHECK(kl_gaussian_closed_form(mu, lv) == doctest::Approx(kl_gaussian_closed_form(mu2, lv2)).epsilon(1e-12));
    CHECK(kl_bernoulli(la, Tensor(Shape{L}), KlMode::analytic) ==
          doctest::Approx(kl_bernoulli(la2, Tensor(Shape{L}), KlMode::analytic)).epsilon(1e-12));
}

TEST_CASE("concrete converges to the hard sample as lambda -> 0") {
    // The relaxed draw switches at rho = sigmoid(-log alpha); the hard rule
    // `1 iff rho < p` switches at rho = p. The pointwise limit therefore pairs
    // the relaxed draw at rho with the hard draw at the antithetic 1 - rho
    // (the same measure-preserving coupling).
    Rng rng(53);
    const double lambda = 1e-4;
    int checked = 0;
    for (int i = 0; i < 10000; ++i) {
        const double la = 2.0 * rng.normal();
        const double rho = rng.uniform();
        // exclude a band around the switching point rho = sigmoid(-la)
        if (std::abs(rho - sigmoid_d(-la)) < 1e-3) continue;
        ++checked;
        const double relaxed = sample_concrete(Tensor::scalar(la), Tensor::scalar(rho), lambda).z[0];
        const double hard =
            sample_bernoulli_hard(Tensor::scalar(la), Tensor::scalar(1.0 - rho)).z[0];
        CHECK(std::abs(relaxed - hard) < 1e-3);
    }
    CHECK(checked > 9000);
}

TEST_CASE("tape builders agree with the plain forms and differentiate") {
    Rng rng(67);
    const std::int64_t B = 3, L = 5;
    Tensor mu(Shape{B, L}), lv(Shape{B, L}), la(Shape{B, L}), eps(Shape{B, L}), rho(Shape{B, L});
    for (auto& v : mu.data) v = rng.normal();
    for (auto& v : lv.data) v = 0.5 * rng.normal();
    for (auto& v : la.data) v = rng.normal();
    for (auto& v : eps.data) v = rng.normal();
    for (auto& v : rho.data) v = rng.uniform();

    {
        diff::Tape t;
        diff::Var vmu = t.leaf(mu), vlv = t.leaf(lv);
        diff::Var kl = kl_gaussian_sum(t, vmu, vlv);
        CHECK(t.val(kl).item() == doctest::Approx(kl_gaussian_closed_form(mu, lv)).epsilon(1e-12));
        diff::Var z = gaussian_reparam(t, vmu, vlv, eps);
        for (std::int64_t i = 0; i < B * L; ++i) {
            CHECK(t.val(z)[i] == doctest::Approx(mu[i] + std::exp(0.5 * lv[i]) * eps[i]).epsilon(1e-12));
        }
        t.backward(kl);
        Tensor fd = diff::finite_difference_grad(
            [&](const Tensor& p) { return kl_gaussian_closed_form(p, lv); }, mu, 1e-6);
        CHECK(diff::max_rel_error(t.grad(vmu), fd) < 1e-4);
    }
    {
        diff::Tape t;
        diff::Var vla = t.leaf(la);
        diff::Var z = concrete_sample(t, vla, rho, 0.4);
        for (std::int64_t i = 0; i < B * L; ++i) {
            CHECK(t.val(z)[i] == doctest::Approx(sample_concrete(la, rho, 0.4).z[i]).epsilon(1e-12));
        }
        diff::Var kl = kl_bernoulli_mc_sum(t, vla, z);
        CHECK(t.val(kl).item() == doctest::Approx(kl_bernoulli(la, t.val(z), KlMode::mc)).epsilon(1e-9));
        t.backward(kl);
        Tensor fd = diff::finite_difference_grad(
            [&](const Tensor& p) {
                diff::Tape t2;
                diff::Var v = t2.leaf(p);
                diff::Var z2 = concrete_sample(t2, v, rho, 0.4);
                return t2.val(kl_bernoulli_mc_sum(t2, v, z2)).item();
            },
            la, 1e-6);
        CHECK(diff::max_rel_error(t.grad(vla), fd) < 1e-4);
    }
}
