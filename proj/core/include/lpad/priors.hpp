#pragma once

#include "lpad/rng.hpp"
#include "lpad/tape.hpp"
#include "lpad/tensor.hpp"

namespace lpad::priors {

// Plain-value forms. These are the reference semantics; the tape builders
// below must agree with them (tested).

struct GaussianSample {
    Tensor z;
    Tensor eps;
};

/// z = mu + sigma (.) eps; sigma must be elementwise positive.
GaussianSample reparameterize_gaussian(const Tensor& mu, const Tensor& sigma, const Tensor& eps);

/// -1/2 sum_l (1 + logvar_l - mu_l^2 - exp(logvar_l)), the closed-form
/// KL(N(mu, diag e^logvar) || N(0, I)).
double kl_gaussian_closed_form(const Tensor& mu, const Tensor& logvar);

struct ConcreteSample {
    Tensor z;       // relaxed in (0,1), or hard {0,1}
    Tensor rho;     // the uniform noise used (after clamping)
    double lambda = 0.0;
    bool hard = false;
};

inline constexpr double kProbClamp = 1e-7;

/// Relaxed Bernoulli draw: z = sigmoid((log_alpha + log rho - log(1-rho)) / lambda).
/// rho is clamped to [1e-7, 1-1e-7] before the logit.
ConcreteSample sample_concrete(const Tensor& log_alpha, const Tensor& rho, double lambda);

/// Hard draw: z = 1 iff rho < sigmoid(log_alpha), strict inequality.
ConcreteSample sample_bernoulli_hard(const Tensor& log_alpha, const Tensor& rho);

enum class KlMode { mc, analytic };

/// KL of a factorized Bernoulli posterior against the Bernoulli(0.5) prior.
/// mc: single-sample estimate sum_l (-z_l log(0.5/q_l) - (1-z_l) log(0.5/(1-q_l)))
/// at the provided z (relaxed or hard). analytic: exact per-dimension sum in
/// terms of the posterior odds. q is clamped to [1e-7, 1-1e-7]; `clamped`
/// reports whether any coordinate saturated.
double kl_bernoulli(const Tensor& log_alpha_q, const Tensor& z, KlMode mode, bool* clamped = nullptr);

// Tape builders (batch inputs [B,L]; results are batch sums).

diff::Var gaussian_reparam(diff::Tape& t, diff::Var mu, diff::Var logvar, const Tensor& eps);
diff::Var kl_gaussian_sum(diff::Tape& t, diff::Var mu, diff::Var logvar);
diff::Var concrete_sample(diff::Tape& t, diff::Var log_alpha, const Tensor& rho, double lambda);

/// sum over all entries of z log q + (1-z) log(1-q) with q = sigmoid(log_alpha),
/// computed through softplus so no clamping is needed.
diff::Var bernoulli_log_mass_sum(diff::Tape& t, diff::Var log_alpha, diff::Var z);

/// Batch-sum of the mc-mode KL: bernoulli_log_mass_sum + numel * log 2.
diff::Var kl_bernoulli_mc_sum(diff::Tape& t, diff::Var log_alpha, diff::Var z);

}  // namespace lpad::priors
