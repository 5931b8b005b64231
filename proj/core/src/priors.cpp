#include "lpad/priors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lpad::priors {

namespace {

void check_same(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    }
}

double clamp_prob(double q) {
    if (q < kProbClamp) return kProbClamp;
    if (q > 1.0 - kProbClamp) return 1.0 - kProbClamp;
    return q;
}

double sigmoid_d(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

GaussianSample reparameterize_gaussian(const Tensor& mu, const Tensor& sigma, const Tensor& eps) {
    check_same("reparameterize_gaussian", mu, sigma);
    check_same("reparameterize_gaussian", mu, eps);
    for (std::int64_t i = 0; i < sigma.numel(); ++i) {
        if (!(sigma[i] > 0.0)) {
            throw std::domain_error("reparameterize_gaussian: sigma must be positive, got " +
                                    std::to_string(sigma[i]) + " at coordinate " + std::to_string(i));
        }
    }
    GaussianSample s;
    s.eps = eps;
    s.z = mu;
    for (std::int64_t i = 0; i < s.z.numel(); ++i) s.z[i] += sigma[i] * eps[i];
    return s;
}

double kl_gaussian_closed_form(const Tensor& mu, const Tensor& logvar) {
    check_same("kl_gaussian_closed_form", mu, logvar);
    double acc = 0.0;
    for (std::int64_t i = 0; i < mu.numel(); ++i) {
        if (logvar[i] > 700.0) {
            throw std::runtime_error("kl_gaussian_closed_form: exp overflow at coordinate " +
                                     std::to_string(i) + " (logvar " + std::to_string(logvar[i]) + ")");
        }
        acc += 1.0 + logvar[i] - mu[i] * mu[i] - std::exp(logvar[i]);
    }
    return -0.5 * acc;
}

ConcreteSample sample_concrete(const Tensor& log_alpha, const Tensor& rho, double lambda) {
    check_same("sample_concrete", log_alpha, rho);
    if (!(lambda > 0.0)) {
        throw std::domain_error("sample_concrete: lambda must be positive, got " +
                                std::to_string(lambda));
    }
    ConcreteSample s;
    s.lambda = lambda;
    s.hard = false;
    s.rho = rho;
    s.z = Tensor(log_alpha.shape);
    for (std::int64_t i = 0; i < s.z.numel(); ++i) {
        const double r = clamp_prob(rho[i]);
        s.rho[i] = r;
        s.z[i] = sigmoid_d((log_alpha[i] + std::log(r) - std::log1p(-r)) / lambda);
    }
    return s;
}

ConcreteSample sample_bernoulli_hard(const Tensor& log_alpha, const Tensor& rho) {
    check_same("sample_bernoulli_hard", log_alpha, rho);
    ConcreteSample s;
    s.hard = true;
    s.rho = rho;
    s.z = Tensor(log_alpha.shape);
    for (std::int64_t i = 0; i < s.z.numel(); ++i) {
        s.z[i] = rho[i] < sigmoid_d(log_alpha[i]) ? 1.0 : 0.0;
    }
    return s;
}

double kl_bernoulli(const Tensor& log_alpha_q, const Tensor& z, KlMode mode, bool* clamped) {
    if (clamped) *clamped = false;
    double acc = 0.0;
    if (mode == KlMode::mc) {
        check_same("kl_bernoulli", log_alpha_q, z);
        for (std::int64_t i = 0; i < log_alpha_q.numel(); ++i) {
            double q = sigmoid_d(log_alpha_q[i]);
            if (q <= kProbClamp || q >= 1.0 - kProbClamp) {
                if (clamped) *clamped = true;
                q = clamp_prob(q);
            }
            acc += -z[i] * std::log(0.5 / q) - (1.0 - z[i]) * std::log(0.5 / (1.0 - q));
        }
        return acc;
    }
    // analytic: per dimension, with alpha the posterior odds,
    // [alpha log(alpha/(alpha+1)) + log(1/(alpha+1)) + (alpha+1) log 2] / (alpha+1)
    for (std::int64_t i = 0; i < log_alpha_q.numel(); ++i) {
        double q = sigmoid_d(log_alpha_q[i]);
        if (q <= kProbClamp || q >= 1.0 - kProbClamp) {
            if (clamped) *clamped = true;
            q = clamp_prob(q);
        }
        const double alpha = q / (1.0 - q);
        acc += (alpha * std::log(alpha / (alpha + 1.0)) + std::log(1.0 / (alpha + 1.0)) +
                (alpha + 1.0) * std::log(2.0)) /
               (alpha + 1.0);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// tape builders

diff::Var gaussian_reparam(diff::Tape& t, diff::Var mu, diff::Var logvar, const Tensor& eps) {
    using namespace diff;
    Var sigma = exp(t, scale(t, logvar, 0.5));
    return add(t, mu, mul(t, sigma, t.constant(eps)));
}

diff::Var kl_gaussian_sum(diff::Tape& t, diff::Var mu, diff::Var logvar) {
    using namespace diff;
    Var term = add_scalar(t, logvar, 1.0);
    term = sub(t, term, mul(t, mu, mu));
    term = sub(t, term, exp(t, logvar));
    return scale(t, sum(t, term), -0.5);
}

diff::Var concrete_sample(diff::Tape& t, diff::Var log_alpha, const Tensor& rho, double lambda) {
    using namespace diff;
    if (!(lambda > 0.0)) {
        throw std::domain_error("concrete_sample: lambda must be positive, got " +
                                std::to_string(lambda));
    }
    Tensor logit_rho(rho.shape);
    for (std::int64_t i = 0; i < rho.numel(); ++i) {
        const double r = clamp_prob(rho[i]);
        logit_rho[i] = std::log(r) - std::log1p(-r);
    }
    Var u = add(t, log_alpha, t.constant(logit_rho));
    return sigmoid(t, scale(t, u, 1.0 / lambda));
}

diff::Var bernoulli_log_mass_sum(diff::Tape& t, diff::Var log_alpha, diff::Var z) {
    using namespace diff;
    // z log q + (1-z) log(1-q) = -[z softplus(-u) + (1-z) softplus(u)], u = log_alpha
    Var sp_neg = softplus(t, scale(t, log_alpha, -1.0));
    Var sp_pos = softplus(t, log_alpha);
    Var one_minus_z = scale(t, add_scalar(t, z, -1.0), -1.0);
    Var inner = add(t, mul(t, z, sp_neg), mul(t, one_minus_z, sp_pos));
    return scale(t, sum(t, inner), -1.0);
}

diff::Var kl_bernoulli_mc_sum(diff::Tape& t, diff::Var log_alpha, diff::Var z) {
    using namespace diff;
    const double n = static_cast<double>(t.val(log_alpha).numel());
    return add_scalar(t, bernoulli_log_mass_sum(t, log_alpha, z), n * std::log(2.0));
}

}  // namespace lpad::priors
