#include "lpad/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lpad/priors.hpp"

namespace lpad::vae {

using diff::Tape;
using diff::Var;

namespace {

double sigmoid_d(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor clamp01(Tensor x) {
    for (auto& v : x.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return x;
}

}  // namespace

void ModelSpec::validate() const {
    net.validate();
    if (beta < 0.0) throw std::invalid_argument("ModelSpec: beta must be >= 0");
    if (data_window <= 0 || data_window > net.window_len) {
        throw std::invalid_argument("ModelSpec: data_window must lie in (0, net.window_len]");
    }
    const bool discrete = prior != PriorKind::gaussian;
    if (discrete && !(lambda > 0.0)) {
        throw std::invalid_argument("ModelSpec: lambda must be positive for discrete priors");
    }
    if ((prior == PriorKind::rbm) != rbm.has_value()) {
        throw std::invalid_argument("ModelSpec: rbm settings must be present iff prior is rbm");
    }
    const auto expect_head = discrete ? nets::HeadKind::bernoulli : nets::HeadKind::gaussian;
    if (net.head_kind != expect_head) {
        throw std::invalid_argument("ModelSpec: head_kind inconsistent with prior kind");
    }
    const bool sig = net.decoder_output == nets::DecoderOutput::sigmoid;
    if ((recon == ReconMetric::bce) != sig) {
        throw std::invalid_argument("ModelSpec: recon_metric and decoder_output must pair (bce <-> sigmoid)");
    }
    if (rbm) {
        if (rbm->fantasy_particles <= 0) throw std::invalid_argument("ModelSpec: fantasy_particles must be positive");
        if (rbm->gibbs_k < 0) throw std::invalid_argument("ModelSpec: gibbs_k must be >= 0");
        if (rbm->topology == rbm::Topology::bipartite_latent_space && net.latent_dim % 2 != 0) {
            throw std::invalid_argument("ModelSpec: bipartite topology needs an even latent_dim");
        }
    }
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    encoder_ = nets::Encoder(spec_.net, "enc");
    decoder_ = nets::Decoder(spec_.net, "dec");
}

void Model::init_params(std::uint64_t seed) {
    store_ = ParamStore{};
    Rng rng = Rng::derive(seed, "init");
    encoder_.register_params(store_, rng);
    decoder_.register_params(store_, rng);
    if (spec_.rbm) {
        const std::int64_t D = spec_.net.latent_dim;
        const std::int64_t K = spec_.rbm->topology == rbm::Topology::bipartite_latent_space ? D / 2 : D;
        const std::int64_t L = K;
        store_.add("rbm.W", fan_init(Shape{K, L}, K, rng));
        store_.add("rbm.a", Tensor(Shape{K}));
        store_.add("rbm.b", Tensor(Shape{L}));
        chains_ = rbm::RbmChains::zeros(spec_.rbm->fantasy_particles, K, L);
    }
}

rbm::RbmParams Model::rbm_params() const {
    rbm::RbmParams p;
    p.W = store_.value("rbm.W");
    p.a = store_.value("rbm.a");
    p.b = store_.value("rbm.b");
    return p;
}

LossParts Model::beta_elbo_loss(const Tensor& batch, Rng& noise, const LossOptions& opts,
                                std::unordered_map<std::string, Tensor>* grads_out) {
    if (batch.rank() != 3 || batch.shape[1] != spec_.net.in_channels ||
        batch.shape[2] != spec_.data_window) {
        throw std::invalid_argument("beta_elbo_loss: batch " + shape_str(batch.shape) +
                                    " does not match [B," + std::to_string(spec_.net.in_channels) +
                                    "," + std::to_string(spec_.data_window) + "]");
    }
    const std::int64_t B = batch.shape[0];
    const std::int64_t L = spec_.net.latent_dim;
    const bool train_mode = opts.mode == diff::Mode::train;

    // PCD negative phase advances before the loss sees the chains.
    if (spec_.prior == PriorKind::rbm && train_mode && opts.advance_chains) {
        rbm::pcd_update(chains_, rbm_params(), spec_.rbm->gibbs_k, noise,
                        spec_.rbm->replay_buffer ? spec_.rbm->replay_fraction : 0.0);
    }

    Tape t(opts.mode);
    nets::ParamBinder bind(t, store_);
    const bool bce = spec_.recon == ReconMetric::bce;
    Var x = t.constant(bce ? clamp01(batch) : batch);
    Var x_in = spec_.pad() > 0 ? diff::pad_right_edge(t, x, spec_.pad()) : x;
    nets::EncoderHead head = encoder_.forward(t, bind, store_, x_in, opts.update_bn);

    Var z = -1, kl_sum = -1;
    if (spec_.prior == PriorKind::gaussian) {
        Tensor eps(Shape{B, L});
        for (auto& v : eps.data) v = noise.normal();
        z = priors::gaussian_reparam(t, head.mu, head.logvar, eps);
        kl_sum = priors::kl_gaussian_sum(t, head.mu, head.logvar);
    } else {
        if (train_mode) {
            Tensor rho(Shape{B, L});
            for (auto& v : rho.data) v = noise.uniform();
            z = priors::concrete_sample(t, head.log_alpha, rho, spec_.lambda);
        } else {
            // hard draws; relaxation is a training-only device
            const Tensor& la = t.val(head.log_alpha);
            Tensor zd(Shape{B, L});
            for (std::int64_t i = 0; i < zd.numel(); ++i) {
                zd[i] = noise.uniform() < sigmoid_d(la[i]) ? 1.0 : 0.0;
            }
            z = t.constant(std::move(zd));
        }
        if (spec_.prior == PriorKind::bernoulli) {
            kl_sum = priors::kl_bernoulli_mc_sum(t, head.log_alpha, z);
        } else {
            rbm::PositivePhase pos =
                rbm::positive_phase(t, z, spec_.rbm->topology, rbm_params(), noise);
            Var W = bind("rbm.W"), a = bind("rbm.a"), b = bind("rbm.b");
            Var logq = priors::bernoulli_log_mass_sum(t, head.log_alpha, z);
            Var epos = rbm::energy_batch_sum(t, pos.zv, pos.zh, W, a, b);
            Var eneg = rbm::chain_mean_energy(t, chains_, W, a, b);
            // log Z is dropped: constant in phi, and its theta-gradient is the
            // negative phase. The reported KL is therefore unnormalized and
            // may be negative.
            kl_sum = diff::add(t, diff::add(t, logq, epos),
                               diff::scale(t, eneg, -static_cast<double>(B)));
        }
    }

    Var xhat_pre = decoder_.forward(t, bind, store_, z, opts.update_bn);
    if (spec_.pad() > 0) xhat_pre = diff::crop_right(t, xhat_pre, spec_.pad());

    Var recon_sum = -1;
    if (spec_.recon == ReconMetric::mse) {
        Var d = diff::sub(t, xhat_pre, x);
        recon_sum = diff::sum(t, diff::mul(t, d, d));
    } else {
        // sum of softplus(u) - x u, the logit form of the elementwise
        // binary cross entropy against xhat = sigmoid(u)
        recon_sum = diff::sum(t, diff::sub(t, diff::softplus(t, xhat_pre), diff::mul(t, x, xhat_pre)));
    }

    const double inv_b = 1.0 / static_cast<double>(B);
    Var total_sum = spec_.beta == 0.0
                        ? recon_sum
                        : diff::add(t, recon_sum, diff::scale(t, kl_sum, spec_.beta));
    Var total = diff::scale(t, total_sum, inv_b);

    LossParts parts;
    parts.total = t.val(total).item();
    parts.recon = t.val(recon_sum).item() * inv_b;
    parts.kl = t.val(kl_sum).item() * inv_b;
    if (!std::isfinite(parts.total)) {
        throw std::runtime_error("beta_elbo_loss: non-finite loss (total " +
                                 std::to_string(parts.total) + ", recon " +
                                 std::to_string(parts.recon) + ", kl " + std::to_string(parts.kl) +
                                 ")");
    }
    if (grads_out) {
        t.backward(total);
        *grads_out = bind.harvest();
    }
    return parts;
}

PosteriorValues Model::encode(const Tensor& batch) {
    Tape t(diff::Mode::eval);
    nets::ParamBinder bind(t, store_);
    Var x = t.constant(batch);
    Var x_in = spec_.pad() > 0 ? diff::pad_right_edge(t, x, spec_.pad()) : x;
    nets::EncoderHead head = encoder_.forward(t, bind, store_, x_in, false);
    PosteriorValues out;
    if (spec_.prior == PriorKind::gaussian) {
        out.mu = t.val(head.mu);
        out.logvar = t.val(head.logvar);
    } else {
        out.log_alpha = t.val(head.log_alpha);
    }
    return out;
}

Tensor Model::decode(const Tensor& z) {
    Tape t(diff::Mode::eval);
    nets::ParamBinder bind(t, store_);
    Var pre = decoder_.forward(t, bind, store_, t.constant(z), false);
    Var out = decoder_.activate(t, pre);
    if (spec_.pad() > 0) out = diff::crop_right(t, out, spec_.pad());
    return t.val(out);
}

Tensor Model::reconstruct_once(const Tensor& batch, Rng& noise) {
    PosteriorValues post = encode(batch);
    const std::int64_t B = batch.shape[0], L = spec_.net.latent_dim;
    Tensor z(Shape{B, L});
    if (spec_.prior == PriorKind::gaussian) {
        for (std::int64_t i = 0; i < z.numel(); ++i) {
            z[i] = post.mu[i] + std::exp(0.5 * post.logvar[i]) * noise.normal();
        }
    } else {
        for (std::int64_t i = 0; i < z.numel(); ++i) {
            z[i] = noise.uniform() < sigmoid_d(post.log_alpha[i]) ? 1.0 : 0.0;
        }
    }
    return decode(z);
}

}  // namespace lpad::vae
