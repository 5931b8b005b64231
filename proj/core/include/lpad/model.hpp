#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>

#include "lpad/nets.hpp"
#include "lpad/param_store.hpp"
#include "lpad/rbm.hpp"
#include "lpad/rng.hpp"
#include "lpad/tensor.hpp"

namespace lpad::vae {

enum class PriorKind { gaussian, bernoulli, rbm };
enum class ReconMetric { mse, bce };

struct RbmSpec {
    rbm::Topology topology = rbm::Topology::augmented_positive_phase;
    std::int64_t fantasy_particles = 500;
    std::int64_t gibbs_k = 20;
    bool replay_buffer = false;
    double replay_fraction = 0.05;
};

struct ModelSpec {
    PriorKind prior = PriorKind::gaussian;
    nets::NetConfig net;             // window_len is the padded length
    std::int64_t data_window = 0;    // unpadded instance length
    double beta = 1.0;
    double lambda = 0.1;             // concrete temperature, discrete priors only
    ReconMetric recon = ReconMetric::mse;
    std::optional<RbmSpec> rbm;

    void validate() const;
    std::int64_t pad() const { return net.window_len - data_window; }
};

struct PosteriorValues {
    Tensor mu, logvar;  // gaussian
    Tensor log_alpha;   // bernoulli / rbm
};

struct LossParts {
    double total = 0.0;  // recon + beta * kl, per-instance mean
    double recon = 0.0;
    double kl = 0.0;     // unweighted
};

struct LossOptions {
    diff::Mode mode = diff::Mode::train;
    bool advance_chains = true;  // PCD sweeps before the loss (train mode, rbm prior)
    bool update_bn = true;
};

/// One of the three trainable families: encoder/decoder nets plus the
/// configured prior, including persistent RBM chains when applicable.
class Model {
public:
    explicit Model(ModelSpec spec);

    /// Deterministic parameter init; also resets chains to zero.
    void init_params(std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    rbm::RbmChains& chains() { return chains_; }
    const rbm::RbmChains& chains() const { return chains_; }
    rbm::RbmParams rbm_params() const;  // copies current values from the store

    /// Minibatch beta-ELBO loss per the configured prior. `grads_out`, when
    /// given, receives d(total)/d(parameter) from a reverse pass. Raises on a
    /// non-finite loss with the offending term named.
    LossParts beta_elbo_loss(const Tensor& batch, Rng& noise,
                             const LossOptions& opts = {},
                             std::unordered_map<std::string, Tensor>* grads_out = nullptr);

    /// Eval-mode posterior parameters for a batch.
    PosteriorValues encode(const Tensor& batch);

    /// Eval-mode decode of latent batch [B, latent]; output activation
    /// applied, padding cropped.
    Tensor decode(const Tensor& z);

    /// Eval-mode reconstruction with fresh posterior noise (Gaussian eps or
    /// hard Bernoulli draws).
    Tensor reconstruct_once(const Tensor& batch, Rng& noise);

private:
    ModelSpec spec_;
    ParamStore store_;
    nets::Encoder encoder_;
    nets::Decoder decoder_;
    rbm::RbmChains chains_;
};

}  // namespace lpad::vae
