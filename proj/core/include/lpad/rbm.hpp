#pragma once

#include <cstdint>
#include <vector>

#include "lpad/rng.hpp"
#include "lpad/tape.hpp"
#include "lpad/tensor.hpp"

namespace lpad::rbm {

enum class Topology { bipartite_latent_space, augmented_positive_phase };

/// Weight matrix W [K x L] plus visible (a, length K) and hidden (b, length L)
/// bias vectors.
struct RbmParams {
    Tensor W;
    Tensor a;
    Tensor b;

    std::int64_t visible() const { return a.numel(); }
    std::int64_t hidden() const { return b.numel(); }
    void validate() const;
};

/// Persistent fantasy states of the negative phase, C chains of binary
/// (visible, hidden) pairs. Chains start at zero and are never re-initialized
/// between minibatches.
struct RbmChains {
    std::int64_t C = 0, K = 0, L = 0;
    std::vector<std::uint8_t> v;  // C*K
    std::vector<std::uint8_t> h;  // C*L
    std::int64_t sweep_count = 0;

    static RbmChains zeros(std::int64_t C, std::int64_t K, std::int64_t L);
};

enum class Direction { hidden_given_visible, visible_given_hidden };

/// E = -zv^T W zh - a^T zv - b^T zh. States may be continuous (relaxed
/// posterior samples) or binary.
double energy(const Tensor& zv, const Tensor& zh, const RbmParams& p);

/// sigmoid(b + W^T zv) or sigmoid(a + W zh) depending on direction.
Tensor cond_probs(const Tensor& given, const RbmParams& p, Direction dir);

/// One full block-Gibbs sweep over every chain: h ~ B(cond(v)) then
/// v ~ B(cond(h)); sampling rule u < p with strict inequality. Uniforms are
/// consumed chain by chain, hidden units first, in index order.
void gibbs_step(RbmChains& chains, const RbmParams& p, Rng& rng);

/// k Gibbs sweeps from the chains' current states (persistent contrastive
/// divergence). With replay_fraction > 0, each chain is first re-randomized
/// to fair coin flips with that probability.
void pcd_update(RbmChains& chains, const RbmParams& p, std::int64_t k, Rng& rng,
                double replay_fraction = 0.0);

/// Exact enumeration over all 2^(K+L) joint states; K+L <= 20. State index
/// packs visible bits low (bit k = v_k) and hidden bits high (bit K+l = h_l).
struct ExactOracle {
    double log_z = 0.0;
    std::vector<double> probs;
};
ExactOracle exact_oracle(const RbmParams& p);

// --- tape builders for the loss (batch inputs) ---

/// Sum over the batch of E(zv_i, zh_i) as a differentiable expression in
/// (zv, zh, W, a, b).
diff::Var energy_batch_sum(diff::Tape& t, diff::Var zv, diff::Var zh, diff::Var W, diff::Var a,
                           diff::Var b);

/// Mean energy of the fantasy chains; states enter as constants so only the
/// dependence on (W, a, b) is differentiated.
diff::Var chain_mean_energy(diff::Tape& t, const RbmChains& chains, diff::Var W, diff::Var a,
                            diff::Var b);

struct PositivePhase {
    diff::Var zv = -1;
    diff::Var zh = -1;
};

/// Splits or augments the posterior sample z [B, latent]. bipartite: equal
/// left/right halves, both carried through the tape. augmented: zv = z and zh
/// is a one-step hard Gibbs draw from cond(zv) entering as a constant (no
/// gradient through the sample).
PositivePhase positive_phase(diff::Tape& t, diff::Var z_post, Topology topo, const RbmParams& p,
                             Rng& rng);

}  // namespace lpad::rbm
