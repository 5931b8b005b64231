#include "lpad/rbm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lpad::rbm {

namespace {

double sigmoid_d(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

void RbmParams::validate() const {
    if (W.rank() != 2 || a.rank() != 1 || b.rank() != 1 || W.shape[0] != a.shape[0] ||
        W.shape[1] != b.shape[0]) {
        throw std::invalid_argument("RbmParams: inconsistent shapes W " + shape_str(W.shape) +
                                    ", a " + shape_str(a.shape) + ", b " + shape_str(b.shape));
    }
    if (!W.all_finite() || !a.all_finite() || !b.all_finite()) {
        throw std::invalid_argument("RbmParams: non-finite entries");
    }
}

RbmChains RbmChains::zeros(std::int64_t C, std::int64_t K, std::int64_t L) {
    RbmChains c;
    c.C = C;
    c.K = K;
    c.L = L;
    c.v.assign(static_cast<std::size_t>(C * K), 0);
    c.h.assign(static_cast<std::size_t>(C * L), 0);
    return c;
}

double energy(const Tensor& zv, const Tensor& zh, const RbmParams& p) {
    const std::int64_t K = p.visible(), L = p.hidden();
    if (zv.numel() != K || zh.numel() != L) {
        throw std::invalid_argument("energy: state shapes " + shape_str(zv.shape) + "/" +
                                    shape_str(zh.shape) + " do not match params (" +
                                    std::to_string(K) + "," + std::to_string(L) + ")");
    }
    double cross = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
        const double vk = zv[k];
        if (vk == 0.0) continue;
        const double* wrow = p.W.data.data() + k * L;
        double acc = 0.0;
        for (std::int64_t l = 0; l < L; ++l) acc += wrow[l] * zh[l];
        cross += vk * acc;
    }
    double av = 0.0, bh = 0.0;
    for (std::int64_t k = 0; k < K; ++k) av += p.a[k] * zv[k];
    for (std::int64_t l = 0; l < L; ++l) bh += p.b[l] * zh[l];
    return -cross - av - bh;
}

Tensor cond_probs(const Tensor& given, const RbmParams& p, Direction dir) {
    const std::int64_t K = p.visible(), L = p.hidden();
    if (dir == Direction::hidden_given_visible) {
        if (given.numel() != K) {
            throw std::invalid_argument("cond_probs: visible state " + shape_str(given.shape) +
                                        " does not match " + std::to_string(K) + " units");
        }
        Tensor out(Shape{L});
        for (std::int64_t l = 0; l < L; ++l) {
            double acc = p.b[l];
            for (std::int64_t k = 0; k < K; ++k) acc += p.W[k * L + l] * given[k];
            out[l] = sigmoid_d(acc);
        }
        return out;
    }
    if (given.numel() != L) {
        throw std::invalid_argument("cond_probs: hidden state " + shape_str(given.shape) +
                                    " does not match " + std::to_string(L) + " units");
    }
    Tensor out(Shape{K});
    for (std::int64_t k = 0; k < K; ++k) {
        double acc = p.a[k];
        const double* wrow = p.W.data.data() + k * L;
        for (std::int64_t l = 0; l < L; ++l) acc += wrow[l] * given[l];
        out[k] = sigmoid_d(acc);
    }
    return out;
}

void gibbs_step(RbmChains& chains, const RbmParams& p, Rng& rng) {
    const std::int64_t K = chains.K, L = chains.L;
    if (K != p.visible() || L != p.hidden()) {
        throw std::invalid_argument("gibbs_step: chain extents do not match params");
    }
    for (std::int64_t c = 0; c < chains.C; ++c) {
        std::uint8_t* vrow = chains.v.data() + c * K;
        std::uint8_t* hrow = chains.h.data() + c * L;
        // h | v
        for (std::int64_t l = 0; l < L; ++l) {
            double acc = p.b[l];
            for (std::int64_t k = 0; k < K; ++k)
                if (vrow[k]) acc += p.W[k * L + l];
            hrow[l] = rng.uniform() < sigmoid_d(acc) ? 1 : 0;
        }
        // v | h
        for (std::int64_t k = 0; k < K; ++k) {
            double acc = p.a[k];
            const double* wrow = p.W.data.data() + k * L;
            for (std::int64_t l = 0; l < L; ++l)
                if (hrow[l]) acc += wrow[l];
            vrow[k] = rng.uniform() < sigmoid_d(acc) ? 1 : 0;
        }
    }
    ++chains.sweep_count;
}

void pcd_update(RbmChains& chains, const RbmParams& p, std::int64_t k, Rng& rng,
                double replay_fraction) {
    if (k < 0) throw std::invalid_argument("pcd_update: negative sweep count");
    if (replay_fraction > 0.0) {
        for (std::int64_t c = 0; c < chains.C; ++c) {
            if (rng.uniform() < replay_fraction) {
                std::uint8_t* vrow = chains.v.data() + c * chains.K;
                std::uint8_t* hrow = chains.h.data() + c * chains.L;
                for (std::int64_t i = 0; i < chains.K; ++i) vrow[i] = rng.uniform() < 0.5 ? 1 : 0;
                for (std::int64_t i = 0; i < chains.L; ++i) hrow[i] = rng.uniform() < 0.5 ? 1 : 0;
            }
        }
    }
    for (std::int64_t s = 0; s < k; ++s) gibbs_step(chains, p, rng);
}

ExactOracle exact_oracle(const RbmParams& p) {
    p.validate();
    const std::int64_t K = p.visible(), L = p.hidden();
    if (K + L > 20) {
        throw std::invalid_argument("exact_oracle: refusing enumeration, K+L = " +
                                    std::to_string(K + L) + " exceeds 20");
    }
    const std::int64_t states = std::int64_t{1} << (K + L);
    std::vector<double> neg_e(static_cast<std::size_t>(states));
    double max_ne = -1e300;
    Tensor zv(Shape{K}), zh(Shape{L});
    for (std::int64_t s = 0; s < states; ++s) {
        for (std::int64_t k = 0; k < K; ++k) zv[k] = (s >> k) & 1 ? 1.0 : 0.0;
        for (std::int64_t l = 0; l < L; ++l) zh[l] = (s >> (K + l)) & 1 ? 1.0 : 0.0;
        const double ne = -energy(zv, zh, p);
        neg_e[static_cast<std::size_t>(s)] = ne;
        if (ne > max_ne) max_ne = ne;
    }
    double zsum = 0.0;
    for (double ne : neg_e) zsum += std::exp(ne - max_ne);
    ExactOracle out;
    out.log_z = max_ne + std::log(zsum);
    out.probs.resize(neg_e.size());
    for (std::size_t s = 0; s < neg_e.size(); ++s) out.probs[s] = std::exp(neg_e[s] - out.log_z);
    return out;
}

// ---------------------------------------------------------------------------
// tape builders

diff::Var energy_batch_sum(diff::Tape& t, diff::Var zv, diff::Var zh, diff::Var W, diff::Var a,
                           diff::Var b) {
    using namespace diff;
    const Tensor& vv = t.val(zv);
    const Tensor& vh = t.val(zh);
    if (vv.rank() != 2 || vh.rank() != 2 || vv.shape[0] != vh.shape[0]) {
        throw std::invalid_argument("energy_batch_sum: expected matching [B,K]/[B,L] states, got " +
                                    shape_str(vv.shape) + " and " + shape_str(vh.shape));
    }
    const std::int64_t K = vv.shape[1], L = vh.shape[1];
    Var cross = sum(t, mul(t, matmul(t, zv, W), zh));
    Var av = sum(t, matmul(t, zv, reshape(t, a, Shape{K, 1})));
    Var bh = sum(t, matmul(t, zh, reshape(t, b, Shape{L, 1})));
    return scale(t, add(t, add(t, cross, av), bh), -1.0);
}

diff::Var chain_mean_energy(diff::Tape& t, const RbmChains& chains, diff::Var W, diff::Var a,
                            diff::Var b) {
    using namespace diff;
    if (chains.C == 0) throw std::logic_error("chain_mean_energy: empty chains");
    Tensor V(Shape{chains.C, chains.K});
    Tensor H(Shape{chains.C, chains.L});
    for (std::int64_t i = 0; i < V.numel(); ++i) V[i] = chains.v[static_cast<std::size_t>(i)];
    for (std::int64_t i = 0; i < H.numel(); ++i) H[i] = chains.h[static_cast<std::size_t>(i)];
    Var sum_e = energy_batch_sum(t, t.constant(std::move(V)), t.constant(std::move(H)), W, a, b);
    return scale(t, sum_e, 1.0 / static_cast<double>(chains.C));
}

PositivePhase positive_phase(diff::Tape& t, diff::Var z_post, Topology topo, const RbmParams& p,
                             Rng& rng) {
    using namespace diff;
    const Tensor& z = t.val(z_post);
    if (z.rank() != 2) {
        throw std::invalid_argument("positive_phase: expected [B,latent] posterior sample, got " +
                                    shape_str(z.shape));
    }
    const std::int64_t B = z.shape[0], D = z.shape[1];
    PositivePhase out;
    if (topo == Topology::bipartite_latent_space) {
        if (D % 2 != 0) {
            throw std::invalid_argument("positive_phase: bipartite topology needs even latent_dim, got " +
                                        std::to_string(D));
        }
        const std::int64_t H = D / 2;
        Var as3 = reshape(t, z_post, Shape{B, 2, H});
        out.zv = reshape(t, slice_channels(t, as3, 0, 1), Shape{B, H});
        out.zh = reshape(t, slice_channels(t, as3, 1, 2), Shape{B, H});
        return out;
    }
    // augmented: zv = z (continuous), zh = one-step hard Gibbs draw, constant
    if (p.visible() != D || p.hidden() != D) {
        throw std::invalid_argument("positive_phase: augmented topology needs K = L = latent_dim");
    }
    Tensor zh(Shape{B, D});
    const std::int64_t L = p.hidden();
    for (std::int64_t i = 0; i < B; ++i) {
        const double* zrow = z.data.data() + i * D;
        double* hrow = zh.data.data() + i * D;
        for (std::int64_t l = 0; l < L; ++l) {
            double acc = p.b[l];
            for (std::int64_t k = 0; k < D; ++k) acc += p.W[k * L + l] * zrow[k];
            hrow[l] = rng.uniform() < sigmoid_d(acc) ? 1.0 : 0.0;
        }
    }
    out.zv = z_post;
    out.zh = t.constant(std::move(zh));
    return out;
}

}  // namespace lpad::rbm
