#include "lpad/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace lpad::nets {

using diff::Tape;
using diff::Var;

void NetConfig::validate() const {
    if (in_channels <= 0) throw std::invalid_argument("NetConfig: in_channels must be positive");
    if (latent_dim <= 0) throw std::invalid_argument("NetConfig: latent_dim must be positive");
    if (blocks_per_branch <= 0) throw std::invalid_argument("NetConfig: blocks_per_branch must be positive");
    if (branches.empty()) throw std::invalid_argument("NetConfig: at least one branch required");
    for (const Branch& br : branches) {
        if (br.filters <= 0) throw std::invalid_argument("NetConfig: branch filters must be positive");
        if (br.kernel <= 0 || br.kernel % 2 == 0) {
            throw std::invalid_argument("NetConfig: kernel sizes must be odd for same padding, got " +
                                        std::to_string(br.kernel));
        }
    }
    const std::int64_t div = std::int64_t{1} << blocks_per_branch;
    if (window_len <= 0 || window_len % div != 0) {
        throw std::invalid_argument("NetConfig: window_len " + std::to_string(window_len) +
                                    " not divisible by 2^blocks_per_branch = " + std::to_string(div));
    }
}

std::int64_t NetConfig::pooled_len() const {
    return window_len >> blocks_per_branch;
}

std::int64_t NetConfig::trunk_channels() const {
    std::int64_t c = 0;
    for (const Branch& br : branches) c += br.filters;
    return c;
}

std::int64_t NetConfig::encoder_param_count() const {
    const std::int64_t n = blocks_per_branch;
    std::int64_t total = 0;
    for (const Branch& br : branches) {
        const std::int64_t F = br.filters, K = br.kernel;
        total += F * K * (in_channels + (n - 1) * F);  // conv weights
        total += n * F;                                // conv biases
        total += n * 2 * F;                            // bn gamma + beta
    }
    const std::int64_t flat = trunk_channels() * pooled_len();
    const std::int64_t head = flat * latent_dim + latent_dim;
    return total + (head_kind == HeadKind::gaussian ? 2 * head : head);
}

std::int64_t NetConfig::decoder_param_count() const {
    const std::int64_t n = blocks_per_branch;
    const std::int64_t flat = trunk_channels() * pooled_len();
    std::int64_t total = latent_dim * flat + flat;  // linear
    for (const Branch& br : branches) {
        const std::int64_t F = br.filters, K = br.kernel;
        total += (n - 1) * (F * F * K + F + 2 * F);  // inner tconv + bn
        total += F * in_channels * K + in_channels;  // output tconv
    }
    return total;
}

Var ParamBinder::operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Var v = store_->trainable(name) ? tape_->leaf(store_->value(name))
                                    : tape_->constant(store_->value(name));
    cache_.emplace(name, v);
    return v;
}

std::unordered_map<std::string, Tensor> ParamBinder::harvest() const {
    std::unordered_map<std::string, Tensor> grads;
    for (const auto& [name, var] : cache_) {
        if (store_->trainable(name)) grads.emplace(name, tape_->grad(var));
    }
    return grads;
}

// ---------------------------------------------------------------------------

Encoder::Encoder(NetConfig cfg, std::string prefix) : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
}

void Encoder::register_params(ParamStore& store, Rng& rng) const {
    for (std::size_t b = 0; b < cfg_.branches.size(); ++b) {
        const auto [F, K] = cfg_.branches[b];
        const std::string br = prefix_ + ".br" + std::to_string(b);
        for (std::int64_t i = 0; i < cfg_.blocks_per_branch; ++i) {
            const std::int64_t cin = i == 0 ? cfg_.in_channels : F;
            const std::string blk = br + "." + std::to_string(i);
            store.add(blk + ".conv.w", fan_init(Shape{F, cin, K}, cin * K, rng));
            store.add(blk + ".conv.b", Tensor(Shape{F}));
            store.add(blk + ".bn.gamma", Tensor(Shape{F}, 1.0));
            store.add(blk + ".bn.beta", Tensor(Shape{F}));
            store.add(blk + ".bn.rmean", Tensor(Shape{F}), false);
            store.add(blk + ".bn.rvar", Tensor(Shape{F}, 1.0), false);
        }
    }
    const std::int64_t flat = cfg_.trunk_channels() * cfg_.pooled_len();
    if (cfg_.head_kind == HeadKind::gaussian) {
        store.add(prefix_ + ".head.mu.w", fan_init(Shape{flat, cfg_.latent_dim}, flat, rng));
        store.add(prefix_ + ".head.mu.b", Tensor(Shape{cfg_.latent_dim}));
        store.add(prefix_ + ".head.logvar.w", fan_init(Shape{flat, cfg_.latent_dim}, flat, rng));
        store.add(prefix_ + ".head.logvar.b", Tensor(Shape{cfg_.latent_dim}));
    } else {
        store.add(prefix_ + ".head.logalpha.w", fan_init(Shape{flat, cfg_.latent_dim}, flat, rng));
        store.add(prefix_ + ".head.logalpha.b", Tensor(Shape{cfg_.latent_dim}));
    }
}

EncoderHead Encoder::forward(Tape& t, ParamBinder& bind, ParamStore& store, Var x,
                             bool update_bn) const {
    {
        const Tensor& vx = t.val(x);
        if (vx.rank() != 3 || vx.shape[1] != cfg_.in_channels || vx.shape[2] != cfg_.window_len) {
            throw std::invalid_argument("Encoder: input " + shape_str(vx.shape) +
                                        " does not match [B," + std::to_string(cfg_.in_channels) +
                                        "," + std::to_string(cfg_.window_len) + "]");
        }
    }
    // extents are copied out up front: node creation may reallocate the tape
    const std::int64_t B = t.val(x).shape[0];
    const bool bn_update = update_bn && t.mode() == diff::Mode::train;
    std::vector<Var> outs;
    for (std::size_t b = 0; b < cfg_.branches.size(); ++b) {
        const std::string br = prefix_ + ".br" + std::to_string(b);
        Var y = x;
        for (std::int64_t i = 0; i < cfg_.blocks_per_branch; ++i) {
            const std::string blk = br + "." + std::to_string(i);
            y = diff::conv1d(t, y, bind(blk + ".conv.w"), bind(blk + ".conv.b"));
            y = diff::batchnorm1d(t, y, bind(blk + ".bn.gamma"), bind(blk + ".bn.beta"),
                                  store.value(blk + ".bn.rmean"), store.value(blk + ".bn.rvar"), 0.1,
                                  bn_update);
            y = diff::relu(t, y);
            y = diff::maxpool2(t, y);
        }
        outs.push_back(y);
    }
    Var trunk = outs.size() == 1 ? outs[0] : diff::concat_channels(t, outs);
    const std::int64_t flat = cfg_.trunk_channels() * cfg_.pooled_len();
    Var flatv = diff::reshape(t, trunk, Shape{B, flat});

    EncoderHead head;
    if (cfg_.head_kind == HeadKind::gaussian) {
        head.mu = diff::bias_add_row(t, diff::matmul(t, flatv, bind(prefix_ + ".head.mu.w")),
                                     bind(prefix_ + ".head.mu.b"));
        Var raw = diff::bias_add_row(t, diff::matmul(t, flatv, bind(prefix_ + ".head.logvar.w")),
                                     bind(prefix_ + ".head.logvar.b"));
        head.logvar = cfg_.logvar_softplus ? diff::softplus(t, raw) : raw;
    } else {
        head.log_alpha =
            diff::bias_add_row(t, diff::matmul(t, flatv, bind(prefix_ + ".head.logalpha.w")),
                               bind(prefix_ + ".head.logalpha.b"));
    }
    return head;
}

// ---------------------------------------------------------------------------

Decoder::Decoder(NetConfig cfg, std::string prefix) : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
}

void Decoder::register_params(ParamStore& store, Rng& rng) const {
    const std::int64_t flat = cfg_.trunk_channels() * cfg_.pooled_len();
    store.add(prefix_ + ".lin.w", fan_init(Shape{cfg_.latent_dim, flat}, cfg_.latent_dim, rng));
    store.add(prefix_ + ".lin.b", Tensor(Shape{flat}));
    for (std::size_t b = 0; b < cfg_.branches.size(); ++b) {
        const auto [F, K] = cfg_.branches[b];
        const std::string br = prefix_ + ".br" + std::to_string(b);
        for (std::int64_t j = 0; j < cfg_.blocks_per_branch; ++j) {
            const bool last = j == cfg_.blocks_per_branch - 1;
            const std::int64_t cout = last ? cfg_.in_channels : F;
            const std::string blk = br + "." + std::to_string(j);
            store.add(blk + ".tconv.w", fan_init(Shape{F, cout, K}, F * K, rng));
            store.add(blk + ".tconv.b", Tensor(Shape{cout}));
            if (!last) {
                store.add(blk + ".bn.gamma", Tensor(Shape{F}, 1.0));
                store.add(blk + ".bn.beta", Tensor(Shape{F}));
                store.add(blk + ".bn.rmean", Tensor(Shape{F}), false);
                store.add(blk + ".bn.rvar", Tensor(Shape{F}, 1.0), false);
            }
        }
    }
}

Var Decoder::forward(Tape& t, ParamBinder& bind, ParamStore& store, Var z, bool update_bn) const {
    const Tensor& vz = t.val(z);
    if (vz.rank() != 2 || vz.shape[1] != cfg_.latent_dim) {
        throw std::invalid_argument("Decoder: latent " + shape_str(vz.shape) + " does not match [B," +
                                    std::to_string(cfg_.latent_dim) + "]");
    }
    const bool bn_update = update_bn && t.mode() == diff::Mode::train;
    const std::int64_t B = vz.shape[0];
    const std::int64_t pooled = cfg_.pooled_len();
    const std::int64_t trunk_c = cfg_.trunk_channels();

    Var flat = diff::bias_add_row(t, diff::matmul(t, z, bind(prefix_ + ".lin.w")),
                                  bind(prefix_ + ".lin.b"));
    Var trunk = diff::reshape(t, flat, Shape{B, trunk_c, pooled});

    std::vector<Var> outs;
    std::int64_t coff = 0;
    for (std::size_t b = 0; b < cfg_.branches.size(); ++b) {
        const auto [F, K] = cfg_.branches[b];
        (void)K;
        const std::string br = prefix_ + ".br" + std::to_string(b);
        Var y = diff::slice_channels(t, trunk, coff, coff + F);
        coff += F;
        for (std::int64_t j = 0; j < cfg_.blocks_per_branch; ++j) {
            const bool last = j == cfg_.blocks_per_branch - 1;
            const std::string blk = br + "." + std::to_string(j);
            y = diff::upsample2(t, y, cfg_.upsample);
            y = diff::tconv1d(t, y, bind(blk + ".tconv.w"), bind(blk + ".tconv.b"));
            if (!last) {
                y = diff::batchnorm1d(t, y, bind(blk + ".bn.gamma"), bind(blk + ".bn.beta"),
                                      store.value(blk + ".bn.rmean"), store.value(blk + ".bn.rvar"),
                                      0.1, bn_update);
                y = diff::relu(t, y);
            }
        }
        outs.push_back(y);
    }
    Var merged = outs[0];
    for (std::size_t b = 1; b < outs.size(); ++b) merged = diff::add(t, merged, outs[b]);
    if (outs.size() > 1) merged = diff::scale(t, merged, 1.0 / static_cast<double>(outs.size()));
    return merged;
}

Var Decoder::activate(Tape& t, Var pre) const {
    return cfg_.decoder_output == DecoderOutput::sigmoid ? diff::sigmoid(t, pre) : pre;
}

}  // namespace lpad::nets
