#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lpad/param_store.hpp"
#include "lpad/rng.hpp"
#include "lpad/tape.hpp"

namespace lpad::nets {

enum class HeadKind { gaussian, bernoulli };
enum class DecoderOutput { linear, sigmoid };

struct Branch {
    std::int64_t filters = 32;
    std::int64_t kernel = 3;
};

struct NetConfig {
    std::int64_t in_channels = 7;
    std::int64_t window_len = 64;
    std::vector<Branch> branches = {{32, 3}, {32, 5}, {32, 7}};
    std::int64_t blocks_per_branch = 2;
    std::int64_t latent_dim = 64;
    HeadKind head_kind = HeadKind::gaussian;
    DecoderOutput decoder_output = DecoderOutput::linear;
    bool logvar_softplus = true;  // route the log-variance estimate through softplus
    diff::Upsample upsample = diff::Upsample::linear;

    void validate() const;  // throws listing the violated invariant
    std::int64_t pooled_len() const;
    std::int64_t trunk_channels() const;  // sum of branch filter counts
    std::int64_t encoder_param_count() const;
    std::int64_t decoder_param_count() const;
};

/// Binds store parameters to tape leaves, one leaf per name per tape, so a
/// parameter used in several places accumulates one gradient.
class ParamBinder {
public:
    ParamBinder(diff::Tape& t, ParamStore& s) : tape_(&t), store_(&s) {}
    diff::Var operator()(const std::string& name);
    /// Gradients of every bound trainable parameter (after backward).
    std::unordered_map<std::string, Tensor> harvest() const;

private:
    diff::Tape* tape_;
    ParamStore* store_;
    std::unordered_map<std::string, diff::Var> cache_;
};

struct EncoderHead {
    diff::Var mu = -1;
    diff::Var logvar = -1;     // gaussian
    diff::Var log_alpha = -1;  // bernoulli
};

/// Parallel 1D-convolution branches (conv -> batch-norm -> relu -> max-pool
/// per block), concatenated channelwise, followed by the linear posterior
/// head(s).
class Encoder {
public:
    Encoder() = default;
    explicit Encoder(NetConfig cfg, std::string prefix = "enc");
    void register_params(ParamStore& store, Rng& rng) const;
    EncoderHead forward(diff::Tape& t, ParamBinder& bind, ParamStore& store, diff::Var x,
                        bool update_bn) const;
    const NetConfig& cfg() const { return cfg_; }

private:
    NetConfig cfg_;
    std::string prefix_;
};

/// Inverted encoder: latent -> linear -> per-branch (upsample -> transpose
/// conv -> batch-norm -> relu) blocks, with the last block of each branch
/// mapping back to in_channels and the branch outputs averaged. forward
/// returns the pre-activation output; apply activate() for the configured
/// decoder output.
class Decoder {
public:
    Decoder() = default;
    explicit Decoder(NetConfig cfg, std::string prefix = "dec");
    void register_params(ParamStore& store, Rng& rng) const;
    diff::Var forward(diff::Tape& t, ParamBinder& bind, ParamStore& store, diff::Var z,
                      bool update_bn) const;
    diff::Var activate(diff::Tape& t, diff::Var pre) const;
    const NetConfig& cfg() const { return cfg_; }

private:
    NetConfig cfg_;
    std::string prefix_;
};

}  // namespace lpad::nets
