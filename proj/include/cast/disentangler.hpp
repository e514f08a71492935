#pragma once

#include "cast/nn.hpp"

namespace cast {

struct DisentanglerConfig {
    int64_t F = 16;              // hidden width
    int64_t S_k = 3;             // env conv kernels are 2^0 .. 2^{S_k}
    int64_t T = 24;              // window length
    int64_t D = 1;               // input feature width
    int64_t backbone_layers = 2;

    void validate() const {
        if (F < 1) throw ContractError("disentangler: F must be >= 1");
        if ((int64_t{1} << S_k) > T) {
            throw ContractError("disentangler: largest kernel 2^" + std::to_string(S_k) +
                                " exceeds window length " + std::to_string(T));
        }
    }
};

/// Per-node temporal encoder stack: dilated causal convolutions with
/// residual connections, dilation doubling per layer.
struct TcnBackbone {
    std::vector<nn::Conv1d> convs;
    std::vector<nn::Conv1d> skips;  // 1x1 projection when channel widths differ
    std::vector<bool> has_skip;

    TcnBackbone() = default;
    TcnBackbone(const DisentanglerConfig& cfg, std::mt19937_64& rng);

    /// X [B,T,N,D] -> H [B,T,N,F]; causal along T, no cross-node mixing.
    Tensor forward(Binder& bind, const Tensor& x) const;
    void params(std::vector<Param*>& out);
};

/// Environment branch: parallel causal convolutions with kernel sizes
/// 2^0..2^{S_k}, concatenated, mean-pooled over time, linearly projected.
struct EnvEncoder {
    std::vector<nn::Conv1d> convs;
    nn::Linear proj;

    EnvEncoder() = default;
    EnvEncoder(const DisentanglerConfig& cfg, std::mt19937_64& rng);

    /// H [B,T,N,F] -> H_e [B,N,F]
    Tensor forward(Binder& bind, const Tensor& h) const;
    void params(std::vector<Param*>& out);
};

/// Entity branch: a frequency path (DFT -> linear over the stacked
/// real/imag spectrum -> inverse DFT, real part) summed with a time path
/// (self-attention + layer norm), mean-pooled over time, projected.
struct EntEncoder {
    nn::Linear freq;       // acts on the length-2T stacked spectrum
    nn::SelfAttention attn;
    nn::Linear proj;

    EntEncoder() = default;
    EntEncoder(const DisentanglerConfig& cfg, std::mt19937_64& rng);

    /// H [B,T,N,F] -> H_i [B,N,F]
    Tensor forward(Binder& bind, const Tensor& h) const;
    void params(std::vector<Param*>& out);
};

}  // namespace cast
