#pragma once

#include "cast/edge_features.hpp"
#include "cast/graph.hpp"
#include "cast/nn.hpp"

namespace cast {

struct DeconfounderConfig {
    int64_t F = 16;        // latent width
    int64_t F_edge = 6;    // raw edge-feature width
    int64_t U = 3;         // spectral polynomial order
    int64_t K_b = 2;       // GCN depth == causal-strength columns
    int64_t D_p = 4;       // position embedding width
    double laplacian_scale = 1.0;

    void validate() const {
        if (U < 1) throw ContractError("deconfounder: polynomial order must be >= 1");
        if (K_b < 1) throw ContractError("deconfounder: GCN depth must be >= 1");
    }
};

/// Edge-level de-confounding block: encodes per-window edge signals, filters
/// them spectrally over the edge Laplacian, converts them to per-layer causal
/// strengths that gate a directed GCN over entity features, and adds a
/// static position branch.
struct Deconfounder {
    DeconfounderConfig cfg;
    Mat laplacian;        // [M,M], first-order edge Laplacian (scaled)
    Mat src_select;       // [M,N] one-hot rows picking each edge's source
    Mat dst_scatter;      // [N,M] one-hot columns summing messages into targets

    nn::Mlp edge_encoder;       // F' -> F -> F
    LaguerreCoeffs filter;      // theta [U]
    nn::Linear strength;        // F -> K_b (then sigmoid)
    std::vector<nn::Linear> gcn_self;
    std::vector<nn::Linear> gcn_msg;
    Param position;             // [N, D_p]
    nn::Linear position_proj;   // D_p -> F

    Deconfounder() = default;
    Deconfounder(const STGraph& g, const DeconfounderConfig& c, std::mt19937_64& rng);

    /// x_ed [B,M,F'] -> latent edge features [B,M,F].
    Tensor edge_encode(Binder& bind, const Tensor& x_ed) const;

    /// Spectral filtering over the edge graph (ripple of causation).
    Tensor filter_causation(Tape& t, Binder& bind, const Tensor& h_ed) const;

    /// Per-edge, per-layer causal strengths in (0,1): [B,M,K_b].
    Tensor causal_strength(Binder& bind, const Tensor& h_ed_hat) const;

    /// Strength-gated directed message passing: h_i [B,N,F] -> [B,N,F].
    Tensor causal_gcn(Binder& bind, const Tensor& h_i, const Tensor& a_cau) const;

    /// Static branch from the position embedding: [N,F] (broadcasts over B).
    Tensor position_branch(Binder& bind) const;

    struct Result {
        Tensor surrogate;   // [B,N,F]
        Tensor a_cau;       // [B,M,K_b]
        Tensor h_ed_hat;    // [B,M,F]
    };
    /// Full block: surrogate = gcn(h_i, strengths) + position branch.
    Result forward(Tape& t, Binder& bind, const Tensor& h_i, const Tensor& x_ed) const;

    void params(std::vector<Param*>& out);
};

/// One exported causal-strength record (see export_causal).
struct CausalRecord {
    int64_t window_id;
    int64_t src;
    int64_t dst;
    int64_t layer;
    double strength;
};

/// Flatten a strength tensor for one window into exportable rows
/// (M x K_b records, edge-major).
std::vector<CausalRecord> export_causal(const Tensor& a_cau_window, const STGraph& g,
                                        int64_t window_id);

/// Serialize records as JSON lines with 17-significant-digit floats so
/// values round-trip bit-exactly.
std::string causal_records_to_json(const std::vector<CausalRecord>& records);

}  // namespace cast
