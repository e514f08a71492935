#pragma once

#include "cast/tensor.hpp"

namespace cast {

/// Trainable environment embedding table, shared across nodes. `usage`
/// accumulates hard-assignment counts across calls (diagnostics only).
struct Codebook {
    Param e;  // [K,F]
    std::vector<int64_t> usage;

    Codebook() = default;
    Codebook(int64_t k, int64_t f, std::mt19937_64& rng, bool identical_rows = false);

    int64_t size() const { return e.shape[0]; }
    int64_t width() const { return e.shape[1]; }
    void params(std::vector<Param*>& out) { out.push_back(&e); }
};

/// Result of a quantization pass over flattened rows.
struct HardAssignment {
    std::vector<int64_t> index;   // one codebook row id per input row
    std::vector<int64_t> counts;  // per-code counts for this call; sums to #rows
};

/// Nearest-neighbour quantization with straight-through gradients: the
/// returned rows are exact codebook rows, and the gradient that reaches them
/// is copied unchanged onto the input. Ties break toward the lowest index.
/// h_e is [N,F] or [B,N,F]; the assignment is row-major flattened.
std::pair<Tensor, HardAssignment> quantize_hard(Binder& bind, const Tensor& h_e, Codebook& cb);

/// Soft assignment: q = softmax(-||h - e_j||^2 / temperature) over codes,
/// output rows are convex combinations q e. Returns (quantized, q).
std::pair<Tensor, Tensor> quantize_soft(Binder& bind, const Tensor& h_e, Codebook& cb,
                                        double temperature);

/// Two-term commitment loss: mean_i ||sg[h_e(i)] - e_{z(i)}||^2 moves only
/// the codebook; alpha * mean_i ||h_e(i) - sg[e_{z(i)}]||^2 moves only the
/// encoder side.
Tensor codebook_loss(Binder& bind, const Tensor& h_e, const HardAssignment& z, Codebook& cb,
                     double alpha);

/// Brute-force nearest-neighbour scan (test oracle; no tape involvement).
std::vector<int64_t> nearest_code_scan(const std::vector<double>& rows, int64_t n, int64_t f,
                                       const std::vector<double>& codes, int64_t k);

}  // namespace cast
