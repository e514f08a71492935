#include "cast/codebook.hpp"

#include <cmath>

namespace cast {

Codebook::Codebook(int64_t k, int64_t f, std::mt19937_64& rng, bool identical_rows)
    : e("codebook.e", Shape{k, f}), usage(static_cast<size_t>(k), 0) {
    if (k < 1) throw ContractError("codebook: need at least one code");
    double stddev = 1.0 / std::sqrt(static_cast<double>(f));
    if (identical_rows) {
        // every environment starts from the same point in the embedding space
        std::normal_distribution<double> d(0.0, stddev);
        std::vector<double> row(static_cast<size_t>(f));
        for (auto& x : row) x = d(rng);
        for (int64_t i = 0; i < k; ++i)
            for (int64_t j = 0; j < f; ++j)
                e.value[static_cast<size_t>(i * f + j)] = row[static_cast<size_t>(j)];
    } else {
        init::gaussian(e, rng, stddev);
    }
}

namespace {

// Flatten [..., F] to row-major rows.
std::pair<int64_t, int64_t> row_layout(const Tensor& h, int64_t f) {
    if (h.rank() < 2 || h.shape().back() != f) {
        throw ShapeError("quantize: feature width of " + shape_str(h.shape()) +
                         " does not match codebook width " + std::to_string(f));
    }
    return {h.numel() / f, f};
}

}  // namespace

std::vector<int64_t> nearest_code_scan(const std::vector<double>& rows, int64_t n, int64_t f,
                                       const std::vector<double>& codes, int64_t k) {
    std::vector<int64_t> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int64_t arg = 0;
        for (int64_t c = 0; c < k; ++c) {
            double d2 = 0.0;
            for (int64_t j = 0; j < f; ++j) {
                double d = rows[static_cast<size_t>(i * f + j)] - codes[static_cast<size_t>(c * f + j)];
                d2 += d * d;
            }
            if (d2 < best) {
                best = d2;
                arg = c;
            }
        }
        out[static_cast<size_t>(i)] = arg;
    }
    return out;
}

std::pair<Tensor, HardAssignment> quantize_hard(Binder& bind, const Tensor& h_e, Codebook& cb) {
    if (cb.size() < 1) throw ContractError("quantize_hard: empty codebook");
    auto [n, f] = row_layout(h_e, cb.width());

    HardAssignment z;
    z.index = nearest_code_scan(h_e.data(), n, f, cb.e.value, cb.size());
    z.counts.assign(static_cast<size_t>(cb.size()), 0);
    for (int64_t i : z.index) {
        z.counts[static_cast<size_t>(i)] += 1;
        cb.usage[static_cast<size_t>(i)] += 1;
    }

    Tensor codes = bind(cb.e);
    Tensor flat = reshape(h_e, Shape{n, f});
    Tensor selected = gather_rows(codes, z.index);
    // value is the selected code bit-for-bit; gradient flows to h_e unchanged
    Tensor quantized = straight_through(selected, flat);
    return {reshape(quantized, h_e.shape()), std::move(z)};
}

std::pair<Tensor, Tensor> quantize_soft(Binder& bind, const Tensor& h_e, Codebook& cb,
                                        double temperature) {
    if (cb.size() < 1) throw ContractError("quantize_soft: empty codebook");
    if (temperature <= 0.0) throw ContractError("quantize_soft: temperature must be positive");
    auto [n, f] = row_layout(h_e, cb.width());
    Tensor codes = bind(cb.e);                       // [K,F]
    Tensor flat = reshape(h_e, Shape{n, 1, f});      // rows vs every code
    Tensor diff = sub(flat, reshape(codes, Shape{1, cb.size(), f}));
    Tensor d2 = sum(mul(diff, diff), -1, false);     // [n,K]
    Tensor q = softmax(scale(d2, -1.0 / temperature), -1);
    Tensor mixed = matmul(q, codes);                 // [n,F]
    Shape qshape(h_e.shape().begin(), h_e.shape().end() - 1);
    qshape.push_back(cb.size());
    return {reshape(mixed, h_e.shape()), reshape(q, qshape)};
}

Tensor codebook_loss(Binder& bind, const Tensor& h_e, const HardAssignment& z, Codebook& cb,
                     double alpha) {
    auto [n, f] = row_layout(h_e, cb.width());
    if (static_cast<int64_t>(z.index.size()) != n) {
        throw ContractError("codebook_loss: assignment covers " + std::to_string(z.index.size()) +
                            " rows, expected " + std::to_string(n));
    }
    Tensor codes = bind(cb.e);
    Tensor flat = reshape(h_e, Shape{n, f});
    Tensor selected = gather_rows(codes, z.index);
    double inv_n = 1.0 / static_cast<double>(n);

    Tensor push_codes = sub(detach(flat), selected);         // moves e only
    Tensor push_encoder = sub(flat, detach(selected));       // moves h_e only
    Tensor term1 = scale(sum_all(mul(push_codes, push_codes)), inv_n);
    Tensor term2 = scale(sum_all(mul(push_encoder, push_encoder)), inv_n * alpha);
    return add(term1, term2);
}

}  // namespace cast
