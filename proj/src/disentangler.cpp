#include "cast/disentangler.hpp"

namespace cast {

namespace {

// [B,T,N,C] -> [B*N, C, T]: per-node temporal layout for conv1d.
Tensor to_node_rows(const Tensor& x) {
    Tensor p = permute(x, {0, 2, 3, 1});  // [B,N,C,T]
    const Shape& s = p.shape();
    return reshape(p, Shape{s[0] * s[1], s[2], s[3]});
}

// [B*N, C, T] -> [B,T,N,C]
Tensor from_node_rows(const Tensor& x, int64_t B, int64_t N) {
    const Shape& s = x.shape();
    Tensor r = reshape(x, Shape{B, N, s[1], s[2]});
    return permute(r, {0, 3, 1, 2});
}

}  // namespace

// ---------------------------------------------------------------------------
// TcnBackbone
// ---------------------------------------------------------------------------

TcnBackbone::TcnBackbone(const DisentanglerConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    int64_t dilation = 1;
    for (int64_t l = 0; l < cfg.backbone_layers; ++l) {
        int64_t cin = l == 0 ? cfg.D : cfg.F;
        convs.emplace_back("backbone.conv" + std::to_string(l), cin, cfg.F, 2, dilation, rng);
        bool mismatch = cin != cfg.F;
        has_skip.push_back(mismatch);
        if (mismatch) {
            skips.emplace_back("backbone.skip" + std::to_string(l), cin, cfg.F, 1, 1, rng);
        }
        dilation *= 2;
    }
}

Tensor TcnBackbone::forward(Binder& bind, const Tensor& x) const {
    if (x.rank() != 4) throw ShapeError("backbone: expected [B,T,N,D], got " + shape_str(x.shape()));
    int64_t B = x.shape()[0], N = x.shape()[2];
    Tensor h = to_node_rows(x);
    size_t skip_i = 0;
    for (size_t l = 0; l < convs.size(); ++l) {
        Tensor y = relu(convs[l].forward(bind, h));
        Tensor res = has_skip[l] ? skips[skip_i++].forward(bind, h) : h;
        h = add(y, res);
    }
    return from_node_rows(h, B, N);
}

void TcnBackbone::params(std::vector<Param*>& out) {
    for (auto& c : convs) c.params(out);
    for (auto& s : skips) s.params(out);
}

// ---------------------------------------------------------------------------
// EnvEncoder
// ---------------------------------------------------------------------------

EnvEncoder::EnvEncoder(const DisentanglerConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    for (int64_t i = 0; i <= cfg.S_k; ++i) {
        convs.emplace_back("env.conv" + std::to_string(i), cfg.F, cfg.F, int64_t{1} << i, 1, rng);
    }
    proj = nn::Linear("env.proj", cfg.F * static_cast<int64_t>(convs.size()), cfg.F, rng);
}

Tensor EnvEncoder::forward(Binder& bind, const Tensor& h) const {
    if (h.rank() != 4) throw ShapeError("env encoder: expected [B,T,N,F], got " + shape_str(h.shape()));
    int64_t B = h.shape()[0], N = h.shape()[2];
    Tensor rows = to_node_rows(h);  // [B*N, F, T]
    std::vector<Tensor> taps;
    taps.reserve(convs.size());
    for (const auto& c : convs) taps.push_back(c.forward(bind, rows));
    Tensor mixed = concat(taps, 1);          // [B*N, F*(S_k+1), T]
    Tensor pooled = mean(mixed, -1, false);  // [B*N, F*(S_k+1)]
    Tensor out = proj.forward(bind, pooled);
    return reshape(out, Shape{B, N, out.shape().back()});
}

void EnvEncoder::params(std::vector<Param*>& out) {
    for (auto& c : convs) c.params(out);
    proj.params(out);
}

// ---------------------------------------------------------------------------
// EntEncoder
// ---------------------------------------------------------------------------

EntEncoder::EntEncoder(const DisentanglerConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    freq = nn::Linear("ent.freq", 2 * cfg.T, 2 * cfg.T, rng);
    attn = nn::SelfAttention("ent.attn", cfg.F, rng);
    proj = nn::Linear("ent.proj", cfg.F, cfg.F, rng);
}

Tensor EntEncoder::forward(Binder& bind, const Tensor& h) const {
    if (h.rank() != 4) throw ShapeError("ent encoder: expected [B,T,N,F], got " + shape_str(h.shape()));
    int64_t B = h.shape()[0], T = h.shape()[1], N = h.shape()[2], F = h.shape()[3];

    // frequency path: spectrum per (node, channel), mixed by one linear map
    Tensor rows = to_node_rows(h);  // [B*N, F, T]
    auto [re, im] = dft(rows);
    Tensor spectrum = concat({re, im}, -1);            // [B*N, F, 2T]
    Tensor mixed = freq.forward(bind, spectrum);
    Tensor re2 = narrow(mixed, -1, 0, T);
    Tensor im2 = narrow(mixed, -1, T, T);
    Tensor freq_time = idft(re2, im2).first;           // real part, [B*N, F, T]
    Tensor freq_branch = permute(freq_time, {0, 2, 1});  // [B*N, T, F]

    // time path: attention over steps, then layer norm
    Tensor seq = reshape(permute(h, {0, 2, 1, 3}), Shape{B * N, T, F});
    Tensor time_branch = nn::layer_norm(attn.forward(bind, seq));

    Tensor fused = add(freq_branch, time_branch);  // [B*N, T, F]
    Tensor pooled = mean(fused, 1, false);         // [B*N, F]
    Tensor out = proj.forward(bind, pooled);
    return reshape(out, Shape{B, N, F});
}

void EntEncoder::params(std::vector<Param*>& out) {
    freq.params(out);
    attn.params(out);
    proj.params(out);
}

}  // namespace cast
