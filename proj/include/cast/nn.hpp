#pragma once

#include "cast/tensor.hpp"

namespace cast::nn {

/// Affine map on the last axis: y = x W + b, x [..., in].
struct Linear {
    Param W;
    Param b;

    Linear() = default;
    Linear(const std::string& name, int64_t in, int64_t out, std::mt19937_64& rng,
           bool zero_init = false)
        : W(name + ".W", Shape{in, out}), b(name + ".b", Shape{out}) {
        if (!zero_init) init::xavier(W, rng, in, out);
    }

    /// With `frozen_params`, weights enter the graph behind a stop-gradient,
    /// so the loss can shape the inputs without updating this layer.
    Tensor forward(Binder& bind, const Tensor& x, bool frozen_params = false) const {
        Tensor w = bind(const_cast<Param&>(W));
        Tensor bias = bind(const_cast<Param&>(b));
        if (frozen_params) {
            w = detach(w);
            bias = detach(bias);
        }
        Shape orig = x.shape();
        int64_t in = orig.back();
        Tensor flat = reshape(x, Shape{x.numel() / in, in});
        Tensor y = add(matmul(flat, w), bias);
        Shape out_shape(orig.begin(), orig.end() - 1);
        out_shape.push_back(W.shape[1]);
        return reshape(y, out_shape);
    }

    void params(std::vector<Param*>& out) {
        out.push_back(&W);
        out.push_back(&b);
    }
};

/// Stack of Linear layers with ReLU between them (linear final layer).
struct Mlp {
    std::vector<Linear> layers;

    Mlp() = default;
    Mlp(const std::string& name, const std::vector<int64_t>& widths, std::mt19937_64& rng,
        bool zero_init_last = false) {
        for (size_t i = 0; i + 1 < widths.size(); ++i) {
            bool last = i + 2 == widths.size();
            layers.emplace_back(name + ".l" + std::to_string(i), widths[i], widths[i + 1], rng,
                                last && zero_init_last);
        }
    }

    Tensor forward(Binder& bind, Tensor x, bool frozen_params = false) const {
        for (size_t i = 0; i < layers.size(); ++i) {
            x = layers[i].forward(bind, x, frozen_params);
            if (i + 1 < layers.size()) x = relu(x);
        }
        return x;
    }

    void params(std::vector<Param*>& out) {
        for (auto& l : layers) l.params(out);
    }
};

/// Causal 1-D convolution layer, x [B,Cin,L] -> [B,Cout,L].
struct Conv1d {
    Param w;
    Param b;
    int64_t dilation = 1;

    Conv1d() = default;
    Conv1d(const std::string& name, int64_t cin, int64_t cout, int64_t kernel, int64_t dil,
           std::mt19937_64& rng)
        : w(name + ".w", Shape{cout, cin, kernel}), b(name + ".b", Shape{cout}), dilation(dil) {
        init::xavier(w, rng, cin * kernel, cout);
    }

    Tensor forward(Binder& bind, const Tensor& x) const {
        Tensor y = conv1d(x, bind(const_cast<Param&>(w)), dilation);
        Tensor bias = reshape(bind(const_cast<Param&>(b)), Shape{b.shape[0], 1});
        return add(y, bias);
    }

    void params(std::vector<Param*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

/// Single-head scaled dot-product attention over the middle (time) axis.
/// x [batch..., T, F] -> same shape; attention rows sum to 1.
struct SelfAttention {
    Param Wq, Wk, Wv;

    SelfAttention() = default;
    SelfAttention(const std::string& name, int64_t f, std::mt19937_64& rng)
        : Wq(name + ".Wq", Shape{f, f}), Wk(name + ".Wk", Shape{f, f}), Wv(name + ".Wv", Shape{f, f}) {
        init::xavier(Wq, rng, f, f);
        init::xavier(Wk, rng, f, f);
        init::xavier(Wv, rng, f, f);
    }

    Tensor forward(Binder& bind, const Tensor& x) const {
        int64_t f = Wq.shape[0];
        Tensor q = matmul(x, bind(const_cast<Param&>(Wq)));
        Tensor k = matmul(x, bind(const_cast<Param&>(Wk)));
        Tensor v = matmul(x, bind(const_cast<Param&>(Wv)));
        std::vector<int> axes(static_cast<size_t>(x.rank()));
        for (int i = 0; i < x.rank(); ++i) axes[static_cast<size_t>(i)] = i;
        std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
        Tensor scores = scale(matmul(q, permute(k, axes)), 1.0 / std::sqrt(static_cast<double>(f)));
        Tensor attn = softmax(scores, -1);
        return matmul(attn, v);
    }

    void params(std::vector<Param*>& out) {
        out.push_back(&Wq);
        out.push_back(&Wk);
        out.push_back(&Wv);
    }
};

/// Normalize over the last axis to zero mean, unit variance.
inline Tensor layer_norm(const Tensor& x, double eps = 1e-5) {
    Tensor mu = mean(x, -1, true);
    Tensor centered = sub(x, mu);
    Tensor var = mean(mul(centered, centered), -1, true);
    return divide(centered, sqrt_(add_scalar(var, eps)));
}

}  // namespace cast::nn
