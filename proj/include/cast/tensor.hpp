#pragma once

#include <cstdint>
#include <functional>
#include <deque>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace cast {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Operand shapes cannot be combined (mismatched dims, bad axis, ...).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};

/// An operation's preconditions were violated.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& m) : std::runtime_error(m) {}
};

/// Numerical failure: NaN gradients, eigensolver breakdown, divergence.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; the tape owns all storage,
/// so a Tensor is only valid while its tape is alive and not cleared.
class Tensor {
public:
    Tensor() = default;

    const Shape& shape() const;
    int64_t numel() const;
    int64_t dim(int axis) const;
    int rank() const;

    std::vector<double>& data();
    const std::vector<double>& data() const;
    /// Gradient buffer; empty until backward() has run over this node.
    const std::vector<double>& grad() const;
    bool requires_grad() const;

    /// Value of a single-element tensor.
    double item() const;

    bool defined() const { return tape_ != nullptr; }
    int id() const { return id_; }
    Tape* tape() const { return tape_; }

private:
    friend class Tape;
    Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

struct TapeNode {
    const char* op = "leaf";
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<int> inputs;
    // Accumulates into the input nodes' grad buffers; reads this node's grad.
    std::function<void(Tape&)> backward;
    bool requires_grad = false;
};

/// Records operations in execution order. Every input of node i was created
/// before i, so reverse iteration is a valid reverse-topological sweep.
class Tape {
public:
    Tensor leaf(Shape shape, bool requires_grad = false);
    Tensor leaf(Shape shape, std::span<const double> values, bool requires_grad = false);
    Tensor scalar(double v);

    /// Internal: append an op node. `inputs` must already live on this tape.
    Tensor make(const char* op, Shape shape, std::vector<int> inputs,
                std::function<void(Tape&)> backward);

    /// Reverse-mode sweep from a scalar loss. Gradients are accumulated for
    /// every node that requires grad; others are left empty.
    void backward(const Tensor& loss);

    TapeNode& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const TapeNode& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::deque<TapeNode> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise and reduction ops. Binary ops broadcast (numpy rules); the
// backward pass sums gradients over broadcast axes.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor abs_(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);

Tensor sum(const Tensor& a, int axis, bool keepdims = false);
Tensor mean(const Tensor& a, int axis, bool keepdims = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// Numerically stable softmax along `axis`; rows sum to 1.
Tensor softmax(const Tensor& a, int axis);

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor narrow(const Tensor& a, int axis, int64_t start, int64_t length);

/// out[n,:] = m[idx[n],:]. Backward scatter-adds into m.
Tensor gather_rows(const Tensor& m, const std::vector<int64_t>& idx);

/// Identity forward, zero backward (the stop-gradient marker).
Tensor detach(const Tensor& a);

/// Forward copies `value_from` bit-for-bit; backward routes the incoming
/// gradient unchanged to `grad_to` and nothing to `value_from`.
Tensor straight_through(const Tensor& value_from, const Tensor& grad_to);

// ---------------------------------------------------------------------------
// Linear algebra and signal ops.
// ---------------------------------------------------------------------------

/// [..,p,q] x [..,q,r]; leading dims broadcast; either side may be rank 2.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Causal 1-D convolution: x [B,Cin,L], w [Cout,Cin,k]; output [B,Cout,L].
/// The input is left-padded with (k-1)*dilation zeros, so out[t] depends
/// only on x[<=t].
Tensor conv1d(const Tensor& x, const Tensor& w, int64_t dilation = 1);

/// Exact O(L^2) discrete Fourier transform along the last axis; returns
/// (real, imaginary) parts.
std::pair<Tensor, Tensor> dft(const Tensor& x);
std::pair<Tensor, Tensor> idft(const Tensor& re, const Tensor& im);

// ---------------------------------------------------------------------------
// Parameters and optimization.
// ---------------------------------------------------------------------------

/// A persistent learnable array. Lives outside any tape; bound as a leaf
/// per forward pass via Binder.
struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;

    Param() = default;
    Param(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)) {
        value.assign(static_cast<size_t>(cast::numel(shape)), 0.0);
    }
    int64_t numel() const { return cast::numel(shape); }
};

/// Binds Params to leaves of one tape, caching so that a parameter used in
/// several places maps to a single leaf.
class Binder {
public:
    explicit Binder(Tape& tape) : tape_(&tape) {}

    Tensor operator()(Param& p);

    /// Copy accumulated leaf gradients back into the params' grad buffers.
    void pull_grads();

private:
    Tape* tape_;
    std::unordered_map<Param*, Tensor> bound_;
};

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<double>> m;  // aligned with the param list
    std::vector<std::vector<double>> v;
};

/// One Adam update with bias correction. Throws NumericError naming the
/// parameter if its gradient contains NaN.
void adam_step(const std::vector<Param*>& params, AdamState& state);

namespace init {
void zeros(Param& p);
void constant(Param& p, double v);
void gaussian(Param& p, std::mt19937_64& rng, double stddev);
/// Xavier/Glorot scaling for a fan_in -> fan_out map.
void xavier(Param& p, std::mt19937_64& rng, int64_t fan_in, int64_t fan_out);
}  // namespace init

// Convenience constructors.
Tensor zeros(Tape& t, Shape shape);
Tensor ones(Tape& t, Shape shape);
Tensor full(Tape& t, Shape shape, double v);
Tensor randn(Tape& t, Shape shape, std::mt19937_64& rng);

}  // namespace cast
