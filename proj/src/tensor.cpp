#include "cast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

namespace cast {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

int norm_axis(int axis, int rank) {
    int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return a;
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
    std::vector<int64_t> st(shape.size());
    int64_t acc = 1;
    for (size_t i = shape.size(); i-- > 0;) {
        st[i] = acc;
        acc *= shape[i];
    }
    return st;
}

void check_positive_dims(const Shape& shape) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    }
}

// Broadcast layout for a binary op: output shape plus per-operand strides
// with 0 on broadcast axes.
struct Bcast {
    Shape out;
    std::vector<int64_t> sa;
    std::vector<int64_t> sb;
};

Bcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    size_t rank = std::max(a.size(), b.size());
    Bcast r;
    r.out.resize(rank);
    r.sa.assign(rank, 0);
    r.sb.assign(rank, 0);
    auto stra = row_major_strides(a);
    auto strb = row_major_strides(b);
    for (size_t i = 0; i < rank; ++i) {
        size_t oi = rank - 1 - i;
        int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcastable");
        }
        r.out[oi] = std::max(da, db);
        if (da != 1 && i < a.size()) r.sa[oi] = stra[a.size() - 1 - i];
        if (db != 1 && i < b.size()) r.sb[oi] = strb[b.size() - 1 - i];
    }
    return r;
}

// Walks an output shape while tracking flat offsets of two broadcast
// operands. Avoids div/mod in the hot loop.
struct Odometer2 {
    const Shape& shape;
    const std::vector<int64_t>& sa;
    const std::vector<int64_t>& sb;
    std::vector<int64_t> idx;
    int64_t ia = 0, ib = 0;

    Odometer2(const Shape& s, const std::vector<int64_t>& a, const std::vector<int64_t>& b)
        : shape(s), sa(a), sb(b), idx(s.size(), 0) {}

    void advance() {
        for (size_t d = shape.size(); d-- > 0;) {
            ia += sa[d];
            ib += sb[d];
            if (++idx[d] < shape[d]) return;
            ia -= sa[d] * shape[d];
            ib -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Tensor accessors
// ---------------------------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
int64_t Tensor::numel() const { return cast::numel(shape()); }
int Tensor::rank() const { return static_cast<int>(shape().size()); }
int64_t Tensor::dim(int axis) const { return shape()[static_cast<size_t>(norm_axis(axis, rank()))]; }
std::vector<double>& Tensor::data() { return tape_->node(id_).value; }
const std::vector<double>& Tensor::data() const { return tape_->node(id_).value; }
const std::vector<double>& Tensor::grad() const { return tape_->node(id_).grad; }
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return data()[0];
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tensor Tape::leaf(Shape shape, bool requires_grad) {
    check_positive_dims(shape);
    TapeNode n;
    n.op = "leaf";
    n.value.assign(static_cast<size_t>(cast::numel(shape)), 0.0);
    n.shape = std::move(shape);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::leaf(Shape shape, std::span<const double> values, bool requires_grad) {
    check_positive_dims(shape);
    if (static_cast<int64_t>(values.size()) != cast::numel(shape)) {
        throw ShapeError("leaf: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(shape));
    }
    TapeNode n;
    n.op = "leaf";
    n.shape = std::move(shape);
    n.value.assign(values.begin(), values.end());
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::scalar(double v) {
    return leaf(Shape{}, std::span<const double>(&v, 1), false);
}

Tensor Tape::make(const char* op, Shape shape, std::vector<int> inputs,
                  std::function<void(Tape&)> backward) {
    bool rg = false;
    for (int i : inputs) {
        if (i < 0 || static_cast<size_t>(i) >= nodes_.size()) {
            throw ContractError("tape: op input does not precede the op node");
        }
        rg = rg || nodes_[static_cast<size_t>(i)].requires_grad;
    }
    TapeNode n;
    n.op = op;
    n.value.assign(static_cast<size_t>(cast::numel(shape)), 0.0);
    n.shape = std::move(shape);
    n.inputs = std::move(inputs);
    n.requires_grad = rg;
    if (rg) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(const Tensor& loss) {
    if (loss.tape() != this) throw ContractError("backward: loss lives on another tape");
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    for (auto& n : nodes_) {
        if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    }
    auto& ln = node(loss.id());
    if (!ln.requires_grad) return;  // nothing upstream wants gradients
    ln.grad[0] = 1.0;
    for (int i = loss.id(); i >= 0; --i) {
        auto& n = nodes_[static_cast<size_t>(i)];
        if (n.requires_grad && n.backward) n.backward(*this);
    }
}

// ---------------------------------------------------------------------------
// Binary elementwise ops
// ---------------------------------------------------------------------------

namespace {

template <class FwdFn, class BwdA, class BwdB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, FwdFn f, BwdA dfa, BwdB dfb) {
    Tape& t = *a.tape();
    if (b.tape() != &t) throw ContractError(std::string(name) + ": operands on different tapes");
    Bcast bc = broadcast_shapes(a.shape(), b.shape(), name);
    int aid = a.id(), bid = b.id();
    Shape out_shape = bc.out;
    Tensor out = t.make(name, out_shape, {aid, bid}, nullptr);
    auto& ov = t.node(out.id()).value;
    const auto& av = t.node(aid).value;
    const auto& bv = t.node(bid).value;
    int64_t n = numel(out_shape);
    if (a.shape() == b.shape()) {
        for (int64_t i = 0; i < n; ++i)
            ov[static_cast<size_t>(i)] = f(av[static_cast<size_t>(i)], bv[static_cast<size_t>(i)]);
    } else {
        Odometer2 od(out_shape, bc.sa, bc.sb);
        for (int64_t i = 0; i < n; ++i, od.advance())
            ov[static_cast<size_t>(i)] = f(av[static_cast<size_t>(od.ia)], bv[static_cast<size_t>(od.ib)]);
    }
    int oid = out.id();
    t.node(oid).backward = [name, aid, bid, oid, bc, dfa, dfb](Tape& tp) {
        auto& on = tp.node(oid);
        auto& an = tp.node(aid);
        auto& bn = tp.node(bid);
        int64_t n2 = numel(on.shape);
        if (an.shape == bn.shape) {
            for (int64_t i = 0; i < n2; ++i) {
                size_t s = static_cast<size_t>(i);
                double g = on.grad[s];
                if (an.requires_grad) an.grad[s] += g * dfa(an.value[s], bn.value[s]);
                if (bn.requires_grad) bn.grad[s] += g * dfb(an.value[s], bn.value[s]);
            }
            return;
        }
        Odometer2 od(on.shape, bc.sa, bc.sb);
        for (int64_t i = 0; i < n2; ++i, od.advance()) {
            double g = on.grad[static_cast<size_t>(i)];
            size_t ia = static_cast<size_t>(od.ia), ib = static_cast<size_t>(od.ib);
            if (an.requires_grad) an.grad[ia] += g * dfa(an.value[ia], bn.value[ib]);
            if (bn.requires_grad) bn.grad[ib] += g * dfb(an.value[ia], bn.value[ib]);
        }
    };
    if (!t.node(oid).requires_grad) t.node(oid).backward = nullptr;
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", a, b, [](double x, double y) { return x + y; },
                     [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", a, b, [](double x, double y) { return x - y; },
                     [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op("mul", a, b, [](double x, double y) { return x * y; },
                     [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    return binary_op("div", a, b, [](double x, double y) { return x / y; },
                     [](double, double y) { return 1.0 / y; },
                     [](double x, double y) { return -x / (y * y); });
}

// ---------------------------------------------------------------------------
// Unary ops
// ---------------------------------------------------------------------------

namespace {

template <class FwdFn, class BwdFn>
Tensor unary_op(const char* name, const Tensor& a, FwdFn f, BwdFn df) {
    Tape& t = *a.tape();
    int aid = a.id();
    Tensor out = t.make(name, a.shape(), {aid}, nullptr);
    int oid = out.id();
    auto& ov = t.node(oid).value;
    const auto& av = t.node(aid).value;
    for (size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [aid, oid, df](Tape& tp) {
            auto& an = tp.node(aid);
            auto& on = tp.node(oid);
            if (!an.requires_grad) return;
            for (size_t i = 0; i < an.grad.size(); ++i)
                an.grad[i] += on.grad[i] * df(an.value[i], on.value[i]);
        };
    }
    return out;
}

}  // namespace

Tensor neg(const Tensor& a) {
    return unary_op("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op("add_scalar", a, [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
    return unary_op("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op("sigmoid", a,
                    [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_(const Tensor& a) {
    return unary_op("exp", a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log_(const Tensor& a) {
    return unary_op("log", a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_(const Tensor& a) {
    return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Tensor abs_(const Tensor& a) {
    return unary_op("abs", a, [](double x) { return std::abs(x); },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp_min(const Tensor& a, double floor) {
    return unary_op("clamp_min", a, [floor](double x) { return x < floor ? floor : x; },
                    [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

Tensor detach(const Tensor& a) {
    Tape& t = *a.tape();
    Tensor out = t.make("detach", a.shape(), {}, nullptr);
    t.node(out.id()).value = t.node(a.id()).value;
    return out;
}

Tensor straight_through(const Tensor& value_from, const Tensor& grad_to) {
    Tape& t = *value_from.tape();
    if (grad_to.tape() != &t) throw ContractError("straight_through: operands on different tapes");
    if (value_from.shape() != grad_to.shape()) {
        throw ShapeError("straight_through: shapes differ: " + shape_str(value_from.shape()) +
                         " vs " + shape_str(grad_to.shape()));
    }
    int vid = value_from.id(), gid = grad_to.id();
    Tensor out = t.make("straight_through", value_from.shape(), {gid}, nullptr);
    int oid = out.id();
    t.node(oid).value = t.node(vid).value;
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [gid, oid](Tape& tp) {
            auto& gn = tp.node(gid);
            if (!gn.requires_grad) return;
            const auto& og = tp.node(oid).grad;
            for (size_t i = 0; i < og.size(); ++i) gn.grad[i] += og[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a, int axis, bool keepdims) {
    Tape& t = *a.tape();
    int ax = norm_axis(axis, a.rank());
    const Shape& in = a.shape();
    Shape out_shape;
    for (int i = 0; i < a.rank(); ++i) {
        if (i == ax) {
            if (keepdims) out_shape.push_back(1);
        } else {
            out_shape.push_back(in[static_cast<size_t>(i)]);
        }
    }
    int64_t outer = 1, inner = 1, red = in[static_cast<size_t>(ax)];
    for (int i = 0; i < ax; ++i) outer *= in[static_cast<size_t>(i)];
    for (int i = ax + 1; i < a.rank(); ++i) inner *= in[static_cast<size_t>(i)];

    int aid = a.id();
    Tensor out = t.make("sum", out_shape, {aid}, nullptr);
    int oid = out.id();
    {
        auto& ov = t.node(oid).value;
        const auto& av = t.node(aid).value;
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t r = 0; r < red; ++r) {
                const double* src = av.data() + (o * red + r) * inner;
                double* dst = ov.data() + o * inner;
                for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
    }
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [aid, oid, outer, inner, red](Tape& tp) {
            auto& an = tp.node(aid);
            auto& on = tp.node(oid);
            if (!an.requires_grad) return;
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t r = 0; r < red; ++r) {
                    double* dst = an.grad.data() + (o * red + r) * inner;
                    const double* src = on.grad.data() + o * inner;
                    for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
        };
    }
    return out;
}

Tensor mean(const Tensor& a, int axis, bool keepdims) {
    int ax = norm_axis(axis, a.rank());
    double inv = 1.0 / static_cast<double>(a.shape()[static_cast<size_t>(ax)]);
    return scale(sum(a, axis, keepdims), inv);
}

Tensor sum_all(const Tensor& a) {
    Tape& t = *a.tape();
    int aid = a.id();
    Tensor out = t.make("sum_all", Shape{}, {aid}, nullptr);
    int oid = out.id();
    double acc = 0.0;
    for (double v : t.node(aid).value) acc += v;
    t.node(oid).value[0] = acc;
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [aid, oid](Tape& tp) {
            auto& an = tp.node(aid);
            if (!an.requires_grad) return;
            double g = tp.node(oid).grad[0];
            for (auto& x : an.grad) x += g;
        };
    }
    return out;
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

Tensor softmax(const Tensor& a, int axis) {
    Tape& t = *a.tape();
    int ax = norm_axis(axis, a.rank());
    const Shape& in = a.shape();
    int64_t outer = 1, inner = 1, red = in[static_cast<size_t>(ax)];
    for (int i = 0; i < ax; ++i) outer *= in[static_cast<size_t>(i)];
    for (int i = ax + 1; i < a.rank(); ++i) inner *= in[static_cast<size_t>(i)];

    int aid = a.id();
    Tensor out = t.make("softmax", in, {aid}, nullptr);
    int oid = out.id();
    {
        auto& ov = t.node(oid).value;
        const auto& av = t.node(aid).value;
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < inner; ++i) {
                const int64_t base = o * red * inner + i;
                double mx = -std::numeric_limits<double>::infinity();
                for (int64_t r = 0; r < red; ++r)
                    mx = std::max(mx, av[static_cast<size_t>(base + r * inner)]);
                double z = 0.0;
                for (int64_t r = 0; r < red; ++r) {
                    double e = std::exp(av[static_cast<size_t>(base + r * inner)] - mx);
                    ov[static_cast<size_t>(base + r * inner)] = e;
                    z += e;
                }
                for (int64_t r = 0; r < red; ++r) ov[static_cast<size_t>(base + r * inner)] /= z;
            }
    }
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [aid, oid, outer, inner, red](Tape& tp) {
            auto& an = tp.node(aid);
            auto& on = tp.node(oid);
            if (!an.requires_grad) return;
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    const int64_t base = o * red * inner + i;
                    double dot = 0.0;
                    for (int64_t r = 0; r < red; ++r) {
                        size_t k = static_cast<size_t>(base + r * inner);
                        dot += on.grad[k] * on.value[k];
                    }
                    for (int64_t r = 0; r < red; ++r) {
                        size_t k = static_cast<size_t>(base + r * inner);
                        an.grad[k] += on.value[k] * (on.grad[k] - dot);
                    }
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    Tape& t = *a.tape();
    if (numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    int aid = a.id();
    Tensor out = t.make("reshape", std::move(shape), {aid}, nullptr);
    int oid = out.id();
    t.node(oid).value = t.node(aid).value;
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [aid, oid](Tape& tp) {
            auto& an = tp.node(aid);
            if (!an.requires_grad) return;
            const auto& og = tp.node(oid).grad;
            for (size_t i = 0; i < og.size(); ++i) an.grad[i] += og[i];
        };
    }
    return out;
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
    Tape& t = *a.tape();
    int rank = a.rank();
    if (static_cast<int>(axes.size()) != rank) throw ShapeError("permute: axes size mismatch");
    std::vector<bool> seen(static_cast<size_t>(rank), false);
    Shape out_shape(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) {
        int ax = norm_axis(axes[static_cast<size_t>(i)], rank);
        if (seen[static_cast<size_t>(ax)]) throw ShapeError("permute: repeated axis");
        seen[static_cast<size_t>(ax)] = true;
        out_shape[static_cast<size_t>(i)] = a.shape()[static_cast<size_t>(ax)];
    }
    auto in_strides = row_major_strides(a.shape());
    std::vector<int64_t> gather(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i)
        gather[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(norm_axis(axes[static_cast<size_t>(i)], rank))];

    int aid = a.id();
    Tensor out = t.make("permute", out_shape, {aid}, nullptr);
    int oid = out.id();
    {
        auto& ov = t.node(oid).value;
        const auto& av = t.node(aid).value;
        std::vector<int64_t> zero(static_cast<size_t>(rank), 0);
        Odometer2 od(t.node(oid).shape, gather, zero);
        int64_t n = a.numel();
        for (int64_t f = 0; f < n; ++f, od.advance())
            ov[static_cast<size_t>(f)] = av[static_cast<size_t>(od.ia)];
    }
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [aid, oid, gather, rank](Tape& tp) {
            auto& an = tp.node(aid);
            auto& on = tp.node(oid);
            if (!an.requires_grad) return;
            std::vector<int64_t> zero(static_cast<size_t>(rank), 0);
            Odometer2 od(on.shape, gather, zero);
            int64_t n = numel(on.shape);
            for (int64_t f = 0; f < n; ++f, od.advance())
                an.grad[static_cast<size_t>(od.ia)] += on.grad[static_cast<size_t>(f)];
        };
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    Tape& t = *parts[0].tape();
    int rank = parts[0].rank();
    int ax = norm_axis(axis, rank);
    Shape out_shape = parts[0].shape();
    int64_t cat = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < rank; ++i) {
            if (i != ax && p.shape()[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)])
                throw ShapeError("concat: shapes " + shape_str(out_shape) + " and " +
                                 shape_str(p.shape()) + " differ off-axis");
        }
        cat += p.shape()[static_cast<size_t>(ax)];
    }
    out_shape[static_cast<size_t>(ax)] = cat;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= out_shape[static_cast<size_t>(i)];
    for (int i = ax + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];

    std::vector<int> ids;
    std::vector<int64_t> widths;
    for (const auto& p : parts) {
        ids.push_back(p.id());
        widths.push_back(p.shape()[static_cast<size_t>(ax)] * inner);
    }
    int64_t out_w = cat * inner;

    Tensor out = t.make("concat", out_shape, ids, nullptr);
    int oid = out.id();
    {
        auto& ov = t.node(oid).value;
        int64_t off = 0;
        for (size_t p = 0; p < ids.size(); ++p) {
            const auto& pv = t.node(ids[p]).value;
            for (int64_t o = 0; o < outer; ++o)
                std::memcpy(ov.data() + o * out_w + off, pv.data() + o * widths[p],
                            static_cast<size_t>(widths[p]) * sizeof(double));
            off += widths[p];
        }
    }
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [ids, widths, outer, out_w, oid](Tape& tp) {
            auto& on = tp.node(oid);
            int64_t off = 0;
            for (size_t p = 0; p < ids.size(); ++p) {
                auto& pn = tp.node(ids[p]);
                if (pn.requires_grad) {
                    for (int64_t o = 0; o < outer; ++o) {
                        const double* src = on.grad.data() + o * out_w + off;
                        double* dst = pn.grad.data() + o * widths[p];
                        for (int64_t i = 0; i < widths[p]; ++i) dst[i] += src[i];
                    }
                }
                off += widths[p];
            }
        };
    }
    return out;
}

Tensor narrow(const Tensor& a, int axis, int64_t start, int64_t length) {
    Tape& t = *a.tape();
    int ax = norm_axis(axis, a.rank());
    int64_t d = a.shape()[static_cast<size_t>(ax)];
    if (start < 0 || length <= 0 || start + length > d) {
        throw ShapeError("narrow: window [" + std::to_string(start) + "," +
                         std::to_string(start + length) + ") out of bounds for dim " +
                         std::to_string(d));
    }
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(ax)] = length;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= a.shape()[static_cast<size_t>(i)];
    for (int i = ax + 1; i < a.rank(); ++i) inner *= a.shape()[static_cast<size_t>(i)];

    int aid = a.id();
    Tensor out = t.make("narrow", out_shape, {aid}, nullptr);
    int oid = out.id();
    {
        auto& ov = t.node(oid).value;
        const auto& av = t.node(aid).value;
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(ov.data() + o * length * inner, av.data() + (o * d + start) * inner,
                        static_cast<size_t>(length * inner) * sizeof(double));
    }
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [aid, oid, outer, inner, d, start, length](Tape& tp) {
            auto& an = tp.node(aid);
            auto& on = tp.node(oid);
            if (!an.requires_grad) return;
            for (int64_t o = 0; o < outer; ++o) {
                const double* src = on.grad.data() + o * length * inner;
                double* dst = an.grad.data() + (o * d + start) * inner;
                for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
            }
        };
    }
    return out;
}

Tensor gather_rows(const Tensor& m, const std::vector<int64_t>& idx) {
    Tape& t = *m.tape();
    if (m.rank() != 2) throw ShapeError("gather_rows: expected a matrix, got " + shape_str(m.shape()));
    int64_t rows = m.shape()[0], cols = m.shape()[1];
    if (rows == 0) throw ContractError("gather_rows: empty table");
    for (int64_t i : idx) {
        if (i < 0 || i >= rows)
            throw ContractError("gather_rows: index " + std::to_string(i) + " out of range [0," +
                                std::to_string(rows) + ")");
    }
    int mid = m.id();
    Shape out_shape{static_cast<int64_t>(idx.size()), cols};
    Tensor out = t.make("gather_rows", out_shape, {mid}, nullptr);
    int oid = out.id();
    {
        auto& ov = t.node(oid).value;
        const auto& mv = t.node(mid).value;
        for (size_t n = 0; n < idx.size(); ++n)
            std::memcpy(ov.data() + n * static_cast<size_t>(cols),
                        mv.data() + static_cast<size_t>(idx[n] * cols),
                        static_cast<size_t>(cols) * sizeof(double));
    }
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [mid, oid, idx, cols](Tape& tp) {
            auto& mn = tp.node(mid);
            auto& on = tp.node(oid);
            if (!mn.requires_grad) return;
            for (size_t n = 0; n < idx.size(); ++n) {
                const double* src = on.grad.data() + n * static_cast<size_t>(cols);
                double* dst = mn.grad.data() + static_cast<size_t>(idx[n] * cols);
                for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

// C[p,r] += A[p,q] * B[q,r]
void gemm_acc(const double* A, const double* B, double* C, int64_t p, int64_t q, int64_t r) {
    for (int64_t i = 0; i < p; ++i) {
        for (int64_t k = 0; k < q; ++k) {
            double a = A[i * q + k];
            if (a == 0.0) continue;
            const double* brow = B + k * r;
            double* crow = C + i * r;
            for (int64_t j = 0; j < r; ++j) crow[j] += a * brow[j];
        }
    }
}

// dA[p,q] += G[p,r] * B^T
void gemm_gb_t(const double* G, const double* B, double* dA, int64_t p, int64_t q, int64_t r) {
    for (int64_t i = 0; i < p; ++i) {
        for (int64_t k = 0; k < q; ++k) {
            const double* grow = G + i * r;
            const double* brow = B + k * r;
            double acc = 0.0;
            for (int64_t j = 0; j < r; ++j) acc += grow[j] * brow[j];
            dA[i * q + k] += acc;
        }
    }
}

// dB[q,r] += A^T * G[p,r]
void gemm_at_g(const double* A, const double* G, double* dB, int64_t p, int64_t q, int64_t r) {
    for (int64_t i = 0; i < p; ++i) {
        for (int64_t k = 0; k < q; ++k) {
            double a = A[i * q + k];
            if (a == 0.0) continue;
            const double* grow = G + i * r;
            double* brow = dB + k * r;
            for (int64_t j = 0; j < r; ++j) brow[j] += a * grow[j];
        }
    }
}

struct MatmulPlan {
    Shape batch;                 // broadcast leading dims
    std::vector<int64_t> sa, sb; // per-batch-axis strides in units of one matrix
    int64_t p, q, r;
};

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape& t = *a.tape();
    if (b.tape() != &t) throw ContractError("matmul: operands on different tapes");
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands must be at least rank 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    int64_t p = as[as.size() - 2], q = as[as.size() - 1];
    int64_t q2 = bs[bs.size() - 2], r = bs[bs.size() - 1];
    if (q != q2) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(as) + " x " +
                         shape_str(bs));
    }
    Shape lead_a(as.begin(), as.end() - 2), lead_b(bs.begin(), bs.end() - 2);
    Bcast bc = broadcast_shapes(lead_a, lead_b, "matmul");

    MatmulPlan plan;
    plan.batch = bc.out;
    plan.p = p;
    plan.q = q;
    plan.r = r;
    // convert elementwise strides to per-matrix strides
    plan.sa = bc.sa;
    plan.sb = bc.sb;

    Shape out_shape = plan.batch;
    out_shape.push_back(p);
    out_shape.push_back(r);

    int aid = a.id(), bid = b.id();
    Tensor out = t.make("matmul", out_shape, {aid, bid}, nullptr);
    int oid = out.id();

    int64_t nb = numel(plan.batch);
    int64_t asz = p * q, bsz = q * r, osz = p * r;
    {
        auto& ov = t.node(oid).value;
        const auto& av = t.node(aid).value;
        const auto& bv = t.node(bid).value;
        Odometer2 od(plan.batch, plan.sa, plan.sb);
        for (int64_t i = 0; i < nb; ++i, od.advance())
            gemm_acc(av.data() + od.ia * asz, bv.data() + od.ib * bsz, ov.data() + i * osz, p, q, r);
    }
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [aid, bid, oid, plan, nb, asz, bsz, osz](Tape& tp) {
            auto& an = tp.node(aid);
            auto& bn = tp.node(bid);
            auto& on = tp.node(oid);
            Odometer2 od(plan.batch, plan.sa, plan.sb);
            for (int64_t i = 0; i < nb; ++i, od.advance()) {
                const double* g = on.grad.data() + i * osz;
                if (an.requires_grad)
                    gemm_gb_t(g, bn.value.data() + od.ib * bsz, an.grad.data() + od.ia * asz,
                              plan.p, plan.q, plan.r);
                if (bn.requires_grad)
                    gemm_at_g(an.value.data() + od.ia * asz, g, bn.grad.data() + od.ib * bsz,
                              plan.p, plan.q, plan.r);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv1d (causal)
// ---------------------------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& w, int64_t dilation) {
    Tape& t = *x.tape();
    if (w.tape() != &t) throw ContractError("conv1d: operands on different tapes");
    if (x.rank() != 3 || w.rank() != 3) {
        throw ShapeError("conv1d: expected x[B,Cin,L], w[Cout,Cin,k]; got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    }
    int64_t B = x.shape()[0], Cin = x.shape()[1], L = x.shape()[2];
    int64_t Cout = w.shape()[0], Cin2 = w.shape()[1], k = w.shape()[2];
    if (Cin != Cin2) {
        throw ShapeError("conv1d: channel mismatch: x " + shape_str(x.shape()) + " vs w " +
                         shape_str(w.shape()));
    }
    if (k < 1 || dilation < 1) throw ContractError("conv1d: kernel and dilation must be >= 1");
    if (L < (k - 1) * dilation + 1) {
        throw ShapeError("conv1d: receptive span " + std::to_string((k - 1) * dilation + 1) +
                         " exceeds input length " + std::to_string(L));
    }

    int xid = x.id(), wid = w.id();
    Tensor out = t.make("conv1d", Shape{B, Cout, L}, {xid, wid}, nullptr);
    int oid = out.id();
    {
        auto& ov = t.node(oid).value;
        const auto& xv = t.node(xid).value;
        const auto& wv = t.node(wid).value;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < Cout; ++o) {
                double* orow = ov.data() + (b * Cout + o) * L;
                for (int64_t c = 0; c < Cin; ++c) {
                    const double* xrow = xv.data() + (b * Cin + c) * L;
                    for (int64_t i = 0; i < k; ++i) {
                        double wgt = wv[static_cast<size_t>((o * Cin + c) * k + i)];
                        if (wgt == 0.0) continue;
                        int64_t shift = (k - 1 - i) * dilation;  // causal left pad
                        for (int64_t tt = shift; tt < L; ++tt) orow[tt] += wgt * xrow[tt - shift];
                    }
                }
            }
    }
    if (t.node(oid).requires_grad) {
        t.node(oid).backward = [xid, wid, oid, B, Cin, Cout, L, k, dilation](Tape& tp) {
            auto& xn = tp.node(xid);
            auto& wn = tp.node(wid);
            auto& on = tp.node(oid);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t o = 0; o < Cout; ++o) {
                    const double* grow = on.grad.data() + (b * Cout + o) * L;
                    for (int64_t c = 0; c < Cin; ++c) {
                        const double* xrow = xn.value.data() + (b * Cin + c) * L;
                        for (int64_t i = 0; i < k; ++i) {
                            int64_t shift = (k - 1 - i) * dilation;
                            size_t widx = static_cast<size_t>((o * Cin + c) * k + i);
                            if (wn.requires_grad) {
                                double acc = 0.0;
                                for (int64_t tt = shift; tt < L; ++tt) acc += grow[tt] * xrow[tt - shift];
                                wn.grad[widx] += acc;
                            }
                            if (xn.requires_grad) {
                                double wgt = wn.value[widx];
                                if (wgt != 0.0) {
                                    double* xg = xn.grad.data() + (b * Cin + c) * L;
                                    for (int64_t tt = shift; tt < L; ++tt) xg[tt - shift] += wgt * grow[tt];
                                }
                            }
                        }
                    }
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// DFT / iDFT as matrix products against fixed cos/sin tables
// ---------------------------------------------------------------------------

namespace {

// cosT[l*L+k] = cos(2*pi*l*k/L), sinT likewise.
void dft_tables(Tape& t, int64_t L, Tensor& cosT, Tensor& sinT) {
    std::vector<double> c(static_cast<size_t>(L * L)), s(static_cast<size_t>(L * L));
    for (int64_t l = 0; l < L; ++l)
        for (int64_t k = 0; k < L; ++k) {
            double ang = 2.0 * std::numbers::pi * static_cast<double>(l * k) / static_cast<double>(L);
            c[static_cast<size_t>(l * L + k)] = std::cos(ang);
            s[static_cast<size_t>(l * L + k)] = std::sin(ang);
        }
    cosT = t.leaf(Shape{L, L}, c, false);
    sinT = t.leaf(Shape{L, L}, s, false);
}

Tensor as_rows(const Tensor& x, int64_t L) {
    return reshape(x, Shape{x.numel() / L, L});
}

}  // namespace

std::pair<Tensor, Tensor> dft(const Tensor& x) {
    Tape& t = *x.tape();
    if (x.rank() < 1) throw ShapeError("dft: rank-0 input");
    int64_t L = x.shape().back();
    Tensor cosT, sinT;
    dft_tables(t, L, cosT, sinT);
    Shape orig = x.shape();
    Tensor rows = as_rows(x, L);
    Tensor re = reshape(matmul(rows, cosT), orig);
    Tensor im = reshape(neg(matmul(rows, sinT)), orig);
    return {re, im};
}

std::pair<Tensor, Tensor> idft(const Tensor& re, const Tensor& im) {
    Tape& t = *re.tape();
    if (re.shape() != im.shape()) {
        throw ShapeError("idft: real/imag shapes differ: " + shape_str(re.shape()) + " vs " +
                         shape_str(im.shape()));
    }
    int64_t L = re.shape().back();
    Tensor cosT, sinT;
    dft_tables(t, L, cosT, sinT);
    Shape orig = re.shape();
    Tensor R = as_rows(re, L), I = as_rows(im, L);
    double inv = 1.0 / static_cast<double>(L);
    Tensor re_out = reshape(scale(sub(matmul(R, cosT), matmul(I, sinT)), inv), orig);
    Tensor im_out = reshape(scale(add(matmul(R, sinT), matmul(I, cosT)), inv), orig);
    return {re_out, im_out};
}

// ---------------------------------------------------------------------------
// Params, Binder, Adam
// ---------------------------------------------------------------------------

Tensor Binder::operator()(Param& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Tensor t = tape_->leaf(p.shape, p.value, true);
    bound_.emplace(&p, t);
    return t;
}

void Binder::pull_grads() {
    for (auto& [p, tensor] : bound_) {
        const auto& g = tape_->node(tensor.id()).grad;
        if (g.empty()) {
            p->grad.assign(p->value.size(), 0.0);
        } else {
            p->grad = g;
        }
    }
}

void adam_step(const std::vector<Param*>& params, AdamState& st) {
    if (st.m.size() != params.size()) {
        st.m.assign(params.size(), {});
        st.v.assign(params.size(), {});
        for (size_t i = 0; i < params.size(); ++i) {
            st.m[i].assign(params[i]->value.size(), 0.0);
            st.v[i].assign(params[i]->value.size(), 0.0);
        }
    }
    st.step += 1;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), 0.0);
        auto& m = st.m[i];
        auto& v = st.v[i];
        for (size_t j = 0; j < p.value.size(); ++j) {
            double g = p.grad[j];
            if (std::isnan(g)) {
                throw NumericError("adam: NaN gradient in parameter '" + p.name + "'");
            }
            m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g;
            v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p.value[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

namespace init {

void zeros(Param& p) { std::fill(p.value.begin(), p.value.end(), 0.0); }

void constant(Param& p, double v) { std::fill(p.value.begin(), p.value.end(), v); }

void gaussian(Param& p, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    for (auto& x : p.value) x = d(rng);
}

void xavier(Param& p, std::mt19937_64& rng, int64_t fan_in, int64_t fan_out) {
    gaussian(p, rng, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

}  // namespace init

Tensor zeros(Tape& t, Shape shape) { return t.leaf(std::move(shape), false); }

Tensor ones(Tape& t, Shape shape) { return full(t, std::move(shape), 1.0); }

Tensor full(Tape& t, Shape shape, double v) {
    Tensor out = t.leaf(std::move(shape), false);
    std::fill(out.data().begin(), out.data().end(), v);
    return out;
}

Tensor randn(Tape& t, Shape shape, std::mt19937_64& rng) {
    Tensor out = t.leaf(std::move(shape), false);
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& x : out.data()) x = d(rng);
    return out;
}

}  // namespace cast
