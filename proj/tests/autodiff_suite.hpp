// Finite-difference coverage of every differentiable operation, shared by the
// unit tests and the acceptance suite. Each entry runs `instances` random
// checks and reports the worst relative error seen.
#pragma once

#include <string>

#include "cast/graph.hpp"
#include "cast/nn.hpp"
#include "gradcheck.hpp"

namespace testutil {

struct OpReport {
    std::string op;
    double max_rel_err = 0.0;
    int64_t instances = 0;
};

inline std::vector<OpReport> run_autodiff_fd_suite(int instances = 10, uint64_t seed = 97) {
    using namespace cast;
    std::mt19937_64 rng(seed);
    std::vector<OpReport> reports;

    auto run = [&](const std::string& name, const std::vector<Shape>& shapes,
                   const std::vector<Domain>& domains, const BuildFn& build) {
        OpReport rep{name, 0.0, instances};
        for (int i = 0; i < instances; ++i) {
            auto res = check_gradients(shapes, domains, build, rng);
            rep.max_rel_err = std::max(rep.max_rel_err, res.max_rel_err);
        }
        reports.push_back(rep);
    };

    const Shape s34{3, 4};
    const std::vector<Domain> rr{Domain::kReal, Domain::kReal};
    const std::vector<Domain> r1{Domain::kReal};

    run("add", {s34, s34}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return add(in[0], in[1]); });
    run("add_broadcast", {Shape{3, 4}, Shape{4}}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return add(in[0], in[1]); });
    run("sub", {s34, s34}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return sub(in[0], in[1]); });
    run("mul", {s34, s34}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return mul(in[0], in[1]); });
    run("mul_broadcast", {Shape{2, 3, 4}, Shape{3, 1}}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return mul(in[0], in[1]); });
    run("div", {s34, Shape{3, 4}}, {Domain::kReal, Domain::kAwayFromZero},
        [](Tape&, const std::vector<Tensor>& in) { return divide(in[0], in[1]); });
    run("neg", {s34}, r1, [](Tape&, const std::vector<Tensor>& in) { return neg(in[0]); });
    run("scale", {s34}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return scale(in[0], -1.7); });
    run("add_scalar", {s34}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return add_scalar(in[0], 0.3); });
    run("relu", {s34}, {Domain::kAwayFromZero},
        [](Tape&, const std::vector<Tensor>& in) { return relu(in[0]); });
    run("sigmoid", {s34}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return sigmoid(in[0]); });
    run("exp", {s34}, r1, [](Tape&, const std::vector<Tensor>& in) { return exp_(in[0]); });
    run("log", {s34}, {Domain::kPositive},
        [](Tape&, const std::vector<Tensor>& in) { return log_(in[0]); });
    run("sqrt", {s34}, {Domain::kPositive},
        [](Tape&, const std::vector<Tensor>& in) { return sqrt_(in[0]); });
    run("abs", {s34}, {Domain::kAwayFromZero},
        [](Tape&, const std::vector<Tensor>& in) { return abs_(in[0]); });
    run("clamp_min", {s34}, {Domain::kAwayFromZero},
        [](Tape&, const std::vector<Tensor>& in) { return clamp_min(in[0], 0.0); });
    run("sum_axis", {Shape{3, 4, 2}}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return sum(in[0], 1, false); });
    run("mean_axis", {Shape{3, 4, 2}}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return mean(in[0], -1, true); });
    run("sum_all", {s34}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return sum_all(in[0]); });
    run("mean_all", {s34}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return mean_all(in[0]); });
    run("softmax", {Shape{4, 5}}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return softmax(in[0], -1); });
    run("reshape", {Shape{3, 4}}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return reshape(in[0], Shape{2, 6}); });
    run("permute", {Shape{2, 3, 4}}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return permute(in[0], {2, 0, 1}); });
    run("concat", {Shape{2, 3}, Shape{2, 2}}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return concat({in[0], in[1]}, 1); });
    run("narrow", {Shape{3, 5}}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return narrow(in[0], 1, 1, 3); });
    run("gather_rows", {Shape{4, 3}}, r1, [](Tape&, const std::vector<Tensor>& in) {
        return gather_rows(in[0], {2, 0, 2, 3, 1});
    });
    run("matmul", {Shape{3, 4}, Shape{4, 5}}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return matmul(in[0], in[1]); });
    run("matmul_batched", {Shape{2, 3, 4}, Shape{2, 4, 2}}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return matmul(in[0], in[1]); });
    run("matmul_broadcast", {Shape{4, 4}, Shape{3, 4, 2}}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return matmul(in[0], in[1]); });
    run("conv1d", {Shape{2, 3, 8}, Shape{4, 3, 2}}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return conv1d(in[0], in[1], 1); });
    run("conv1d_dilated", {Shape{2, 2, 9}, Shape{3, 2, 3}}, rr,
        [](Tape&, const std::vector<Tensor>& in) { return conv1d(in[0], in[1], 2); });
    run("dft", {Shape{3, 6}}, r1, [](Tape&, const std::vector<Tensor>& in) {
        auto [re, im] = dft(in[0]);
        return concat({re, im}, -1);
    });
    run("idft", {Shape{3, 6}, Shape{3, 6}}, rr, [](Tape&, const std::vector<Tensor>& in) {
        auto [re, im] = idft(in[0], in[1]);
        return concat({re, im}, -1);
    });
    run("layer_norm", {Shape{3, 5}}, r1,
        [](Tape&, const std::vector<Tensor>& in) { return nn::layer_norm(in[0]); });
    run("self_attention", {Shape{2, 4, 3}, Shape{3, 3}, Shape{3, 3}, Shape{3, 3}},
        {Domain::kReal, Domain::kReal, Domain::kReal, Domain::kReal},
        [](Tape&, const std::vector<Tensor>& in) {
            const Tensor& x = in[0];
            Tensor q = matmul(x, in[1]);
            Tensor k = matmul(x, in[2]);
            Tensor v = matmul(x, in[3]);
            Tensor scores = scale(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(3.0));
            return matmul(softmax(scores, -1), v);
        });
    run("laguerre_apply", {Shape{5, 3}, Shape{4}}, rr,
        [](Tape& t, const std::vector<Tensor>& in) {
            STGraph g;
            g.node_count = 5;
            g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}};
            Mat l1 = hodge_laplacian_1(build_boundary_1(g));
            return laguerre_apply(t, l1, in[0], in[1]);
        });
    return reports;
}

}  // namespace testutil
