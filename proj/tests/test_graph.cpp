#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "cast/graph.hpp"
#include "gradcheck.hpp"

using namespace cast;

namespace {

// Random simple graph: every unordered pair appears at most once, random
// orientation. Keeps L0 equal to degree-minus-adjacency exactly.
STGraph random_simple_graph(std::mt19937_64& rng, int64_t max_nodes) {
    std::uniform_int_distribution<int64_t> nd(2, max_nodes);
    STGraph g;
    g.node_count = nd(rng);
    std::vector<std::pair<int64_t, int64_t>> pairs;
    for (int64_t a = 0; a < g.node_count; ++a)
        for (int64_t b = a + 1; b < g.node_count; ++b) pairs.emplace_back(a, b);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    std::uniform_int_distribution<size_t> md(1, pairs.size());
    size_t m = md(rng);
    std::bernoulli_distribution flip(0.5);
    for (size_t i = 0; i < m; ++i) {
        auto [a, b] = pairs[i];
        if (flip(rng)) std::swap(a, b);
        g.edges.push_back({a, b});
    }
    return g;
}

Mat degree_minus_adjacency(const STGraph& g) {
    Mat out = Mat::Zero(g.node_count, g.node_count);
    for (const auto& e : g.edges) {
        out(e.src, e.src) += 1.0;
        out(e.dst, e.dst) += 1.0;
        out(e.src, e.dst) -= 1.0;
        out(e.dst, e.src) -= 1.0;
    }
    return out;
}

STGraph flipped(const STGraph& g) {
    STGraph out = g;
    for (auto& e : out.edges) std::swap(e.src, e.dst);
    return out;
}

}  // namespace

TEST_CASE("boundary of a single edge is [-1, +1]") {
    STGraph g;
    g.node_count = 2;
    g.edges = {{0, 1}};
    Mat b = build_boundary_1(g);
    CHECK(b(0, 0) == -1.0);
    CHECK(b(1, 0) == 1.0);
}

TEST_CASE("boundary columns of a directed triangle sum to zero") {
    STGraph g;
    g.node_count = 3;
    g.edges = {{0, 1}, {1, 2}, {2, 0}};
    Mat b = build_boundary_1(g);
    CHECK(b.rows() == 3);
    CHECK(b.cols() == 3);
    for (int j = 0; j < 3; ++j) CHECK(b.col(j).sum() == 0.0);
}

TEST_CASE("boundary of a 4-node example matches the definition up to global sign") {
    // diamond: 0->1, 0->2, 1->3, 2->3, 1->2
    STGraph g;
    g.node_count = 4;
    g.edges = {{0, 1}, {0, 2}, {1, 3}, {2, 3}, {1, 2}};
    Mat b = build_boundary_1(g);
    for (int64_t j = 0; j < g.edge_count(); ++j) {
        int plus = 0, minus = 0;
        for (int64_t i = 0; i < g.node_count; ++i) {
            if (b(i, j) == 1.0) ++plus;
            if (b(i, j) == -1.0) ++minus;
        }
        CHECK(plus == 1);
        CHECK(minus == 1);
        CHECK(b(g.edges[static_cast<size_t>(j)].dst, j) == 1.0);
        CHECK(b(g.edges[static_cast<size_t>(j)].src, j) == -1.0);
    }
    // the reversed-orientation convention is the same matrix times -1
    Mat b_flip = build_boundary_1(flipped(g));
    CHECK((b + b_flip).norm() == 0.0);
}

TEST_CASE("self loops are rejected") {
    STGraph g;
    g.node_count = 2;
    g.edges = {{1, 1}};
    CHECK_THROWS_AS(build_boundary_1(g), ContractError);
}

TEST_CASE("node laplacian of the path and triangle graphs") {
    STGraph p2;
    p2.node_count = 2;
    p2.edges = {{0, 1}};
    Mat l0 = graph_laplacian_0(build_boundary_1(p2));
    CHECK(l0(0, 0) == 1.0);
    CHECK(l0(0, 1) == -1.0);
    CHECK(l0(1, 0) == -1.0);
    CHECK(l0(1, 1) == 1.0);

    STGraph k3;
    k3.node_count = 3;
    k3.edges = {{0, 1}, {1, 2}, {2, 0}};
    Mat t = graph_laplacian_0(build_boundary_1(k3));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(t(i, j) == (i == j ? 2.0 : -1.0));
}

TEST_CASE("node laplacian equals degree-minus-adjacency on 20 random graphs") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        STGraph g = random_simple_graph(rng, 12);
        Mat l0 = graph_laplacian_0(build_boundary_1(g));
        Mat oracle = degree_minus_adjacency(g);
        CHECK((l0 - oracle).cwiseAbs().maxCoeff() == 0.0);  // integer arithmetic, exact
    }
}

TEST_CASE("edge laplacian of a single edge is [2]") {
    STGraph g;
    g.node_count = 2;
    g.edges = {{0, 1}};
    Mat l1 = hodge_laplacian_1(build_boundary_1(g));
    CHECK(l1.rows() == 1);
    CHECK(l1(0, 0) == 2.0);
}

TEST_CASE("edges oriented into a shared head couple with +1") {
    // hand computation on the 3-node path: columns (-1,0,+1) and (0,-1,+1)
    // give an off-diagonal inner product of +1
    STGraph g;
    g.node_count = 3;
    g.edges = {{0, 2}, {1, 2}};
    Mat l1 = hodge_laplacian_1(build_boundary_1(g));
    CHECK(l1(0, 1) == 1.0);
    CHECK(l1(1, 0) == 1.0);
    CHECK(l1(0, 0) == 2.0);
    CHECK(l1(1, 1) == 2.0);
}

TEST_CASE("edge laplacian entry rule for edge pairs sharing one endpoint") {
    STGraph g;
    g.node_count = 5;
    g.edges = {{0, 1}, {1, 2}, {3, 1}, {2, 4}, {0, 3}};
    Mat b = build_boundary_1(g);
    Mat l1 = hodge_laplacian_1(b);
    for (int64_t e = 0; e < g.edge_count(); ++e) {
        CHECK(l1(e, e) == 2.0);
        for (int64_t f = 0; f < g.edge_count(); ++f) {
            if (e == f) continue;
            const auto& ee = g.edges[static_cast<size_t>(e)];
            const auto& ef = g.edges[static_cast<size_t>(f)];
            int shared = (ee.src == ef.src) + (ee.src == ef.dst) + (ee.dst == ef.src) +
                         (ee.dst == ef.dst);
            if (shared == 0) {
                CHECK(l1(e, f) == 0.0);
            } else {
                CHECK(std::abs(l1(e, f)) == 1.0);
            }
        }
    }
}

TEST_CASE("edge laplacian is symmetric positive semidefinite up to M = 50") {
    std::mt19937_64 rng(202);
    for (int trial = 0; trial < 15; ++trial) {
        STGraph g = random_simple_graph(rng, 11);  // up to 55 edges
        if (g.edge_count() > 50) g.edges.resize(50);
        Mat l1 = hodge_laplacian_1(build_boundary_1(g));
        CHECK((l1 - l1.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat> es(l1);
        CHECK(es.eigenvalues().minCoeff() >= -1e-8);
    }
}

TEST_CASE("laplacians are invariant to a global orientation flip") {
    std::mt19937_64 rng(707);
    for (int trial = 0; trial < 5; ++trial) {
        STGraph g = random_simple_graph(rng, 9);
        Mat b = build_boundary_1(g);
        Mat bf = build_boundary_1(flipped(g));
        CHECK((graph_laplacian_0(b) - graph_laplacian_0(bf)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((hodge_laplacian_1(b) - hodge_laplacian_1(bf)).cwiseAbs().maxCoeff() == 0.0);
    }
}

namespace {

// convenience: run the filter on plain matrices
Mat apply_filter(const Mat& l, const Mat& h, const std::vector<double>& theta) {
    Tape t;
    std::vector<double> hbuf(static_cast<size_t>(h.size()));
    for (Eigen::Index r = 0; r < h.rows(); ++r)
        for (Eigen::Index c = 0; c < h.cols(); ++c)
            hbuf[static_cast<size_t>(r * h.cols() + c)] = h(r, c);
    Tensor ht = t.leaf(Shape{h.rows(), h.cols()}, hbuf, false);
    Tensor th = t.leaf(Shape{static_cast<int64_t>(theta.size())}, theta, false);
    Tensor out = laguerre_apply(t, l, ht, th);
    Mat m(h.rows(), h.cols());
    for (Eigen::Index r = 0; r < h.rows(); ++r)
        for (Eigen::Index c = 0; c < h.cols(); ++c)
            m(r, c) = out.data()[static_cast<size_t>(r * h.cols() + c)];
    return m;
}

Mat random_mat(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = gauss(rng);
    return m;
}

}  // namespace

TEST_CASE("filter with theta=[1] is the identity") {
    std::mt19937_64 rng(11);
    STGraph g = random_simple_graph(rng, 8);
    Mat l1 = hodge_laplacian_1(build_boundary_1(g));
    Mat h = random_mat(rng, g.edge_count(), 3);
    CHECK((apply_filter(l1, h, {1.0}) - h).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("filter with theta=[0,1] computes H - L H") {
    std::mt19937_64 rng(12);
    STGraph g = random_simple_graph(rng, 8);
    Mat l1 = hodge_laplacian_1(build_boundary_1(g));
    Mat h = random_mat(rng, g.edge_count(), 4);
    Mat expect = h - l1 * h;
    CHECK((apply_filter(l1, h, {0.0, 1.0}) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("second polynomial on a diagonal operator matches (x^2-4x+2)/2") {
    // expanding the recurrence by hand: T2(x) = ((3 - x)(1 - x) - 1) / 2
    std::mt19937_64 rng(13);
    std::vector<double> lambda{0.0, 0.7, 1.3, 2.9, 4.2};
    Mat l = Mat::Zero(5, 5);
    for (int i = 0; i < 5; ++i) l(i, i) = lambda[static_cast<size_t>(i)];
    Mat h = random_mat(rng, 5, 3);
    Mat out = apply_filter(l, h, {0.0, 0.0, 1.0});
    for (int i = 0; i < 5; ++i) {
        double x = lambda[static_cast<size_t>(i)];
        double factor = (x * x - 4.0 * x + 2.0) / 2.0;
        for (int c = 0; c < 3; ++c) {
            CHECK(std::abs(out(i, c) - factor * h(i, c)) < 1e-12);
        }
    }
}

TEST_CASE("filter order zero is rejected") {
    Tape t;
    Mat l = Mat::Identity(2, 2);
    Tensor h = zeros(t, Shape{2, 2});
    // a zero-length coefficient vector cannot even be constructed
    CHECK_THROWS_AS(t.leaf(Shape{0}, false), ShapeError);
    // and a non-vector theta violates the contract
    Tensor bad_theta = zeros(t, Shape{2, 1});
    CHECK_THROWS_AS(laguerre_apply(t, l, h, bad_theta), ContractError);
}

TEST_CASE("filter is linear in the edge signal") {
    std::mt19937_64 rng(14);
    STGraph g = random_simple_graph(rng, 9);
    Mat l1 = hodge_laplacian_1(build_boundary_1(g));
    std::vector<double> theta{0.4, -0.8, 0.3, 0.1};
    Mat h1 = random_mat(rng, g.edge_count(), 3);
    Mat h2 = random_mat(rng, g.edge_count(), 3);
    double a = 1.7, b = -0.6;
    Mat lhs = apply_filter(l1, a * h1 + b * h2, theta);
    Mat rhs = a * apply_filter(l1, h1, theta) + b * apply_filter(l1, h2, theta);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("recurrence agrees with the eigendecomposition filter") {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 6; ++trial) {
        STGraph g = random_simple_graph(rng, 12);  // up to 66 edges
        if (g.edge_count() > 60) g.edges.resize(60);
        Mat l1 = hodge_laplacian_1(build_boundary_1(g));
        std::uniform_int_distribution<int> ud(1, 5);
        int order = ud(rng);
        std::vector<double> theta(static_cast<size_t>(order));
        std::normal_distribution<double> gauss(0.0, 0.5);
        for (auto& x : theta) x = gauss(rng);
        Mat filter = spectral_filter_matrix(l1, theta);
        Mat h = random_mat(rng, g.edge_count(), 4);
        Mat via_matrix = filter * h;
        Mat via_recurrence = apply_filter(l1, h, theta);
        CHECK((via_matrix - via_recurrence).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("spectral filter matrix of theta=[1] is the identity") {
    std::mt19937_64 rng(16);
    STGraph g = random_simple_graph(rng, 6);
    Mat l1 = hodge_laplacian_1(build_boundary_1(g));
    std::vector<double> theta{1.0};
    Mat f = spectral_filter_matrix(l1, theta);
    CHECK((f - Mat::Identity(f.rows(), f.cols())).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("spectral filter of a diagonal operator is diagonal h(lambda)") {
    Mat l = Mat::Zero(3, 3);
    l(0, 0) = 0.5;
    l(1, 1) = 1.5;
    l(2, 2) = 3.0;
    std::vector<double> theta{0.3, 0.9};
    Mat f = spectral_filter_matrix(l, theta);
    for (int i = 0; i < 3; ++i) {
        double expect = theta[0] + theta[1] * (1.0 - l(i, i));
        CHECK(f(i, i) == doctest::Approx(expect).epsilon(1e-12));
        for (int j = 0; j < 3; ++j)
            if (i != j) CHECK(std::abs(f(i, j)) < 1e-12);
    }
}

TEST_CASE("filter gradients match finite differences in both H and theta") {
    std::mt19937_64 rng(17);
    STGraph g;
    g.node_count = 6;
    g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {0, 3}};
    Mat l1 = hodge_laplacian_1(build_boundary_1(g));
    for (int trial = 0; trial < 10; ++trial) {
        auto res = testutil::check_gradients(
            {Shape{7, 3}, Shape{4}}, {testutil::Domain::kReal, testutil::Domain::kReal},
            [&](Tape& t, const std::vector<Tensor>& in) {
                return laguerre_apply(t, l1, in[0], in[1]);
            },
            rng);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("edge hop distances cover the edge graph") {
    STGraph g;
    g.node_count = 6;
    g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}};  // path: edge graph is a path too
    auto d = edge_hop_distances(g, 0);
    CHECK(d == std::vector<int64_t>{0, 1, 2, 3, 4});
}
