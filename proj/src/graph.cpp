#include "cast/graph.hpp"

#include <Eigen/Eigenvalues>

#include <deque>

namespace cast {

void STGraph::validate() const {
    if (node_count <= 0) throw ContractError("graph: node_count must be positive");
    for (size_t j = 0; j < edges.size(); ++j) {
        const auto& e = edges[j];
        if (e.src == e.dst) {
            throw ContractError("graph: edge " + std::to_string(j) + " is a self-loop at node " +
                                std::to_string(e.src));
        }
        if (e.src < 0 || e.src >= node_count || e.dst < 0 || e.dst >= node_count) {
            throw ContractError("graph: edge " + std::to_string(j) + " endpoint out of range");
        }
    }
    if (!coords.empty() && static_cast<int64_t>(coords.size()) != node_count) {
        throw ContractError("graph: coordinate count " + std::to_string(coords.size()) +
                            " != node count " + std::to_string(node_count));
    }
}

Mat build_boundary_1(const STGraph& g) {
    g.validate();
    Mat b = Mat::Zero(g.node_count, g.edge_count());
    for (int64_t j = 0; j < g.edge_count(); ++j) {
        b(g.edges[static_cast<size_t>(j)].dst, j) = 1.0;
        b(g.edges[static_cast<size_t>(j)].src, j) = -1.0;
    }
    return b;
}

Mat graph_laplacian_0(const Mat& boundary1) { return boundary1 * boundary1.transpose(); }

Mat hodge_laplacian_1(const Mat& boundary1) { return boundary1.transpose() * boundary1; }

namespace {

Tensor mat_leaf(Tape& t, const Mat& m) {
    std::vector<double> buf(static_cast<size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            buf[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
    return t.leaf(Shape{m.rows(), m.cols()}, buf, false);
}

Tensor theta_at(const Tensor& theta, int64_t u) {
    return reshape(narrow(theta, 0, u, 1), Shape{});
}

}  // namespace

Tensor laguerre_apply(Tape& t, const Mat& L, const Tensor& H, const Tensor& theta) {
    if (theta.rank() != 1 || theta.numel() < 1) {
        throw ContractError("laguerre_apply: polynomial order must be >= 1");
    }
    int64_t m = L.rows();
    if (L.cols() != m) throw ShapeError("laguerre_apply: operator must be square");
    int64_t row_axis = H.rank() - 2;
    if (H.rank() < 2 || H.shape()[static_cast<size_t>(row_axis)] != m) {
        throw ShapeError("laguerre_apply: signal rows " + shape_str(H.shape()) +
                         " do not match operator size " + std::to_string(m));
    }
    Tensor Lt = mat_leaf(t, L);
    int64_t order = theta.numel();

    Tensor p_prev = H;  // T_0 H
    Tensor acc = mul(H, theta_at(theta, 0));
    if (order == 1) return acc;

    Tensor p_cur = sub(H, matmul(Lt, H));  // T_1 H = (I - L) H
    acc = add(acc, mul(p_cur, theta_at(theta, 1)));
    for (int64_t u = 1; u + 1 < order; ++u) {
        double du = static_cast<double>(u);
        Tensor lp = matmul(Lt, p_cur);
        Tensor next = scale(sub(sub(scale(p_cur, 2.0 * du + 1.0), lp), scale(p_prev, du)),
                            1.0 / (du + 1.0));
        acc = add(acc, mul(next, theta_at(theta, u + 1)));
        p_prev = p_cur;
        p_cur = next;
    }
    return acc;
}

double laguerre_scalar(int64_t u, double x) {
    if (u == 0) return 1.0;
    double prev = 1.0;
    double cur = 1.0 - x;
    for (int64_t i = 1; i < u; ++i) {
        double di = static_cast<double>(i);
        double next = ((2.0 * di + 1.0 - x) * cur - di * prev) / (di + 1.0);
        prev = cur;
        cur = next;
    }
    return cur;
}

Mat spectral_filter_matrix(const Mat& L, std::span<const double> theta) {
    if (theta.empty()) throw ContractError("spectral_filter_matrix: empty coefficients");
    Eigen::SelfAdjointEigenSolver<Mat> es(L);
    if (es.info() != Eigen::Success) {
        throw NumericError("spectral_filter_matrix: eigendecomposition failed");
    }
    const auto& lambda = es.eigenvalues();
    const auto& psi = es.eigenvectors();
    Mat out = Mat::Zero(L.rows(), L.cols());
    for (Eigen::Index j = 0; j < lambda.size(); ++j) {
        double h = 0.0;
        for (size_t u = 0; u < theta.size(); ++u)
            h += theta[u] * laguerre_scalar(static_cast<int64_t>(u), lambda(j));
        out += h * psi.col(j) * psi.col(j).transpose();
    }
    return out;
}

std::vector<std::vector<int64_t>> edge_adjacency(const STGraph& g) {
    std::vector<std::vector<int64_t>> by_node(static_cast<size_t>(g.node_count));
    for (int64_t j = 0; j < g.edge_count(); ++j) {
        by_node[static_cast<size_t>(g.edges[static_cast<size_t>(j)].src)].push_back(j);
        by_node[static_cast<size_t>(g.edges[static_cast<size_t>(j)].dst)].push_back(j);
    }
    std::vector<std::vector<int64_t>> adj(static_cast<size_t>(g.edge_count()));
    for (const auto& incident : by_node) {
        for (size_t a = 0; a < incident.size(); ++a)
            for (size_t b = a + 1; b < incident.size(); ++b) {
                adj[static_cast<size_t>(incident[a])].push_back(incident[b]);
                adj[static_cast<size_t>(incident[b])].push_back(incident[a]);
            }
    }
    return adj;
}

std::vector<int64_t> edge_hop_distances(const STGraph& g, int64_t source_edge) {
    auto adj = edge_adjacency(g);
    std::vector<int64_t> dist(adj.size(), -1);
    std::deque<int64_t> queue;
    dist[static_cast<size_t>(source_edge)] = 0;
    queue.push_back(source_edge);
    while (!queue.empty()) {
        int64_t e = queue.front();
        queue.pop_front();
        for (int64_t nb : adj[static_cast<size_t>(e)]) {
            if (dist[static_cast<size_t>(nb)] < 0) {
                dist[static_cast<size_t>(nb)] = dist[static_cast<size_t>(e)] + 1;
                queue.push_back(nb);
            }
        }
    }
    return dist;
}

}  // namespace cast
