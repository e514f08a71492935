#pragma once

#include <Eigen/Dense>

#include "cast/tensor.hpp"

namespace cast {

/// Fixed spatial graph: N nodes, M ordered edges with stable ids 0..M-1.
/// Coordinates are optional (needed only for distance-based edge weights).
struct STGraph {
    struct Edge {
        int64_t src;
        int64_t dst;
    };

    int64_t node_count = 0;
    std::vector<Edge> edges;
    std::vector<std::array<double, 2>> coords;  // empty, or one (a,b) pair per node
    bool geographic = false;                    // coords are (lat, lon) degrees

    int64_t edge_count() const { return static_cast<int64_t>(edges.size()); }

    /// Throws ContractError on self-loops or out-of-range endpoints.
    void validate() const;
};

using Mat = Eigen::MatrixXd;

/// Signed node-by-edge incidence matrix: column j carries +1 at dst(j) and
/// -1 at src(j). Every column sums to zero.
Mat build_boundary_1(const STGraph& g);

/// Node Laplacian b * b^T; equals degree-minus-adjacency for simple graphs.
Mat graph_laplacian_0(const Mat& boundary1);

/// First-order edge Laplacian b^T * b (triangle term dropped). Symmetric
/// positive semidefinite; diagonal is 2, off-diagonal +-1 for edge pairs
/// sharing exactly one endpoint.
Mat hodge_laplacian_1(const Mat& boundary1);

/// Learnable spectral filter coefficients for the polynomial filter.
struct LaguerreCoeffs {
    Param theta;  // shape [U]
    LaguerreCoeffs() = default;
    LaguerreCoeffs(const std::string& name, int64_t order, std::mt19937_64& rng)
        : theta(name + ".theta", Shape{order}) {
        init::gaussian(theta, rng, 1.0 / std::sqrt(static_cast<double>(order)));
    }
    int64_t order() const { return theta.shape[0]; }
};

/// Apply sum_u theta_u T_u(L) to the columns of H via the three-term
/// recurrence P0 = H, P1 = H - L H,
/// P_{u+1} = ((2u+1) P_u - L P_u - u P_{u-1}) / (u+1).
/// Differentiable in both H and theta. H is [M,F] or [B,M,F].
Tensor laguerre_apply(Tape& t, const Mat& L, const Tensor& H, const Tensor& theta);

/// Eigendecomposition route to the same filter: sum_j h(lambda_j) psi psi^T.
/// Dense and O(M^3); intended as a cross-check for small graphs.
Mat spectral_filter_matrix(const Mat& L, std::span<const double> theta);

/// Laguerre polynomial value T_u(x) for scalar arguments (recurrence).
double laguerre_scalar(int64_t u, double x);

/// Adjacency lists of the edge graph: edges are adjacent when they share an
/// endpoint. Used for locality checks and hop distances between edges.
std::vector<std::vector<int64_t>> edge_adjacency(const STGraph& g);

/// Breadth-first hop distances from `source_edge` in the edge graph
/// (-1 for unreachable edges).
std::vector<int64_t> edge_hop_distances(const STGraph& g, int64_t source_edge);

}  // namespace cast
