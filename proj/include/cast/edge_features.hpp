#pragma once

#include <Eigen/Dense>

#include "cast/graph.hpp"

namespace cast {

struct EdgeFeatureConfig {
    double sigma = 1.0;   // Gaussian kernel bandwidth (distance units)
    double kappa = 1.0;   // distance threshold; weights are zero beyond it
    int64_t tau = 6;      // delay window size (steps)
    int64_t T = 24;       // input window length (steps); tau must divide T

    int64_t lag_count() const { return T / tau; }
    /// Columns of the assembled edge signal: W, rho, then T/tau lag distances.
    int64_t feature_count() const { return 2 + lag_count(); }
    void validate() const;
};

/// Thresholded Gaussian kernel on a node distance.
double gaussian_weight(double dist, const EdgeFeatureConfig& cfg);

/// Pearson correlation; 0 by convention when either series is constant.
double pearson(std::span<const double> a, std::span<const double> b);

/// Classic dynamic-programming DTW with |a-b| local cost, full window,
/// boundary-to-boundary alignment.
double dtw(std::span<const double> a, std::span<const double> b);

/// Component alpha (1-based) is the DTW distance between the source window
/// and the target window shifted back by alpha*tau steps. `target` must
/// provide T + (T/tau)*tau samples: lag history first, then the aligned
/// window in its last T entries.
std::vector<double> time_delay_dtw(std::span<const double> source_window,
                                   std::span<const double> target_with_history,
                                   const EdgeFeatureConfig& cfg);

/// Distance between two nodes of the graph, haversine (km) when the graph is
/// geographic, Euclidean otherwise.
double node_distance(const STGraph& g, int64_t a, int64_t b);

/// Per-window node series access: series(node, step) for step in
/// [-history, T). Negative steps address the DTW history.
struct WindowView {
    const double* base;   // series data laid out [time][node], node fastest
    int64_t node_count;
    int64_t start;        // absolute index of window step 0
    int64_t length;       // T

    double at(int64_t node, int64_t step) const {
        return base[(start + step) * node_count + node];
    }
};

/// Assemble the M x F' edge signal for one window: row j of the result is
/// [W, rho, R_1..R_{T/tau}] for edge j = (src -> dst).
Mat assemble_edge_signal(const STGraph& g, const WindowView& window, const EdgeFeatureConfig& cfg);

/// Defaults derived from the graph geometry: sigma = stddev of all pairwise
/// node distances, kappa = their 90th percentile.
void fit_kernel_defaults(const STGraph& g, EdgeFeatureConfig& cfg);

}  // namespace cast
