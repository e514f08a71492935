#include "cast/edge_features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cast {

void EdgeFeatureConfig::validate() const {
    if (sigma <= 0.0) throw ContractError("edge features: sigma must be positive");
    if (kappa <= 0.0) throw ContractError("edge features: kappa must be positive");
    if (tau < 1) throw ContractError("edge features: tau must be >= 1");
    if (T < 1 || T % tau != 0) {
        throw ContractError("edge features: tau (" + std::to_string(tau) +
                            ") must divide the window length T (" + std::to_string(T) + ")");
    }
}

double gaussian_weight(double dist, const EdgeFeatureConfig& cfg) {
    if (dist > cfg.kappa) return 0.0;
    return std::exp(-(dist * dist) / (cfg.sigma * cfg.sigma));
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ContractError("pearson: series lengths differ: " + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()));
    }
    if (a.size() < 2) throw ContractError("pearson: need at least 2 samples");
    double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;  // constant series carry no linear evidence
    double r = cov / std::sqrt(va * vb);
    return std::clamp(r, -1.0, 1.0);
}

double dtw(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ContractError("dtw: empty series");
    const size_t n = a.size(), m = b.size();
    constexpr double kInf = std::numeric_limits<double>::infinity();
    // rolling rows of the (n+1) x (m+1) table
    std::vector<double> prev(m + 1, kInf), cur(m + 1, kInf);
    prev[0] = 0.0;
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = kInf;
        for (size_t j = 1; j <= m; ++j) {
            double cost = std::abs(a[i - 1] - b[j - 1]);
            cur[j] = cost + std::min({prev[j], cur[j - 1], prev[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

std::vector<double> time_delay_dtw(std::span<const double> source_window,
                                   std::span<const double> target_with_history,
                                   const EdgeFeatureConfig& cfg) {
    cfg.validate();
    const int64_t T = cfg.T;
    const int64_t lags = cfg.lag_count();
    if (static_cast<int64_t>(source_window.size()) != T) {
        throw ContractError("time_delay_dtw: source window must have length T");
    }
    const int64_t history = lags * cfg.tau;
    if (static_cast<int64_t>(target_with_history.size()) < T + history) {
        throw ContractError("time_delay_dtw: target needs " + std::to_string(T + history) +
                            " samples (" + std::to_string(history) + " of history), got " +
                            std::to_string(target_with_history.size()));
    }
    std::vector<double> out(static_cast<size_t>(lags));
    for (int64_t alpha = 1; alpha <= lags; ++alpha) {
        auto shifted = target_with_history.subspan(
            static_cast<size_t>(history - alpha * cfg.tau), static_cast<size_t>(T));
        out[static_cast<size_t>(alpha - 1)] = dtw(source_window, shifted);
    }
    return out;
}

double node_distance(const STGraph& g, int64_t a, int64_t b) {
    if (g.coords.empty()) throw ContractError("node_distance: graph has no coordinates");
    const auto& pa = g.coords[static_cast<size_t>(a)];
    const auto& pb = g.coords[static_cast<size_t>(b)];
    if (!g.geographic) {
        return std::hypot(pa[0] - pb[0], pa[1] - pb[1]);
    }
    // haversine, radius in km
    constexpr double kEarthRadiusKm = 6371.0;
    auto rad = [](double deg) { return deg * std::numbers::pi / 180.0; };
    double dlat = rad(pb[0] - pa[0]);
    double dlon = rad(pb[1] - pa[1]);
    double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
               std::cos(rad(pa[0])) * std::cos(rad(pb[0])) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

Mat assemble_edge_signal(const STGraph& g, const WindowView& window, const EdgeFeatureConfig& cfg) {
    cfg.validate();
    const int64_t T = cfg.T;
    const int64_t history = cfg.lag_count() * cfg.tau;
    Mat out(g.edge_count(), cfg.feature_count());
    std::vector<double> src_series(static_cast<size_t>(T));
    std::vector<double> dst_series(static_cast<size_t>(T));
    std::vector<double> dst_hist(static_cast<size_t>(T + history));
    for (int64_t j = 0; j < g.edge_count(); ++j) {
        const auto& e = g.edges[static_cast<size_t>(j)];
        for (int64_t s = 0; s < T; ++s) {
            src_series[static_cast<size_t>(s)] = window.at(e.src, s);
            dst_series[static_cast<size_t>(s)] = window.at(e.dst, s);
        }
        for (int64_t s = 0; s < T + history; ++s) {
            dst_hist[static_cast<size_t>(s)] = window.at(e.dst, s - history);
        }
        out(j, 0) = g.coords.empty() ? 1.0 : gaussian_weight(node_distance(g, e.src, e.dst), cfg);
        out(j, 1) = pearson(src_series, dst_series);
        auto lags = time_delay_dtw(src_series, dst_hist, cfg);
        for (size_t a = 0; a < lags.size(); ++a) out(j, 2 + static_cast<Eigen::Index>(a)) = lags[a];
    }
    return out;
}

void fit_kernel_defaults(const STGraph& g, EdgeFeatureConfig& cfg) {
    if (g.coords.empty() || g.node_count < 2) return;
    std::vector<double> dists;
    dists.reserve(static_cast<size_t>(g.node_count * (g.node_count - 1) / 2));
    for (int64_t a = 0; a < g.node_count; ++a)
        for (int64_t b = a + 1; b < g.node_count; ++b) dists.push_back(node_distance(g, a, b));
    double mean = 0.0;
    for (double d : dists) mean += d;
    mean /= static_cast<double>(dists.size());
    double var = 0.0;
    for (double d : dists) var += (d - mean) * (d - mean);
    var /= static_cast<double>(dists.size());
    double stddev = std::sqrt(var);
    cfg.sigma = stddev > 0.0 ? stddev : 1.0;
    std::sort(dists.begin(), dists.end());
    size_t q = static_cast<size_t>(0.9 * static_cast<double>(dists.size() - 1));
    cfg.kappa = std::max(dists[q], 1e-12);
}

}  // namespace cast
