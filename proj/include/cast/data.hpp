#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>

#include "cast/edge_features.hpp"
#include "cast/graph.hpp"

namespace cast {

/// Ingestion problems carry the offending file and (1-based) line number.
struct IngestError : std::runtime_error {
    explicit IngestError(const std::string& m) : std::runtime_error(m) {}
};

struct DatasetManifest {
    std::string name;
    std::string signal_path;   // CSV: timestamp column then one column per node
    std::string coords_path;   // one "a b" pair per line (lat lon or x y)
    std::string edges_path;    // one "src dst" pair per line
    std::array<double, 3> split{4, 1, 1};
    std::string distance = "euclidean";  // or "haversine"
    int64_t T = 24;
    int64_t S = 24;
    int64_t tau = 6;
    std::optional<double> sigma;  // kernel overrides; fitted from geometry if absent
    std::optional<double> kappa;

    void validate() const;
};

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

/// Per-node z-score statistics fitted on the training span only.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> stddev;  // floors at 1 for constant nodes

    double normalize(double v, int64_t node) const {
        return (v - mean[static_cast<size_t>(node)]) / stddev[static_cast<size_t>(node)];
    }
    double denormalize(double v, int64_t node) const {
        return v * stddev[static_cast<size_t>(node)] + mean[static_cast<size_t>(node)];
    }
};

enum class Split { kTrain, kVal, kTest };

struct Dataset {
    DatasetManifest manifest;
    STGraph graph;
    int64_t steps = 0;
    int64_t nodes = 0;
    std::vector<double> raw;         // [time][node]
    std::vector<double> normalized;  // same layout, train-split statistics
    Normalization norm;
    int64_t train_end = 0;  // chronological boundaries: [0,train_end), ...
    int64_t val_end = 0;
    std::vector<int64_t> train_starts;  // X-window start offsets, stride 1
    std::vector<int64_t> val_starts;
    std::vector<int64_t> test_starts;
    EdgeFeatureConfig edge_cfg;
    std::vector<int64_t> regime_truth;  // per step; empty for real data

    const std::vector<int64_t>& starts(Split s) const {
        switch (s) {
            case Split::kTrain: return train_starts;
            case Split::kVal: return val_starts;
            default: return test_starts;
        }
    }

    /// Edge signal for the window starting at `x_start`, from the normalized
    /// series. Cached after first computation.
    const Mat& edge_signal(int64_t x_start) const;

    /// Ground-truth environment of a window: regime at its last input step.
    int64_t window_regime(int64_t x_start) const {
        return regime_truth.empty() ? -1
                                    : regime_truth[static_cast<size_t>(x_start + manifest.T - 1)];
    }

private:
    mutable std::map<int64_t, Mat> edge_cache_;
};

/// Chronological split boundaries: [0,train_end), [train_end,val_end),
/// [val_end,steps), with floor arithmetic on the ratios.
void split_boundaries(int64_t steps, const std::array<double, 3>& ratio, int64_t& train_end,
                      int64_t& val_end);

/// Stride-1 X-window starts inside [split_begin, split_end): X spans
/// [o, o+T), Y spans [o+T, o+T+S), both inside the split. The first
/// `history` steps of the series are reserved for DTW lags, so no window
/// starts before that.
std::vector<int64_t> window_starts(int64_t split_begin, int64_t split_end, int64_t T, int64_t S,
                                   int64_t history);

/// Parse and validate the signal CSV, coordinates, and edge list; impute
/// missing cells by linear interpolation (boundary hold); fit normalization
/// on the training span and enumerate window starts per split.
Dataset load_dataset(const DatasetManifest& manifest);

/// Validation-only pass over a manifest; throws IngestError on problems.
void validate_dataset(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Synthetic scenarios
// ---------------------------------------------------------------------------

struct RegimeSpan {
    int64_t start = 0;
    int64_t end = 0;  // exclusive
    double mean = 0.0;
    double ar = 0.5;
    double amplitude = 1.0;
};

struct DiffusionChange {
    int64_t edge = 0;
    int64_t start = 0;  // coefficient takes `value` from this step on
    double value = 0.0;
};

struct SyntheticScenario {
    std::string name = "custom";
    int64_t nodes = 8;
    int64_t steps = 1200;
    std::vector<std::pair<int64_t, int64_t>> edges;
    std::vector<RegimeSpan> regimes;  // must tile [0, steps) without gaps
    double diffusion = 0.25;
    std::vector<DiffusionChange> changes;
    double noise = 0.3;
    uint64_t seed = 7;
    int64_t period = 24;  // seasonal period of the base process
    int64_t T = 24, S = 12, tau = 6;
    std::array<double, 3> split{4, 1, 1};

    void validate() const;
};

SyntheticScenario read_scenario(const std::string& path);

/// Built-in presets: "regime-shift" (unseen test regime) and "edge-perturb"
/// (one edge's diffusion coefficient changes mid-series).
SyntheticScenario preset_scenario(const std::string& name);

struct SyntheticData {
    STGraph graph;
    std::vector<double> series;                        // [time][node]
    std::vector<int64_t> regime_per_step;              // truth
    std::vector<std::vector<double>> diffusion_series; // [edge][time] truth
};

/// Seeded generator: per-regime seasonal AR base process plus directed
/// anomaly diffusion along edges. Bitwise deterministic per seed.
SyntheticData synthesize_ood(const SyntheticScenario& sc);

/// Write signal.csv / coords.csv / edges.txt / manifest.json / truth.json
/// under `dir` and return the manifest.
DatasetManifest write_synthetic_dataset(const SyntheticData& data, const SyntheticScenario& sc,
                                        const std::string& dir);

/// In-memory path used by tests: build a ready Dataset without touching disk.
Dataset dataset_from_synthetic(const SyntheticData& data, const SyntheticScenario& sc);

}  // namespace cast
