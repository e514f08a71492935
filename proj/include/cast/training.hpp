#pragma once

#include "cast/model.hpp"

namespace cast {

struct EpochStats {
    int64_t epoch = 0;
    LossBreakdown train_loss;
    double val_mae = 0.0;
    double val_rmse = 0.0;
};

struct TrainOutcome {
    std::vector<EpochStats> history;
    int64_t best_epoch = -1;
    double best_val_mae = 0.0;
};

struct HorizonMetrics {
    int64_t first_step = 0;  // 1-based, inclusive
    int64_t last_step = 0;
    double mae = 0.0;
    double rmse = 0.0;
};

struct EvalResult {
    double mae = 0.0;
    double rmse = 0.0;
    std::vector<HorizonMetrics> horizons;  // thirds of the forecast span
};

/// Build one batch of (X, Y, edge signals) from the dataset's normalized
/// series. X is [B,T,N,1], Y is [B,S,N,1], x_ed is [B,M,F'].
struct BatchTensors {
    Tensor X;
    Tensor Y;
    Tensor x_ed;
};
BatchTensors make_batch(Tape& t, const Dataset& data, std::span<const int64_t> starts);

/// Epoch loop with seeded shuffling, Adam updates, per-epoch validation MAE,
/// early stopping, and best-checkpoint restoration. Deterministic per seed.
/// Throws NumericError naming the batch index if the loss diverges.
TrainOutcome train(CastModel& model, const Dataset& data, AdamState& adam,
                   bool verbose = false);

/// MAE/RMSE on de-normalized predictions, plus a per-horizon breakdown.
EvalResult evaluate(CastModel& model, const Dataset& data, Split split);

/// Mean-over-nodes surrogate features per window of a split (row-major
/// [windows x F]) with the ground-truth regime labels. Used by probes.
struct FeatureDump {
    std::vector<double> features;
    std::vector<int64_t> labels;
    int64_t width = 0;
};
FeatureDump collect_surrogate_features(CastModel& model, const Dataset& data, Split split);

/// Causal strengths for a single window (test-mode forward), shape [M,K_b].
std::vector<CausalRecord> causal_strengths_for_window(CastModel& model, const Dataset& data,
                                                      int64_t x_start);

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary container with a JSON meta blob, all named
// parameter tensors, optimizer moments, and codebook usage counts.
// ---------------------------------------------------------------------------

struct CheckpointData {
    std::string meta_json;
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<double>>>> tensors;
    AdamState adam;
    std::vector<int64_t> codebook_usage;
};

void save_checkpoint(const std::string& path, CastModel& model, const AdamState& adam,
                     const std::string& meta_json);
CheckpointData read_checkpoint(const std::string& path);

/// Rebuild a model from checkpoint meta + tensors. The graph must match the
/// one the checkpoint was trained on (checked by parameter shapes).
CastModel model_from_checkpoint(const CheckpointData& ck, const STGraph& graph);

/// Serialize a training history as JSON (floats keep full precision).
std::string history_to_json(const std::vector<EpochStats>& history);

/// Codebook report: vectors and usage counts, 17-significant-digit floats.
std::string codebook_report_json(const CastModel& model);

}  // namespace cast
