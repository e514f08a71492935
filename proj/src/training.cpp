#include "cast/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>

namespace cast {

using json = nlohmann::json;

BatchTensors make_batch(Tape& t, const Dataset& data, std::span<const int64_t> starts) {
    const int64_t B = static_cast<int64_t>(starts.size());
    const int64_t T = data.manifest.T, S = data.manifest.S, N = data.nodes;
    const int64_t M = data.graph.edge_count();
    const int64_t Fe = data.edge_cfg.feature_count();

    std::vector<double> xb(static_cast<size_t>(B * T * N), 0.0);
    std::vector<double> yb(static_cast<size_t>(B * S * N), 0.0);
    std::vector<double> eb(static_cast<size_t>(B * M * Fe), 0.0);
    for (int64_t b = 0; b < B; ++b) {
        int64_t o = starts[static_cast<size_t>(b)];
        for (int64_t s = 0; s < T; ++s)
            for (int64_t n = 0; n < N; ++n)
                xb[static_cast<size_t>((b * T + s) * N + n)] =
                    data.normalized[static_cast<size_t>((o + s) * N + n)];
        for (int64_t s = 0; s < S; ++s)
            for (int64_t n = 0; n < N; ++n)
                yb[static_cast<size_t>((b * S + s) * N + n)] =
                    data.normalized[static_cast<size_t>((o + T + s) * N + n)];
        const Mat& es = data.edge_signal(o);
        for (int64_t m = 0; m < M; ++m)
            for (int64_t f = 0; f < Fe; ++f)
                eb[static_cast<size_t>((b * M + m) * Fe + f)] = es(m, f);
    }
    BatchTensors out;
    out.X = t.leaf(Shape{B, T, N, 1}, xb, false);
    out.Y = t.leaf(Shape{B, S, N, 1}, yb, false);
    out.x_ed = t.leaf(Shape{B, M, Fe}, eb, false);
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

struct ErrorAccum {
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    int64_t count = 0;
    void add(double err) {
        abs_sum += std::abs(err);
        sq_sum += err * err;
        count += 1;
    }
    double mae() const { return count ? abs_sum / static_cast<double>(count) : 0.0; }
    double rmse() const { return count ? std::sqrt(sq_sum / static_cast<double>(count)) : 0.0; }
};

}  // namespace

EvalResult evaluate(CastModel& model, const Dataset& data, Split split) {
    const auto& starts = data.starts(split);
    const int64_t S = data.manifest.S, N = data.nodes;
    const int64_t third = std::max<int64_t>(1, S / 3);

    ErrorAccum overall;
    std::vector<ErrorAccum> horizon(static_cast<size_t>((S + third - 1) / third));
    for (size_t off = 0; off < starts.size(); off += static_cast<size_t>(model.cfg.batch_size)) {
        size_t hi = std::min(starts.size(), off + static_cast<size_t>(model.cfg.batch_size));
        std::span<const int64_t> chunk(starts.data() + off, hi - off);
        Tape tape;
        Binder bind(tape);
        BatchTensors batch = make_batch(tape, data, chunk);
        ForwardResult fwd = model.forward(tape, bind, batch.X, batch.x_ed, Mode::kTest);
        const auto& pred = fwd.y_hat.data();
        const auto& truth = batch.Y.data();
        int64_t B = static_cast<int64_t>(chunk.size());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t s = 0; s < S; ++s)
                for (int64_t n = 0; n < N; ++n) {
                    size_t i = static_cast<size_t>((b * S + s) * N + n);
                    double p = data.norm.denormalize(pred[i], n);
                    double y = data.norm.denormalize(truth[i], n);
                    overall.add(p - y);
                    horizon[static_cast<size_t>(s / third)].add(p - y);
                }
    }
    EvalResult r;
    r.mae = overall.mae();
    r.rmse = overall.rmse();
    for (size_t h = 0; h < horizon.size(); ++h) {
        HorizonMetrics hm;
        hm.first_step = static_cast<int64_t>(h) * third + 1;
        hm.last_step = std::min<int64_t>(S, static_cast<int64_t>(h + 1) * third);
        hm.mae = horizon[h].mae();
        hm.rmse = horizon[h].rmse();
        r.horizons.push_back(hm);
    }
    if (r.rmse + 1e-12 < r.mae) {
        throw NumericError("evaluate: RMSE fell below MAE, metric computation is broken");
    }
    return r;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainOutcome train(CastModel& model, const Dataset& data, AdamState& adam, bool verbose) {
    const ModelConfig& cfg = model.cfg;
    adam.lr = cfg.lr;
    std::vector<Param*> params = model.parameters();
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<int64_t> order = data.train_starts;
    TrainOutcome out;
    std::vector<std::vector<double>> best_values;
    int64_t stale_epochs = 0;

    for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        int64_t budget = static_cast<int64_t>(order.size());
        if (cfg.max_batches_per_epoch > 0) {
            budget = std::min<int64_t>(budget, cfg.max_batches_per_epoch * cfg.batch_size);
        }

        LossBreakdown epoch_loss;
        int64_t batches = 0;
        for (int64_t off = 0; off < budget; off += cfg.batch_size) {
            int64_t hi = std::min<int64_t>(budget, off + cfg.batch_size);
            std::span<const int64_t> chunk(order.data() + off, static_cast<size_t>(hi - off));
            Tape tape;
            Binder bind(tape);
            BatchTensors batch = make_batch(tape, data, chunk);
            ForwardResult fwd = model.forward(tape, bind, batch.X, batch.x_ed, Mode::kTrain);
            LossTensors loss = total_loss(tape, bind, model, fwd, batch.Y);
            LossBreakdown lb = loss.values();
            if (std::abs(lb.total - (lb.pre + lb.cod + cfg.beta * lb.mi)) > 1e-10) {
                throw NumericError("train: loss breakdown identity violated");
            }
            if (std::isnan(lb.total)) {
                throw NumericError("train: loss diverged to NaN at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(batches));
            }
            tape.backward(loss.objective);
            bind.pull_grads();
            adam_step(params, adam);
            epoch_loss.pre += lb.pre;
            epoch_loss.cod += lb.cod;
            epoch_loss.mi += lb.mi;
            epoch_loss.total += lb.total;
            batches += 1;
        }
        if (batches > 0) {
            epoch_loss.pre /= static_cast<double>(batches);
            epoch_loss.cod /= static_cast<double>(batches);
            epoch_loss.mi /= static_cast<double>(batches);
            epoch_loss.total /= static_cast<double>(batches);
        }

        EvalResult val = evaluate(model, data, Split::kVal);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss;
        stats.val_mae = val.mae;
        stats.val_rmse = val.rmse;
        out.history.push_back(stats);
        if (verbose) {
            std::printf("epoch %3lld  loss %.5f (pre %.5f cod %.5f mi %+.5f)  val mae %.5f\n",
                        static_cast<long long>(epoch), epoch_loss.total, epoch_loss.pre,
                        epoch_loss.cod, epoch_loss.mi, val.mae);
        }

        if (out.best_epoch < 0 || val.mae < out.best_val_mae) {
            out.best_epoch = epoch;
            out.best_val_mae = val.mae;
            best_values.clear();
            for (Param* p : params) best_values.push_back(p->value);
            stale_epochs = 0;
        } else if (++stale_epochs >= cfg.patience) {
            break;
        }
    }

    if (!best_values.empty()) {
        for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature dumps and causal export
// ---------------------------------------------------------------------------

FeatureDump collect_surrogate_features(CastModel& model, const Dataset& data, Split split) {
    const auto& starts = data.starts(split);
    const int64_t N = data.nodes, F = model.cfg.F;
    FeatureDump dump;
    dump.width = F;
    dump.features.reserve(starts.size() * static_cast<size_t>(F));
    for (size_t off = 0; off < starts.size(); off += static_cast<size_t>(model.cfg.batch_size)) {
        size_t hi = std::min(starts.size(), off + static_cast<size_t>(model.cfg.batch_size));
        std::span<const int64_t> chunk(starts.data() + off, hi - off);
        Tape tape;
        Binder bind(tape);
        BatchTensors batch = make_batch(tape, data, chunk);
        ForwardResult fwd = model.forward(tape, bind, batch.X, batch.x_ed, Mode::kTest);
        const auto& h = fwd.h_i_hat.data();  // [B,N,F]
        for (size_t b = 0; b < chunk.size(); ++b) {
            for (int64_t f = 0; f < F; ++f) {
                double acc = 0.0;
                for (int64_t n = 0; n < N; ++n)
                    acc += h[(b * static_cast<size_t>(N) + static_cast<size_t>(n)) *
                                 static_cast<size_t>(F) +
                             static_cast<size_t>(f)];
                dump.features.push_back(acc / static_cast<double>(N));
            }
            dump.labels.push_back(data.window_regime(chunk[b]));
        }
    }
    return dump;
}

std::vector<CausalRecord> causal_strengths_for_window(CastModel& model, const Dataset& data,
                                                      int64_t x_start) {
    Tape tape;
    Binder bind(tape);
    int64_t starts[1] = {x_start};
    BatchTensors batch = make_batch(tape, data, std::span<const int64_t>(starts, 1));
    ForwardResult fwd = model.forward(tape, bind, batch.X, batch.x_ed, Mode::kTest);
    Tensor one = reshape(fwd.a_cau, Shape{data.graph.edge_count(), model.cfg.K_b});
    return export_causal(one, data.graph, x_start);
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'A', 'S', 'T', 'C', 'K', 'P', '1'};

template <class T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IngestError("checkpoint: truncated file");
    return v;
}

void put_doubles(std::ofstream& out, const std::vector<double>& v) {
    put<uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::ifstream& in) {
    uint64_t n = get<uint64_t>(in);
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IngestError("checkpoint: truncated tensor data");
    return v;
}

void put_string(std::ofstream& out, const std::string& s) {
    put<uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in) {
    uint64_t n = get<uint64_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw IngestError("checkpoint: truncated string");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, CastModel& model, const AdamState& adam,
                     const std::string& meta_json) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    put<uint32_t>(out, 1);
    put_string(out, meta_json);

    std::vector<Param*> params = model.parameters();
    put<uint64_t>(out, params.size());
    for (Param* p : params) {
        put_string(out, p->name);
        put<uint32_t>(out, static_cast<uint32_t>(p->shape.size()));
        for (int64_t d : p->shape) put<int64_t>(out, d);
        put_doubles(out, p->value);
    }

    put<uint8_t>(out, adam.m.size() == params.size() ? 1 : 0);
    if (adam.m.size() == params.size()) {
        put<double>(out, adam.lr);
        put<double>(out, adam.beta1);
        put<double>(out, adam.beta2);
        put<double>(out, adam.eps);
        put<int64_t>(out, adam.step);
        for (size_t i = 0; i < params.size(); ++i) {
            put_doubles(out, adam.m[i]);
            put_doubles(out, adam.v[i]);
        }
    }

    put<uint64_t>(out, model.codebook.usage.size());
    for (int64_t u : model.codebook.usage) put<int64_t>(out, u);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IngestError("checkpoint: bad magic in " + path);
    }
    uint32_t version = get<uint32_t>(in);
    if (version != 1) throw IngestError("checkpoint: unsupported version " + std::to_string(version));

    CheckpointData ck;
    ck.meta_json = get_string(in);
    uint64_t n = get<uint64_t>(in);
    for (uint64_t i = 0; i < n; ++i) {
        std::string name = get_string(in);
        uint32_t ndim = get<uint32_t>(in);
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = get<int64_t>(in);
        std::vector<double> values = get_doubles(in);
        ck.tensors.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(values)));
    }
    uint8_t has_adam = get<uint8_t>(in);
    if (has_adam) {
        ck.adam.lr = get<double>(in);
        ck.adam.beta1 = get<double>(in);
        ck.adam.beta2 = get<double>(in);
        ck.adam.eps = get<double>(in);
        ck.adam.step = get<int64_t>(in);
        for (uint64_t i = 0; i < n; ++i) {
            ck.adam.m.push_back(get_doubles(in));
            ck.adam.v.push_back(get_doubles(in));
        }
    }
    uint64_t ulen = get<uint64_t>(in);
    for (uint64_t i = 0; i < ulen; ++i) ck.codebook_usage.push_back(get<int64_t>(in));
    return ck;
}

CastModel model_from_checkpoint(const CheckpointData& ck, const STGraph& graph) {
    json meta = json::parse(ck.meta_json);
    ModelConfig cfg = model_config_from_json(meta.at("model").dump());
    CastModel model(cfg, graph, meta.at("T").get<int64_t>(), meta.at("S").get<int64_t>(),
                    meta.at("D").get<int64_t>(), meta.at("F_edge").get<int64_t>());
    std::vector<Param*> params = model.parameters();
    if (params.size() != ck.tensors.size()) {
        throw IngestError("checkpoint: parameter count mismatch (" +
                          std::to_string(ck.tensors.size()) + " stored, model has " +
                          std::to_string(params.size()) + ")");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& [name, payload] = ck.tensors[i];
        if (params[i]->name != name || params[i]->shape != payload.first) {
            throw IngestError("checkpoint: tensor '" + name +
                              "' does not match model parameter '" + params[i]->name + "'");
        }
        params[i]->value = payload.second;
    }
    if (!ck.codebook_usage.empty()) model.codebook.usage = ck.codebook_usage;
    return model;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string history_to_json(const std::vector<EpochStats>& history) {
    std::string out = "[\n";
    char buf[512];
    for (size_t i = 0; i < history.size(); ++i) {
        const auto& h = history[i];
        std::snprintf(buf, sizeof(buf),
                      "  {\"epoch\": %lld, \"train_loss\": {\"pre\": %.17g, \"cod\": %.17g, "
                      "\"mi\": %.17g, \"total\": %.17g}, \"val_mae\": %.17g, \"val_rmse\": "
                      "%.17g}%s\n",
                      static_cast<long long>(h.epoch), h.train_loss.pre, h.train_loss.cod,
                      h.train_loss.mi, h.train_loss.total, h.val_mae, h.val_rmse,
                      i + 1 < history.size() ? "," : "");
        out += buf;
    }
    out += "]\n";
    return out;
}

std::string codebook_report_json(const CastModel& model) {
    const Codebook& cb = model.codebook;
    std::string out = "{\n";
    out += "  \"K\": " + std::to_string(cb.size()) + ",\n";
    out += "  \"F\": " + std::to_string(cb.width()) + ",\n";
    out += "  \"usage\": [";
    for (size_t i = 0; i < cb.usage.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(cb.usage[i]);
    }
    out += "],\n  \"vectors\": [\n";
    char buf[64];
    for (int64_t k = 0; k < cb.size(); ++k) {
        out += "    [";
        for (int64_t f = 0; f < cb.width(); ++f) {
            if (f) out += ", ";
            std::snprintf(buf, sizeof(buf), "%.17g",
                          cb.e.value[static_cast<size_t>(k * cb.width() + f)]);
            out += buf;
        }
        out += k + 1 < cb.size() ? "],\n" : "]\n";
    }
    out += "  ]\n}\n";
    return out;
}

}  // namespace cast
