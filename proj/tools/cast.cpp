// Command-line front end: train / eval / inspect-codebook / export-causal /
// synth / validate-data. Exit codes: 0 success, 1 validation error, 2
// runtime failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>

#include "cast/training.hpp"

using json = nlohmann::json;

namespace {

struct TrainConfig {
    std::string manifest_path;
    cast::ModelConfig model;
    std::string checkpoint_out = "model.ckpt";
    std::string metrics_out = "metrics.json";
};

TrainConfig read_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw cast::IngestError("config: cannot open " + path);
    json j;
    in >> j;
    TrainConfig c;
    c.manifest_path = j.at("manifest").get<std::string>();
    c.model = cast::model_config_from_json(j.value("model", json::object()).dump());
    if (j.contains("output")) {
        c.checkpoint_out = j.at("output").value("checkpoint", c.checkpoint_out);
        c.metrics_out = j.at("output").value("metrics", c.metrics_out);
    }
    return c;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw cast::IngestError("cannot write " + path);
    out << text;
}

std::string checkpoint_meta(const TrainConfig& cfg, const cast::Dataset& data) {
    json meta;
    meta["model"] = json::parse(cast::model_config_to_json(cfg.model));
    meta["T"] = data.manifest.T;
    meta["S"] = data.manifest.S;
    meta["D"] = int64_t{1};
    meta["F_edge"] = data.edge_cfg.feature_count();
    meta["manifest"] = cfg.manifest_path;
    meta["dataset"] = data.manifest.name;
    return meta.dump();
}

int cmd_train(const std::string& config_path, bool verbose) {
    TrainConfig cfg = read_train_config(config_path);
    cast::Dataset data = cast::load_dataset(cast::read_manifest(cfg.manifest_path));
    cast::CastModel model(cfg.model, data.graph, data.manifest.T, data.manifest.S, 1,
                          data.edge_cfg.feature_count());
    cast::AdamState adam;
    cast::TrainOutcome outcome = cast::train(model, data, adam, verbose);
    cast::save_checkpoint(cfg.checkpoint_out, model, adam, checkpoint_meta(cfg, data));
    write_text(cfg.metrics_out, cast::history_to_json(outcome.history));
    std::cout << "trained " << outcome.history.size() << " epochs, best epoch "
              << outcome.best_epoch << " (val MAE " << outcome.best_val_mae << ")\n"
              << "checkpoint: " << cfg.checkpoint_out << "\nmetrics: " << cfg.metrics_out << "\n";
    return 0;
}

std::pair<cast::CastModel, cast::Dataset> load_model_and_data(const std::string& checkpoint_path,
                                                              std::string manifest_path) {
    cast::CheckpointData ck = cast::read_checkpoint(checkpoint_path);
    if (manifest_path.empty()) {
        json meta = json::parse(ck.meta_json);
        manifest_path = meta.value("manifest", "");
        if (manifest_path.empty()) {
            throw cast::IngestError("checkpoint carries no manifest path; pass --manifest");
        }
    }
    cast::Dataset data = cast::load_dataset(cast::read_manifest(manifest_path));
    cast::CastModel model = cast::model_from_checkpoint(ck, data.graph);
    return {std::move(model), std::move(data)};
}

cast::Split parse_split(const std::string& s) {
    if (s == "train") return cast::Split::kTrain;
    if (s == "val") return cast::Split::kVal;
    if (s == "test") return cast::Split::kTest;
    throw cast::IngestError("unknown split '" + s + "' (expected train|val|test)");
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& split) {
    auto [model, data] = load_model_and_data(checkpoint, manifest);
    cast::EvalResult r = cast::evaluate(model, data, parse_split(split));
    std::printf("split %s  MAE %.3f  RMSE %.3f\n", split.c_str(), r.mae, r.rmse);
    for (const auto& h : r.horizons) {
        std::printf("  steps %lld-%lld  MAE %.3f  RMSE %.3f\n",
                    static_cast<long long>(h.first_step), static_cast<long long>(h.last_step),
                    h.mae, h.rmse);
    }
    return 0;
}

int cmd_inspect_codebook(const std::string& checkpoint, const std::string& out_path) {
    cast::CheckpointData ck = cast::read_checkpoint(checkpoint);
    json meta = json::parse(ck.meta_json);
    // the codebook tensor is self-contained; rebuild a graph-independent view
    for (const auto& [name, payload] : ck.tensors) {
        if (name == "codebook.e") {
            const auto& [shape, values] = payload;
            std::string text = "{\n  \"K\": " + std::to_string(shape[0]) +
                               ",\n  \"F\": " + std::to_string(shape[1]) + ",\n  \"usage\": [";
            for (size_t i = 0; i < ck.codebook_usage.size(); ++i) {
                if (i) text += ", ";
                text += std::to_string(ck.codebook_usage[i]);
            }
            text += "],\n  \"vectors\": [\n";
            char buf[64];
            for (int64_t k = 0; k < shape[0]; ++k) {
                text += "    [";
                for (int64_t f = 0; f < shape[1]; ++f) {
                    if (f) text += ", ";
                    std::snprintf(buf, sizeof(buf), "%.17g",
                                  values[static_cast<size_t>(k * shape[1] + f)]);
                    text += buf;
                }
                text += k + 1 < shape[0] ? "],\n" : "]\n";
            }
            text += "  ]\n}\n";
            if (out_path.empty()) {
                std::cout << text;
            } else {
                write_text(out_path, text);
                std::cout << "codebook report: " << out_path << "\n";
            }
            return 0;
        }
    }
    throw cast::IngestError("checkpoint has no codebook tensor");
}

int cmd_export_causal(const std::string& checkpoint, const std::string& manifest, int64_t window,
                      const std::string& out_path) {
    auto [model, data] = load_model_and_data(checkpoint, manifest);
    auto records = cast::causal_strengths_for_window(model, data, window);
    std::string text = cast::causal_records_to_json(records);
    if (out_path.empty()) {
        std::cout << text;
    } else {
        write_text(out_path, text);
        std::cout << "causal report (" << records.size() << " rows): " << out_path << "\n";
    }
    return 0;
}

int cmd_synth(const std::string& scenario_path, const std::string& preset, const std::string& out_dir) {
    cast::SyntheticScenario sc =
        scenario_path.empty() ? cast::preset_scenario(preset) : cast::read_scenario(scenario_path);
    cast::SyntheticData data = cast::synthesize_ood(sc);
    cast::DatasetManifest m = cast::write_synthetic_dataset(data, sc, out_dir);
    std::cout << "scenario '" << sc.name << "': " << sc.nodes << " nodes, "
              << data.graph.edge_count() << " edges, " << sc.steps << " steps -> " << out_dir
              << "\n";
    (void)m;
    return 0;
}

int cmd_validate(const std::string& manifest_path) {
    cast::DatasetManifest m = cast::read_manifest(manifest_path);
    cast::validate_dataset(m);
    cast::Dataset d = cast::load_dataset(m);
    std::cout << "ok: " << d.nodes << " nodes, " << d.graph.edge_count() << " edges, " << d.steps
              << " steps; windows train/val/test = " << d.train_starts.size() << "/"
              << d.val_starts.size() << "/" << d.test_starts.size() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"causal spatio-temporal graph forecasting toolkit"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, manifest, split = "test", out_path, scenario_path,
                preset = "regime-shift", manifest_path;
    int64_t window = 0;
    bool verbose = false;

    auto* train = app.add_subcommand("train", "train a model from a JSON config");
    train->add_option("--config", config_path, "training config JSON")->required();
    train->add_flag("--verbose", verbose, "per-epoch progress");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (MAE/RMSE, per-horizon)");
    eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    eval->add_option("--manifest", manifest, "dataset manifest (defaults to the training one)");
    eval->add_option("--split", split, "train|val|test (default test)");

    auto* inspect = app.add_subcommand("inspect-codebook", "dump codebook vectors and usage");
    inspect->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    inspect->add_option("--out", out_path, "output JSON path (stdout if omitted)");

    auto* causal = app.add_subcommand("export-causal", "export causal strengths for one window");
    causal->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    causal->add_option("--manifest", manifest, "dataset manifest (defaults to the training one)");
    causal->add_option("--window", window, "X-window start offset")->required();
    causal->add_option("--out", out_path, "output JSON path (stdout if omitted)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--scenario", scenario_path, "scenario JSON");
    synth->add_option("--preset", preset, "regime-shift|edge-perturb (default regime-shift)");
    synth->add_option("--out", out_path, "output directory")->required();

    auto* validate = app.add_subcommand("validate-data", "check a dataset manifest");
    validate->add_option("--manifest", manifest_path, "manifest path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, verbose);
        if (eval->parsed()) return cmd_eval(checkpoint, manifest, split);
        if (inspect->parsed()) return cmd_inspect_codebook(checkpoint, out_path);
        if (causal->parsed()) return cmd_export_causal(checkpoint, manifest, window, out_path);
        if (synth->parsed()) return cmd_synth(scenario_path, preset, out_path);
        if (validate->parsed()) return cmd_validate(manifest_path);
    } catch (const cast::IngestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const cast::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
