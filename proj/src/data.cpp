#include "cast/data.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace cast {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
    if (T <= 0 || S <= 0) throw IngestError("manifest: T and S must be positive");
    if (tau < 1 || T % tau != 0) throw IngestError("manifest: tau must divide T");
    double total = split[0] + split[1] + split[2];
    if (!(total > 0.0) || split[0] <= 0 || split[1] <= 0 || split[2] <= 0) {
        throw IngestError("manifest: split ratios must be positive");
    }
    if (distance != "euclidean" && distance != "haversine") {
        throw IngestError("manifest: distance must be 'euclidean' or 'haversine', got '" +
                          distance + "'");
    }
}

namespace {

std::string resolve_path(const std::string& base_file, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute()) return rel;
    return (std::filesystem::path(base_file).parent_path() / p).string();
}

}  // namespace

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("manifest: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IngestError("manifest " + path + ": " + e.what());
    }
    DatasetManifest m;
    m.name = j.value("name", "dataset");
    m.signal_path = resolve_path(path, j.at("signal").get<std::string>());
    m.coords_path = resolve_path(path, j.at("coords").get<std::string>());
    m.edges_path = resolve_path(path, j.at("edges").get<std::string>());
    if (j.contains("split")) {
        auto s = j.at("split");
        for (int i = 0; i < 3; ++i) m.split[static_cast<size_t>(i)] = s.at(i).get<double>();
    }
    m.distance = j.value("distance", "euclidean");
    m.T = j.value("T", int64_t{24});
    m.S = j.value("S", int64_t{24});
    m.tau = j.value("tau", int64_t{6});
    if (j.contains("sigma")) m.sigma = j.at("sigma").get<double>();
    if (j.contains("kappa")) m.kappa = j.at("kappa").get<double>();
    m.validate();
    return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    json j;
    j["name"] = m.name;
    j["signal"] = std::filesystem::path(m.signal_path).filename().string();
    j["coords"] = std::filesystem::path(m.coords_path).filename().string();
    j["edges"] = std::filesystem::path(m.edges_path).filename().string();
    j["split"] = m.split;
    j["distance"] = m.distance;
    j["T"] = m.T;
    j["S"] = m.S;
    j["tau"] = m.tau;
    if (m.sigma) j["sigma"] = *m.sigma;
    if (m.kappa) j["kappa"] = *m.kappa;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// File parsing
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end && *end == '\0';
}

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

// Timestamps are either numeric (step index / epoch) or date-like
// (YYYY-MM-DD[ hh:mm[:ss]]). Anything else is an ingestion error.
bool timestamp_ok(const std::string& s) {
    double d;
    if (parse_double(s, d)) return true;
    int digits = 0, dashes = 0;
    for (char c : s) {
        if (std::isdigit(static_cast<unsigned char>(c))) ++digits;
        else if (c == '-') ++dashes;
        else if (c != ' ' && c != ':' && c != 'T') return false;
    }
    return digits >= 8 && dashes == 2;
}

struct SignalTable {
    std::vector<double> values;  // [time][node], NaN for missing cells
    int64_t steps = 0;
    int64_t nodes = 0;
};

SignalTable read_signal_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("signal: cannot open " + path);
    SignalTable t;
    std::string line;
    int64_t lineno = 0;
    bool first_data_row = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (is_blank(line)) continue;
        auto cells = split_csv_line(line);
        if (lineno == 1) {
            // optional header: skip if the second cell is not numeric/blank
            double d;
            if (cells.size() >= 2 && !cells[1].empty() && !parse_double(cells[1], d)) continue;
        }
        if (cells.size() < 2) {
            throw IngestError("signal " + path + ":" + std::to_string(lineno) +
                              ": expected timestamp plus node columns");
        }
        if (!timestamp_ok(cells[0])) {
            throw IngestError("signal " + path + ":" + std::to_string(lineno) +
                              ": unparseable timestamp '" + cells[0] + "'");
        }
        int64_t n = static_cast<int64_t>(cells.size()) - 1;
        if (first_data_row) {
            t.nodes = n;
            first_data_row = false;
        } else if (n != t.nodes) {
            throw IngestError("signal " + path + ":" + std::to_string(lineno) + ": ragged row (" +
                              std::to_string(n) + " columns, expected " + std::to_string(t.nodes) +
                              ")");
        }
        for (int64_t i = 0; i < n; ++i) {
            const std::string& cell = cells[static_cast<size_t>(i + 1)];
            double v;
            if (cell.empty() || is_blank(cell)) {
                v = std::numeric_limits<double>::quiet_NaN();
            } else if (!parse_double(cell, v)) {
                throw IngestError("signal " + path + ":" + std::to_string(lineno) +
                                  ": bad value '" + cell + "'");
            }
            t.values.push_back(v);
        }
        ++t.steps;
    }
    if (t.steps == 0) throw IngestError("signal " + path + ": no data rows");
    return t;
}

std::vector<std::array<double, 2>> read_coords(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("coords: cannot open " + path);
    std::vector<std::array<double, 2>> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        for (auto& c : line)
            if (c == ',') c = ' ';
        if (is_blank(line)) continue;
        std::istringstream is(line);
        double a, b;
        if (!(is >> a >> b)) {
            throw IngestError("coords " + path + ":" + std::to_string(lineno) +
                              ": expected two numbers");
        }
        out.push_back({a, b});
    }
    return out;
}

std::vector<STGraph::Edge> read_edges(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("edges: cannot open " + path);
    std::vector<STGraph::Edge> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (is_blank(line) || line[0] == '#') continue;
        std::istringstream is(line);
        int64_t s, d;
        if (!(is >> s >> d)) {
            throw IngestError("edges " + path + ":" + std::to_string(lineno) +
                              ": expected 'src dst'");
        }
        out.push_back({s, d});
    }
    return out;
}

// Linear interpolation over time per node; boundary values are held.
void impute(SignalTable& t) {
    for (int64_t n = 0; n < t.nodes; ++n) {
        int64_t prev = -1;
        for (int64_t s = 0; s < t.steps; ++s) {
            double v = t.values[static_cast<size_t>(s * t.nodes + n)];
            if (!std::isnan(v)) {
                if (prev < 0 && s > 0) {
                    for (int64_t k = 0; k < s; ++k)
                        t.values[static_cast<size_t>(k * t.nodes + n)] = v;  // leading hold
                } else if (prev >= 0 && s > prev + 1) {
                    double a = t.values[static_cast<size_t>(prev * t.nodes + n)];
                    for (int64_t k = prev + 1; k < s; ++k) {
                        double w = static_cast<double>(k - prev) / static_cast<double>(s - prev);
                        t.values[static_cast<size_t>(k * t.nodes + n)] = a + w * (v - a);
                    }
                }
                prev = s;
            }
        }
        if (prev < 0) {
            throw IngestError("signal: node column " + std::to_string(n) + " has no data at all");
        }
        for (int64_t k = prev + 1; k < t.steps; ++k) {
            t.values[static_cast<size_t>(k * t.nodes + n)] =
                t.values[static_cast<size_t>(prev * t.nodes + n)];  // trailing hold
        }
    }
}

}  // namespace

void split_boundaries(int64_t steps, const std::array<double, 3>& ratio, int64_t& train_end,
                      int64_t& val_end) {
    double total = ratio[0] + ratio[1] + ratio[2];
    train_end = static_cast<int64_t>(std::floor(static_cast<double>(steps) * ratio[0] / total));
    val_end = static_cast<int64_t>(
        std::floor(static_cast<double>(steps) * (ratio[0] + ratio[1]) / total));
}

std::vector<int64_t> window_starts(int64_t split_begin, int64_t split_end, int64_t T, int64_t S,
                                   int64_t history) {
    std::vector<int64_t> out;
    int64_t first = std::max(split_begin, history);
    for (int64_t o = first; o + T + S <= split_end; ++o) out.push_back(o);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

namespace {

void finalize_dataset(Dataset& d) {
    d.manifest.validate();
    d.graph.validate();
    if (d.graph.node_count != d.nodes) {
        throw IngestError("dataset '" + d.manifest.name + "': signal has " +
                          std::to_string(d.nodes) + " node columns but the graph declares " +
                          std::to_string(d.graph.node_count) + " nodes");
    }
    const int64_t T = d.manifest.T, S = d.manifest.S;
    const int64_t history = (T / d.manifest.tau) * d.manifest.tau;
    split_boundaries(d.steps, d.manifest.split, d.train_end, d.val_end);
    int64_t needed = history + T + S;
    if (d.train_end < needed) {
        throw IngestError("dataset '" + d.manifest.name + "': training span " +
                          std::to_string(d.train_end) + " steps is shorter than the minimum " +
                          std::to_string(needed) + " (history + T + S)");
    }

    // per-node z-score statistics from the training span only
    d.norm.mean.assign(static_cast<size_t>(d.nodes), 0.0);
    d.norm.stddev.assign(static_cast<size_t>(d.nodes), 1.0);
    for (int64_t n = 0; n < d.nodes; ++n) {
        double m = 0.0;
        for (int64_t s = 0; s < d.train_end; ++s) m += d.raw[static_cast<size_t>(s * d.nodes + n)];
        m /= static_cast<double>(d.train_end);
        double var = 0.0;
        for (int64_t s = 0; s < d.train_end; ++s) {
            double x = d.raw[static_cast<size_t>(s * d.nodes + n)] - m;
            var += x * x;
        }
        var /= static_cast<double>(d.train_end);
        d.norm.mean[static_cast<size_t>(n)] = m;
        d.norm.stddev[static_cast<size_t>(n)] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    d.normalized.resize(d.raw.size());
    for (int64_t s = 0; s < d.steps; ++s)
        for (int64_t n = 0; n < d.nodes; ++n)
            d.normalized[static_cast<size_t>(s * d.nodes + n)] =
                d.norm.normalize(d.raw[static_cast<size_t>(s * d.nodes + n)], n);

    d.train_starts = window_starts(0, d.train_end, T, S, history);
    d.val_starts = window_starts(d.train_end, d.val_end, T, S, history);
    d.test_starts = window_starts(d.val_end, d.steps, T, S, history);
    if (d.train_starts.empty()) {
        throw IngestError("dataset '" + d.manifest.name + "': no training windows fit");
    }

    d.edge_cfg.T = T;
    d.edge_cfg.tau = d.manifest.tau;
    if (!d.graph.coords.empty()) fit_kernel_defaults(d.graph, d.edge_cfg);
    if (d.manifest.sigma) d.edge_cfg.sigma = *d.manifest.sigma;
    if (d.manifest.kappa) d.edge_cfg.kappa = *d.manifest.kappa;
    d.edge_cfg.validate();
}

}  // namespace

const Mat& Dataset::edge_signal(int64_t x_start) const {
    auto it = edge_cache_.find(x_start);
    if (it != edge_cache_.end()) return it->second;
    WindowView w{normalized.data(), nodes, x_start, manifest.T};
    auto [pos, inserted] = edge_cache_.emplace(x_start, assemble_edge_signal(graph, w, edge_cfg));
    (void)inserted;
    return pos->second;
}

Dataset load_dataset(const DatasetManifest& manifest) {
    manifest.validate();
    Dataset d;
    d.manifest = manifest;

    SignalTable table = read_signal_csv(manifest.signal_path);
    impute(table);
    d.steps = table.steps;
    d.nodes = table.nodes;
    d.raw = std::move(table.values);

    d.graph.node_count = d.nodes;
    d.graph.edges = read_edges(manifest.edges_path);
    d.graph.coords = read_coords(manifest.coords_path);
    d.graph.geographic = manifest.distance == "haversine";

    finalize_dataset(d);
    return d;
}

void validate_dataset(const DatasetManifest& manifest) { (void)load_dataset(manifest); }

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

void SyntheticScenario::validate() const {
    if (nodes < 2) throw ContractError("scenario: need at least two nodes");
    if (steps < T + S + 1) throw ContractError("scenario: timeline too short");
    if (regimes.empty()) throw ContractError("scenario: no regimes");
    int64_t cursor = 0;
    for (const auto& r : regimes) {
        if (r.start != cursor || r.end <= r.start) {
            throw ContractError("scenario: regimes must tile the timeline without gaps");
        }
        cursor = r.end;
    }
    if (cursor != steps) throw ContractError("scenario: regimes do not cover all steps");
    for (const auto& c : changes) {
        if (c.edge < 0 || c.edge >= static_cast<int64_t>(edges.size())) {
            throw ContractError("scenario: diffusion change on unknown edge");
        }
    }
}

SyntheticScenario read_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("scenario: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IngestError("scenario " + path + ": " + e.what());
    }
    if (j.contains("preset")) return preset_scenario(j.at("preset").get<std::string>());
    SyntheticScenario sc;
    sc.name = j.value("name", "custom");
    sc.nodes = j.at("nodes").get<int64_t>();
    sc.steps = j.at("steps").get<int64_t>();
    for (const auto& e : j.at("edges")) sc.edges.emplace_back(e.at(0).get<int64_t>(), e.at(1).get<int64_t>());
    for (const auto& r : j.at("regimes")) {
        sc.regimes.push_back({r.at("start").get<int64_t>(), r.at("end").get<int64_t>(),
                              r.value("mean", 0.0), r.value("ar", 0.5), r.value("amplitude", 1.0)});
    }
    sc.diffusion = j.value("diffusion", 0.25);
    for (const auto& c : j.value("changes", json::array())) {
        sc.changes.push_back({c.at("edge").get<int64_t>(), c.at("start").get<int64_t>(),
                              c.at("value").get<double>()});
    }
    sc.noise = j.value("noise", 0.3);
    sc.seed = j.value("seed", uint64_t{7});
    sc.period = j.value("period", int64_t{24});
    sc.T = j.value("T", int64_t{24});
    sc.S = j.value("S", int64_t{12});
    sc.tau = j.value("tau", int64_t{6});
    if (j.contains("split")) {
        for (int i = 0; i < 3; ++i) sc.split[static_cast<size_t>(i)] = j.at("split").at(i).get<double>();
    }
    sc.validate();
    return sc;
}

namespace {

std::vector<std::pair<int64_t, int64_t>> ring_edges(int64_t n) {
    std::vector<std::pair<int64_t, int64_t>> e;
    for (int64_t i = 0; i < n; ++i) e.emplace_back(i, (i + 1) % n);
    return e;
}

}  // namespace

SyntheticScenario preset_scenario(const std::string& name) {
    SyntheticScenario sc;
    sc.name = name;
    if (name == "regime-shift") {
        // alternating seen regimes in train/val, an unseen one in the test tail
        sc.nodes = 8;
        sc.steps = 1680;
        sc.edges = ring_edges(sc.nodes);
        sc.edges.emplace_back(0, 4);
        sc.edges.emplace_back(2, 6);
        sc.edges.emplace_back(5, 1);
        sc.edges.emplace_back(7, 3);
        sc.diffusion = 0.25;
        sc.noise = 0.25;
        sc.seed = 11;
        sc.T = 24;
        sc.S = 12;
        sc.tau = 6;
        sc.split = {4, 1, 1};
        // train+val end at 1400; regime blocks of 140 alternate between two
        // environments, and the final 280 steps (the test span) run a regime
        // whose parameters never appear earlier
        for (int64_t t = 0; t < 1400; t += 140) {
            bool odd = (t / 140) % 2 == 1;
            sc.regimes.push_back({t, t + 140, odd ? 4.0 : 0.0, 0.6, odd ? 2.0 : 1.0});
        }
        sc.regimes.push_back({1400, 1680, 7.0, 0.6, 3.0});
    } else if (name == "edge-perturb") {
        sc.nodes = 12;
        sc.steps = 1200;
        sc.edges = ring_edges(sc.nodes);
        sc.diffusion = 0.3;
        sc.noise = 0.05;
        sc.seed = 23;
        sc.T = 24;
        sc.S = 12;
        sc.tau = 6;
        sc.split = {4, 1, 1};
        sc.regimes.push_back({0, 1200, 0.0, 0.55, 1.0});
        // edge 0's coupling strengthens sharply inside the test span
        sc.changes.push_back({0, 1050, 0.95});
    } else {
        throw ContractError("unknown scenario preset '" + name + "'");
    }
    sc.validate();
    return sc;
}

SyntheticData synthesize_ood(const SyntheticScenario& sc) {
    sc.validate();
    SyntheticData out;
    out.graph.node_count = sc.nodes;
    for (auto [s, d] : sc.edges) out.graph.edges.push_back({s, d});
    out.graph.coords.resize(static_cast<size_t>(sc.nodes));
    for (int64_t n = 0; n < sc.nodes; ++n) {
        double ang = 2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(sc.nodes);
        out.graph.coords[static_cast<size_t>(n)] = {std::cos(ang), std::sin(ang)};
    }
    out.graph.geographic = false;
    out.graph.validate();

    const int64_t N = sc.nodes, M = out.graph.edge_count();
    out.regime_per_step.resize(static_cast<size_t>(sc.steps));
    for (size_t r = 0; r < sc.regimes.size(); ++r) {
        for (int64_t t = sc.regimes[r].start; t < sc.regimes[r].end; ++t)
            out.regime_per_step[static_cast<size_t>(t)] = static_cast<int64_t>(r);
    }
    out.diffusion_series.assign(static_cast<size_t>(M),
                                std::vector<double>(static_cast<size_t>(sc.steps), sc.diffusion));
    for (const auto& c : sc.changes) {
        for (int64_t t = c.start; t < sc.steps; ++t)
            out.diffusion_series[static_cast<size_t>(c.edge)][static_cast<size_t>(t)] = c.value;
    }

    std::mt19937_64 rng(sc.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    out.series.assign(static_cast<size_t>(sc.steps * N), 0.0);
    std::vector<double> anomaly(static_cast<size_t>(N), 0.0);       // x - (mean + seasonal)
    std::vector<double> anomaly_prev(static_cast<size_t>(N), 0.0);
    for (int64_t t = 0; t < sc.steps; ++t) {
        const auto& reg = sc.regimes[static_cast<size_t>(out.regime_per_step[static_cast<size_t>(t)])];
        std::swap(anomaly_prev, anomaly);
        for (int64_t n = 0; n < N; ++n) {
            double phase = 2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(N);
            double season = reg.amplitude *
                            std::sin(2.0 * std::numbers::pi * static_cast<double>(t % sc.period) /
                                         static_cast<double>(sc.period) +
                                     phase);
            double a = reg.ar * anomaly_prev[static_cast<size_t>(n)] + sc.noise * gauss(rng);
            anomaly[static_cast<size_t>(n)] = a;
            out.series[static_cast<size_t>(t * N + n)] = reg.mean + season + a;
        }
        if (t > 0) {
            // directed anomaly diffusion: each edge carries part of its
            // source's previous anomaly into its destination
            for (int64_t j = 0; j < M; ++j) {
                const auto& e = out.graph.edges[static_cast<size_t>(j)];
                double c = out.diffusion_series[static_cast<size_t>(j)][static_cast<size_t>(t)];
                double carried = c * anomaly_prev[static_cast<size_t>(e.src)];
                anomaly[static_cast<size_t>(e.dst)] += carried;
                out.series[static_cast<size_t>(t * N + e.dst)] += carried;
            }
        }
    }
    return out;
}

DatasetManifest write_synthetic_dataset(const SyntheticData& data, const SyntheticScenario& sc,
                                        const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const int64_t N = data.graph.node_count;

    {
        std::ofstream sig(fs::path(dir) / "signal.csv");
        sig << "timestamp";
        for (int64_t n = 0; n < N; ++n) sig << ",node" << n;
        sig << "\n";
        char buf[64];
        for (int64_t t = 0; t < static_cast<int64_t>(data.series.size()) / N; ++t) {
            sig << t;
            for (int64_t n = 0; n < N; ++n) {
                std::snprintf(buf, sizeof(buf), ",%.17g", data.series[static_cast<size_t>(t * N + n)]);
                sig << buf;
            }
            sig << "\n";
        }
    }
    {
        std::ofstream coords(fs::path(dir) / "coords.csv");
        char buf[96];
        for (const auto& c : data.graph.coords) {
            std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", c[0], c[1]);
            coords << buf;
        }
    }
    {
        std::ofstream edges(fs::path(dir) / "edges.txt");
        for (const auto& e : data.graph.edges) edges << e.src << " " << e.dst << "\n";
    }
    {
        json truth;
        truth["regimes"] = data.regime_per_step;
        truth["diffusion"] = data.diffusion_series;
        std::ofstream tf(fs::path(dir) / "truth.json");
        tf << truth.dump() << "\n";
    }

    DatasetManifest m;
    m.name = sc.name;
    m.signal_path = (fs::path(dir) / "signal.csv").string();
    m.coords_path = (fs::path(dir) / "coords.csv").string();
    m.edges_path = (fs::path(dir) / "edges.txt").string();
    m.split = sc.split;
    m.distance = "euclidean";
    m.T = sc.T;
    m.S = sc.S;
    m.tau = sc.tau;
    write_manifest(m, (fs::path(dir) / "manifest.json").string());
    return m;
}

Dataset dataset_from_synthetic(const SyntheticData& data, const SyntheticScenario& sc) {
    Dataset d;
    d.manifest.name = sc.name;
    d.manifest.split = sc.split;
    d.manifest.T = sc.T;
    d.manifest.S = sc.S;
    d.manifest.tau = sc.tau;
    d.graph = data.graph;
    d.nodes = data.graph.node_count;
    d.steps = static_cast<int64_t>(data.series.size()) / d.nodes;
    d.raw = data.series;
    d.regime_truth = data.regime_per_step;
    finalize_dataset(d);
    return d;
}

}  // namespace cast
