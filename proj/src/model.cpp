#include "cast/model.hpp"

#include <nlohmann/json.hpp>

namespace cast {

using json = nlohmann::json;

void ModelConfig::validate() const {
    if (F < 1 || K < 1 || U < 1 || K_b < 1 || D_p < 1 || backbone_layers < 1) {
        throw ContractError("model config: structural sizes must be positive");
    }
    if (S_k < 0) throw ContractError("model config: S_k must be >= 0");
    if (alpha < 0.0 || beta < 0.0) throw ContractError("model config: alpha, beta must be >= 0");
    if (lr <= 0.0 || batch_size < 1 || epochs < 1) {
        throw ContractError("model config: lr, batch_size, epochs must be positive");
    }
    if (soft_temperature <= 0.0) throw ContractError("model config: soft_temperature must be > 0");
    if (mi_mode != "adversarial" && mi_mode != "as_printed") {
        throw ContractError("model config: mi_mode must be 'adversarial' or 'as_printed'");
    }
}

ModelConfig model_config_from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.F = j.value("F", c.F);
    c.K = j.value("K", c.K);
    c.U = j.value("U", c.U);
    c.K_b = j.value("K_b", c.K_b);
    c.S_k = j.value("S_k", c.S_k);
    c.D_p = j.value("D_p", c.D_p);
    c.backbone_layers = j.value("backbone_layers", c.backbone_layers);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.soft_temperature = j.value("soft_temperature", c.soft_temperature);
    c.seed = j.value("seed", c.seed);
    c.mi_mode = j.value("mi_mode", c.mi_mode);
    c.laplacian_scale = j.value("laplacian_scale", c.laplacian_scale);
    c.identical_codebook_init = j.value("identical_codebook_init", c.identical_codebook_init);
    c.patience = j.value("patience", c.patience);
    c.use_env = j.value("use_env", c.use_env);
    c.max_batches_per_epoch = j.value("max_batches_per_epoch", c.max_batches_per_epoch);
    c.validate();
    return c;
}

std::string model_config_to_json(const ModelConfig& c) {
    json j;
    j["F"] = c.F;
    j["K"] = c.K;
    j["U"] = c.U;
    j["K_b"] = c.K_b;
    j["S_k"] = c.S_k;
    j["D_p"] = c.D_p;
    j["backbone_layers"] = c.backbone_layers;
    j["alpha"] = c.alpha;
    j["beta"] = c.beta;
    j["lr"] = c.lr;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["soft_temperature"] = c.soft_temperature;
    j["seed"] = c.seed;
    j["mi_mode"] = c.mi_mode;
    j["laplacian_scale"] = c.laplacian_scale;
    j["identical_codebook_init"] = c.identical_codebook_init;
    j["patience"] = c.patience;
    j["use_env"] = c.use_env;
    j["max_batches_per_epoch"] = c.max_batches_per_epoch;
    return j.dump(2);
}

CastModel::CastModel(const ModelConfig& c, const STGraph& g, int64_t t_len, int64_t s_len,
                     int64_t d_in, int64_t f_edge)
    : cfg(c), T(t_len), S(s_len), D(d_in), D_out(d_in), graph(g) {
    cfg.validate();
    graph.validate();
    std::mt19937_64 rng(cfg.seed);

    DisentanglerConfig dc;
    dc.F = cfg.F;
    dc.S_k = cfg.S_k;
    dc.T = T;
    dc.D = D;
    dc.backbone_layers = cfg.backbone_layers;
    backbone = TcnBackbone(dc, rng);
    env_encoder = EnvEncoder(dc, rng);
    ent_encoder = EntEncoder(dc, rng);

    codebook = Codebook(cfg.K, cfg.F, rng, cfg.identical_codebook_init);

    DeconfounderConfig xc;
    xc.F = cfg.F;
    xc.F_edge = f_edge;
    xc.U = cfg.U;
    xc.K_b = cfg.K_b;
    xc.D_p = cfg.D_p;
    xc.laplacian_scale = cfg.laplacian_scale;
    deconfounder = Deconfounder(graph, xc, rng);

    predictor = nn::Mlp("predictor", {2 * cfg.F, cfg.F, cfg.F, S * D_out}, rng);
    classifier = nn::Mlp("classifier", {cfg.F, cfg.F, cfg.F, cfg.K}, rng);
}

ForwardResult CastModel::forward(Tape& t, Binder& bind, const Tensor& X, const Tensor& x_ed,
                                 Mode mode) {
    if (X.rank() != 4) {
        throw ShapeError("forward/backbone: expected X [B,T,N,D], got " + shape_str(X.shape()));
    }
    if (X.shape()[1] != T || X.shape()[2] != graph.node_count || X.shape()[3] != D) {
        throw ShapeError("forward/backbone: X " + shape_str(X.shape()) +
                         " does not match configured [*, " + std::to_string(T) + ", " +
                         std::to_string(graph.node_count) + ", " + std::to_string(D) + "]");
    }
    int64_t B = X.shape()[0];

    ForwardResult r;
    Tensor h = backbone.forward(bind, X);        // [B,T,N,F]
    r.h_e = env_encoder.forward(bind, h);        // [B,N,F]
    r.h_i = ent_encoder.forward(bind, h);        // [B,N,F]

    if (mode == Mode::kTrain) {
        auto [quantized, assign] = quantize_hard(bind, r.h_e, codebook);
        r.h_e_hat = quantized;
        r.assign = std::move(assign);
    } else {
        auto [quantized, q] = quantize_soft(bind, r.h_e, codebook, cfg.soft_temperature);
        r.h_e_hat = quantized;
        r.q_soft = q;
    }

    auto deconf = deconfounder.forward(t, bind, r.h_i, x_ed);
    r.h_i_hat = deconf.surrogate;
    r.a_cau = deconf.a_cau;

    Tensor env_for_pred = cfg.use_env ? r.h_e_hat : zeros(t, r.h_e_hat.shape());
    Tensor joint = concat({env_for_pred, r.h_i_hat}, -1);     // [B,N,2F]
    Tensor flat_pred = predictor.forward(bind, joint);        // [B,N,S*D']
    Tensor staged = reshape(flat_pred, Shape{B, graph.node_count, S, D_out});
    r.y_hat = permute(staged, {0, 2, 1, 3});                  // [B,S,N,D']

    Tensor cls_in = reshape(r.h_i_hat, Shape{B * graph.node_count, cfg.F});
    bool adversarial = cfg.mi_mode == "adversarial";
    // MI path: gradients shape the features, not the classifier
    r.z_hat_mi = softmax(classifier.forward(bind, cls_in, /*frozen_params=*/adversarial), -1);
    // classifier's own update happens on stop-gradient features
    r.z_hat_cls = softmax(classifier.forward(bind, detach(cls_in)), -1);
    return r;
}

std::vector<Param*> CastModel::parameters() {
    std::vector<Param*> out;
    backbone.params(out);
    env_encoder.params(out);
    ent_encoder.params(out);
    codebook.params(out);
    deconfounder.params(out);
    predictor.params(out);
    classifier.params(out);
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor prediction_loss(const Tensor& y_hat, const Tensor& y) {
    if (y_hat.shape() != y.shape()) {
        throw ShapeError("prediction_loss: shapes differ: " + shape_str(y_hat.shape()) + " vs " +
                         shape_str(y.shape()));
    }
    return mean_all(abs_(sub(y_hat, y)));
}

namespace {

Tensor one_hot(Tape& t, const std::vector<int64_t>& z, int64_t k) {
    std::vector<double> buf(z.size() * static_cast<size_t>(k), 0.0);
    for (size_t i = 0; i < z.size(); ++i)
        buf[i * static_cast<size_t>(k) + static_cast<size_t>(z[i])] = 1.0;
    return t.leaf(Shape{static_cast<int64_t>(z.size()), k}, buf, false);
}

}  // namespace

Tensor mi_loss(Tape& t, const std::vector<int64_t>& z, const Tensor& z_hat, int64_t k) {
    if (z_hat.rank() != 2 || z_hat.shape()[0] != static_cast<int64_t>(z.size()) ||
        z_hat.shape()[1] != k) {
        throw ShapeError("mi_loss: classifier output " + shape_str(z_hat.shape()) +
                         " does not align with " + std::to_string(z.size()) + " labels");
    }
    Tensor zt = one_hot(t, z, k);
    Tensor log_q = log_(clamp_min(z_hat, 1e-12));
    return scale(sum_all(mul(zt, log_q)), 1.0 / static_cast<double>(z.size()));
}

Tensor cross_entropy(Tape& t, const std::vector<int64_t>& z, const Tensor& z_hat, int64_t k) {
    return neg(mi_loss(t, z, z_hat, k));
}

LossTensors total_loss(Tape& t, Binder& bind, CastModel& model, const ForwardResult& fwd,
                       const Tensor& y) {
    LossTensors out;
    out.pre = prediction_loss(fwd.y_hat, y);
    out.cod = codebook_loss(bind, fwd.h_e, fwd.assign, model.codebook, model.cfg.alpha);
    out.mi = mi_loss(t, fwd.assign.index, fwd.z_hat_mi, model.cfg.K);
    out.total = add(add(out.pre, out.cod), scale(out.mi, model.cfg.beta));
    if (model.cfg.mi_mode == "adversarial") {
        Tensor ce = cross_entropy(t, fwd.assign.index, fwd.z_hat_cls, model.cfg.K);
        out.objective = add(out.total, ce);
    } else {
        out.objective = out.total;
    }
    return out;
}

LossBreakdown LossTensors::values() const {
    LossBreakdown b;
    b.pre = pre.item();
    b.cod = cod.item();
    b.mi = mi.item();
    b.total = total.item();
    return b;
}

}  // namespace cast
