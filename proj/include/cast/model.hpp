#pragma once

#include "cast/codebook.hpp"
#include "cast/data.hpp"
#include "cast/deconfounder.hpp"
#include "cast/disentangler.hpp"

namespace cast {

struct ModelConfig {
    int64_t F = 16;               // hidden width
    int64_t K = 4;                // codebook size (environment count)
    int64_t U = 3;                // spectral polynomial order
    int64_t K_b = 2;              // GCN depth
    int64_t S_k = 3;              // env-encoder kernel exponents 0..S_k
    int64_t D_p = 4;              // position embedding width
    int64_t backbone_layers = 2;
    double alpha = 0.5;           // commitment weight in the codebook loss
    double beta = 0.5;            // mutual-information loss weight
    double lr = 1e-3;
    int64_t batch_size = 64;
    int64_t epochs = 30;
    double soft_temperature = 1.0;
    uint64_t seed = 1;

    // extensions
    std::string mi_mode = "adversarial";  // or "as_printed"
    double laplacian_scale = 1.0;
    bool identical_codebook_init = false;
    int64_t patience = 10;
    bool use_env = true;                  // false reproduces the env-ablated variant
    int64_t max_batches_per_epoch = 0;    // 0 = every window each epoch

    void validate() const;
};

ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& c);

enum class Mode { kTrain, kTest };  // hard vs soft environment assignment

struct ForwardResult {
    Tensor y_hat;        // [B,S,N,D']
    Tensor h_e;          // [B,N,F] pre-quantization environment feature
    Tensor h_e_hat;      // [B,N,F] quantized environment representation
    Tensor h_i;          // [B,N,F] entity feature
    Tensor h_i_hat;      // [B,N,F] surrogate
    Tensor a_cau;        // [B,M,K_b]
    HardAssignment assign;  // train mode
    Tensor q_soft;       // test mode assignment probabilities [B,N,K]
    Tensor z_hat_mi;     // classifier probs feeding the MI term [B*N,K]
    Tensor z_hat_cls;    // classifier probs on detached features [B*N,K]
};

/// The full forecasting model: backbone encoder, environment disentangler
/// with a quantized codebook, edge-level deconfounder, and MLP heads.
struct CastModel {
    ModelConfig cfg;
    int64_t T = 24, S = 12, D = 1, D_out = 1;
    STGraph graph;

    TcnBackbone backbone;
    EnvEncoder env_encoder;
    EntEncoder ent_encoder;
    Codebook codebook;
    Deconfounder deconfounder;
    nn::Mlp predictor;   // [h_e_hat || h_i_hat] -> S*D_out per node
    nn::Mlp classifier;  // h_i_hat -> K logits

    CastModel() = default;
    CastModel(const ModelConfig& cfg, const STGraph& graph, int64_t T, int64_t S, int64_t D,
              int64_t F_edge);

    /// X [B,T,N,D], x_ed [B,M,F'].
    ForwardResult forward(Tape& t, Binder& bind, const Tensor& X, const Tensor& x_ed,
                          Mode mode);

    /// Stable registration order (drives optimizer state and checkpoints).
    std::vector<Param*> parameters();
};

struct LossBreakdown {
    double pre = 0.0;
    double cod = 0.0;
    double mi = 0.0;
    double total = 0.0;
};

struct LossTensors {
    Tensor pre;
    Tensor cod;
    Tensor mi;
    Tensor total;      // pre + cod + beta*mi
    Tensor objective;  // total plus the classifier's own cross-entropy step
    LossBreakdown values() const;
};

/// Mean absolute error (the Laplace negative log-likelihood up to a constant).
Tensor prediction_loss(const Tensor& y_hat, const Tensor& y);

/// MI surrogate as printed: mean over rows of sum_k z_k log q_k (no leading
/// minus). `z_hat` rows are clamped at 1e-12 before the log.
Tensor mi_loss(Tape& t, const std::vector<int64_t>& z, const Tensor& z_hat, int64_t k);

/// Standard cross-entropy used for the classifier's own update.
Tensor cross_entropy(Tape& t, const std::vector<int64_t>& z, const Tensor& z_hat, int64_t k);

/// Assemble the three-part loss with the gradient routing described on the
/// components; in adversarial mode the classifier trains on a separate
/// cross-entropy over stop-gradient features within the same objective.
LossTensors total_loss(Tape& t, Binder& bind, CastModel& model, const ForwardResult& fwd,
                       const Tensor& y);

}  // namespace cast
