#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stap/memory.hpp"
#include "stap/rng.hpp"
#include "stap/temporal.hpp"
#include "stap/tensor.hpp"

namespace stap {

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct SampleBatch {
    std::vector<Tensor> frames;  // each [T, d_v]
    std::vector<Tensor> text;    // each [L, d_t]
    std::vector<Tensor> meta;    // each [d_u]
    std::vector<double> labels;

    std::size_t size() const { return frames.size(); }
    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double reg = 0.0;
    double pref = 0.0;
    double balance = 0.0;
    double lambda_pref = 0.0;
    double lambda_bal = 0.0;
};

// ---------------------------------------------------------------------------
// Cross-attention and prediction head
// ---------------------------------------------------------------------------

struct CrossAttnLayerParams {
    Param wq_t, wk_t, wv_t;  // text stream attended by the pooled visual query
    Param wq_v, wk_v, wv_v;  // visual stream attended by the pooled text query
};

struct PredictorParams {
    Param wv_in;  // [d_c, d_v]
    Param wt_in;  // [d_c, d_t]
    Param wu_in;  // [d_c, d_u]
    std::vector<CrossAttnLayerParams> layers;
    Param wr, br;                // [d_c, d_m+1], [d_c]
    Param head_w1, head_b1;      // [hidden, 6*d_c], [hidden]
    Param head_w2, head_b2;      // [hidden], [1]

    static PredictorParams init(std::size_t d_v, std::size_t d_t, std::size_t d_u,
                                std::size_t d_m, std::size_t d_c, std::size_t l_ca,
                                std::size_t head_hidden, Rng& rng);
    std::vector<Param*> params(bool include_retrieval);
};

struct CrossAttnLayerCache {
    Tensor v_in, t_in;    // layer inputs
    Tensor v_pool, t_pool;
    Tensor qt, kt, vt;    // visual-pooled query over text keys/values
    Tensor probs_t, ot;
    Tensor qv, kv, vv;    // text-pooled query over visual keys/values
    Tensor probs_v, ov;
    Tensor t_res, v_res;  // pre-norm residual rows
};

struct CrossAttnCache {
    std::vector<CrossAttnLayerCache> layers;
    Tensor v_final, t_final;
    Tensor v_star, t_star;
};

/// Bi-directional pooled-query cross-attention over pre-projected sequences;
/// per layer, each stream adds the attended vector as a broadcast residual
/// followed by per-token non-affine layer norm. Final vectors are the pooled
/// streams.
void cross_attention(const Tensor& v_seq, const Tensor& t_seq, PredictorParams& p,
                     std::size_t l_ca, CrossAttnCache& cache);

/// Returns gradients w.r.t. the projected input sequences.
void cross_attention_backward(PredictorParams& p, const CrossAttnCache& cache,
                              const Tensor& dv_star, const Tensor& dt_star,
                              Tensor& dv_seq, Tensor& dt_seq);

struct PredictCache {
    Tensor u_proj;
    Tensor rin;   // [z_aug; c_pop]
    Tensor r_pre, r;
    Tensor h;     // [6*d_c]
    Tensor z1, a1;
    double pred = 0.0;
};

/// R = ReLU(W_R [z_aug; c_pop] + b_R); H = [V*; T*; U'; R; V*.R; T*.R];
/// prediction by a 2-layer GELU MLP. With use_retrieval=false, R is the zero
/// vector and the retrieval projection is bypassed.
double assemble_and_predict(const Tensor& v_star, const Tensor& t_star, const Tensor& u,
                            const Tensor& z_aug, double c_pop, PredictorParams& p,
                            bool use_retrieval, PredictCache& cache);

struct PredictGrads {
    Tensor dv_star, dt_star, du, dz_aug;
    double dc_pop = 0.0;
};

PredictGrads assemble_and_predict_backward(const Tensor& v_star, const Tensor& t_star,
                                           const Tensor& u, PredictorParams& p,
                                           bool use_retrieval, const PredictCache& cache,
                                           double dpred);

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

struct ModelConfig {
    TemporalConfig temporal;
    std::size_t d_t = 16;
    std::size_t d_u = 4;
    std::size_t d_m = 32;
    std::size_t d_c = 32;   // common predictor width d'
    std::size_t l_ca = 2;
    std::size_t head_hidden = 32;
    std::size_t p_count = 6;
    std::size_t c_count = 4;
    std::size_t k_top = 3;
    double tau_init = 1.0;
    double tau_min = 0.1;
    double tau_max = 5.0;
    BalanceConfig balance;
    double lambda_bal = 1.0;
    double lambda_pref = 0.10;
    double gamma_pref = 0.5;
    double margin_scale = 0.25;
    double eta = 0.05;
    double lr = 1e-2;
    double weight_decay = 1e-5;
    bool use_memory = true;
    bool use_balance = true;
    bool use_dppo = true;
    bool renorm_topk = false;

    std::size_t d_q() const { return temporal.d_v + d_t + d_u; }
    void validate() const;
};

struct ItemCache {
    TemporalCache temporal;
    Tensor query;          // routing query [V; mean text; U]
    RouteCache route;
    Tensor v_seq_proj, t_seq_proj;
    CrossAttnCache cross;
    PredictCache predict;
};

struct BatchCache {
    std::vector<ItemCache> items;
    Tensor preds;     // [B]
    Tensor batch_pi;  // [B, P, C] when memory is active
    std::vector<PrefPair> pairs;
    LossBreakdown loss;
};

struct StapModel {
    ModelConfig cfg;
    TemporalModule temporal;
    RoutingParams routing;
    PredictorParams predictor;
    MemoryBank bank;
    bool bank_ready = false;

    static StapModel init(const ModelConfig& cfg, Rng& rng);

    /// Trainable parameters of the active configuration (bank.m included).
    std::vector<Param*> params();
    /// Every parameter regardless of ablation flags, for serialization.
    std::vector<Param*> all_params();
    void zero_grad();

    /// Projected routing embedding q' for a raw query, as used by route().
    Tensor project_query(const Tensor& query) const;

    double predict_item(const Tensor& frames, const Tensor& text, const Tensor& meta,
                        ItemCache& cache);
    LossBreakdown forward_loss(const SampleBatch& batch, BatchCache& cache);
    void backward_loss(const SampleBatch& batch, BatchCache& cache);
    /// zero grads -> forward -> backward -> SGD step -> bank EMA/tau update.
    /// `out`, when given, receives the step's forward caches (routing included).
    LossBreakdown train_step(const SampleBatch& batch, BatchCache* out = nullptr);

    /// Names of params whose gradient is identically zero on this batch.
    std::vector<std::string> dead_params(const SampleBatch& batch);
};

/// Builds the bank by routing-projecting every item's query through the
/// current parameters and running quantile + k-means initialization.
void init_model_bank(StapModel& model, const SampleBatch& items, std::uint64_t seed);

}  // namespace stap
