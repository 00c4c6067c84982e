#pragma once

#include <cstddef>
#include <vector>

#include "stap/rng.hpp"
#include "stap/tensor.hpp"

namespace stap {

// ---------------------------------------------------------------------------
// Frame scoring: per-frame importance from inter-frame variation plus a
// tanh(LN(.)) global anchor over the importance-weighted frame mean.
// ---------------------------------------------------------------------------

struct FrameScoringParams {
    Param w1;        // [n_h, d_v]
    Param b1;        // [n_h]
    Param w2;        // [n_h], single output row
    Param b2;        // [1]
    Param ln_gamma;  // [d_v]
    Param ln_beta;   // [d_v]

    static FrameScoringParams init(std::size_t d_v, std::size_t n_h, Rng& rng);
    std::vector<Param*> params();
};

struct FrameScoreOutput {
    Tensor pre_scores;  // u, [T]
    Tensor weights;     // w = sigmoid(u), [T]
    Tensor anchor;      // [d_v]
};

struct FrameScoreCache {
    bool scoring_enabled = true;
    Tensor deltas;  // [T, d_v], delta x_1 = 0
    Tensor z;       // [T, n_h] pre-activation
    Tensor act;     // [T, n_h] GELU(z)
    Tensor u;       // [T]
    Tensor w;       // [T]
    double wsum = 0.0;
    Tensor wmean;   // [d_v] weighted mean fed to LN
    Tensor anchor;  // [d_v]
};

FrameScoreOutput score_frames(const Tensor& frames, FrameScoringParams& p,
                              FrameScoreCache& cache);

/// Importance-free variant used by the no-frame-scoring ablation: w = 0.5,
/// anchor = tanh(LN(mean frames)) with unit affine.
FrameScoreOutput score_frames_disabled(const Tensor& frames, FrameScoreCache& cache);

/// Accumulates parameter grads; adds the frame gradient into dframes.
void score_frames_backward(const Tensor& frames, FrameScoringParams* p,
                           const FrameScoreCache& cache, const Tensor& dweights,
                           const Tensor& danchor, Tensor& dframes);

// ---------------------------------------------------------------------------
// Selective SSM scan with a dynamic per-frame step size.
// ---------------------------------------------------------------------------

enum class DeltaMode { score, anchor };
enum class ScanDirection { forward, backward };

struct SsmConfig {
    std::size_t d_h = 16;
    double delta_base = 0.2;
    double alpha = 1.0;
    double rho = 0.5;        // anchor-mode weight on the frame score
    double delta_min = 0.01;
    double delta_max = 1.0;
    DeltaMode mode = DeltaMode::score;

    void validate() const;
};

struct SsmParams {
    Param lambda_raw;  // [d_h]; softplus keeps decay rates positive
    Param b;           // [d_h, d_v]
    Param c;           // [d_v, d_h]
    Param d;           // [d_v] diagonal skip, initialized to 1

    static SsmParams init(std::size_t d_v, std::size_t d_h, Rng& rng);
    std::vector<Param*> params();
};

struct SsmScanCache {
    ScanDirection dir = ScanDirection::forward;
    Tensor lambda;               // [d_h]
    std::vector<double> delta;   // [T] in scan order
    std::vector<char> clamped;   // [T]
    Tensor decay;                // [T, d_h] in scan order
    Tensor bx;                   // [T, d_h] in scan order
    Tensor h;                    // [T, d_h] in scan order
};

/// h_t = exp(-delta_t * lambda) (.) h_{t-1} + delta_t * (B x_t);
/// y_t = C h_t + D (.) x_t. The backward direction runs the same recurrence
/// over the reversed sequence and reverses its output.
Tensor ssm_scan(const Tensor& frames, const Tensor& weights, const Tensor& anchor,
                SsmParams& p, const SsmConfig& cfg, ScanDirection dir,
                SsmScanCache& cache);

void ssm_scan_backward(const Tensor& frames, const Tensor& weights, const Tensor& anchor,
                       SsmParams& p, const SsmConfig& cfg, const SsmScanCache& cache,
                       const Tensor& dy, Tensor& dframes, Tensor& dweights,
                       Tensor& danchor);

struct BidirectionalCache {
    SsmScanCache fwd, bwd;
};

/// Elementwise sum of the forward and backward scans.
Tensor bidirectional_ssm(const Tensor& frames, const Tensor& weights, const Tensor& anchor,
                         SsmParams& p, const SsmConfig& cfg, BidirectionalCache& cache);

void bidirectional_ssm_backward(const Tensor& frames, const Tensor& weights,
                                const Tensor& anchor, SsmParams& p, const SsmConfig& cfg,
                                const BidirectionalCache& cache, const Tensor& dy,
                                Tensor& dframes, Tensor& dweights, Tensor& danchor);

// ---------------------------------------------------------------------------
// Content-adaptive sparse attention: window radius grows with frame norm.
// ---------------------------------------------------------------------------

struct SparseAttnConfig {
    std::size_t d_a = 16;
    double w_base = 8.0;  // base half-window, frames
    double beta = 0.25;   // frames of extra radius per unit feature norm
};

struct SparseAttnParams {
    Param wq, wk, wv;  // [d_a, d_v]
    Param wo;          // [d_v, d_a], projects context back to d_v

    static SparseAttnParams init(std::size_t d_v, std::size_t d_a, Rng& rng);
    std::vector<Param*> params();
};

/// win_t = clamp(round(w_base + beta * ||x_t||_2), 1, T); ties at .5 round
/// away from zero.
std::size_t adaptive_window(double w_base, double beta, double frame_norm, std::size_t t_len);

struct SparseAttnCache {
    std::vector<std::size_t> win, lo, hi;    // per-frame neighborhood
    Tensor q, k, val;                        // [T, d_a]
    std::vector<std::vector<double>> probs;  // ragged attention rows
    Tensor ctx;                              // [T, d_a]
};

Tensor sparse_attention(const Tensor& frames, SparseAttnParams& p,
                        const SparseAttnConfig& cfg, SparseAttnCache& cache);

void sparse_attention_backward(const Tensor& frames, SparseAttnParams& p,
                               const SparseAttnCache& cache, const Tensor& dy,
                               Tensor& dframes);

// ---------------------------------------------------------------------------
// Gated residual fusion of the two pathways plus the anchor.
// ---------------------------------------------------------------------------

struct GatedFusionParams {
    Param wg;    // [3, 3*d_v] gate logits from [mean ssm; mean attn; anchor]
    Param wres;  // [d_v, d_v]
    Param bres;  // [d_v]

    static GatedFusionParams init(std::size_t d_v, Rng& rng);
    std::vector<Param*> params();
};

struct GatedFusionCache {
    Tensor feat;    // [3*d_v]
    Tensor gates;   // [3]
};

struct TemporalOutput {
    Tensor v_seq;   // [T, d_v]
    Tensor v;       // [d_v] mean over time
    Tensor gates;   // [3] (gamma_s, gamma_a, gamma_g)
    Tensor y_ssm;   // [T, d_v]
    Tensor y_attn;  // [T, d_v]
};

void gated_fusion(const Tensor& frames, const Tensor& y_ssm, const Tensor& y_attn,
                  const Tensor& anchor, GatedFusionParams& p, GatedFusionCache& cache,
                  TemporalOutput& out);

void gated_fusion_backward(const Tensor& frames, const Tensor& y_ssm, const Tensor& y_attn,
                           const Tensor& anchor, GatedFusionParams& p,
                           const GatedFusionCache& cache, const Tensor& dv_seq,
                           const Tensor& dv, Tensor& dframes, Tensor& dy_ssm,
                           Tensor& dy_attn, Tensor& danchor);

// ---------------------------------------------------------------------------
// Whole temporal stage.
// ---------------------------------------------------------------------------

struct TemporalConfig {
    std::size_t d_v = 16;
    std::size_t score_hidden = 16;
    SsmConfig ssm;
    SparseAttnConfig attn;
    bool use_scoring = true;
    bool use_ssm = true;
    bool use_attn = true;
};

struct TemporalCache {
    FrameScoreCache score;
    BidirectionalCache ssm;
    SparseAttnCache attn;
    GatedFusionCache fusion;
    TemporalOutput out;
};

struct TemporalModule {
    TemporalConfig cfg;
    FrameScoringParams scoring;
    SsmParams ssm;
    SparseAttnParams attn;
    GatedFusionParams fusion;

    static TemporalModule init(const TemporalConfig& cfg, Rng& rng);
    /// Trainable parameters of the active pathways only.
    std::vector<Param*> params();

    TemporalOutput forward(const Tensor& frames, TemporalCache& cache);
    /// Accumulates parameter grads; returns the frame gradient.
    Tensor backward(const Tensor& frames, const TemporalCache& cache, const Tensor& dv_seq,
                    const Tensor& dv);
};

}  // namespace stap
