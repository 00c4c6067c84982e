#include "stap/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "stap/kernels.hpp"

namespace stap {

namespace {

void check_frames(const Tensor& frames, std::size_t d_v, const char* where) {
    if (frames.rank() != 2 || frames.dim(1) != d_v)
        throw ShapeError(std::string(where) + ": frames must be [T, d_v], got " +
                         frames.shape_str());
    if (frames.dim(0) == 0)
        throw ShapeError(std::string(where) + ": empty sequence");
}

}  // namespace

// --------------------------------------------------------------------------
// Frame scoring
// --------------------------------------------------------------------------

FrameScoringParams FrameScoringParams::init(std::size_t d_v, std::size_t n_h, Rng& rng) {
    FrameScoringParams p;
    p.w1 = Param{"scoring.w1", init_weight(rng, n_h, d_v)};
    p.b1 = Param{"scoring.b1", Tensor({n_h})};
    p.w2 = Param{"scoring.w2", init_weight(rng, 1, n_h)};
    p.w2.value.shape = {n_h};
    p.w2.grad.shape = {n_h};
    p.b2 = Param{"scoring.b2", Tensor({1})};
    Tensor gamma({d_v});
    gamma.fill(1.0);
    p.ln_gamma = Param{"scoring.ln_gamma", gamma};
    p.ln_beta = Param{"scoring.ln_beta", Tensor({d_v})};
    return p;
}

std::vector<Param*> FrameScoringParams::params() {
    return {&w1, &b1, &w2, &b2, &ln_gamma, &ln_beta};
}

FrameScoreOutput score_frames(const Tensor& frames, FrameScoringParams& p,
                              FrameScoreCache& cache) {
    const std::size_t d_v = p.w1.value.dim(1);
    const std::size_t n_h = p.w1.value.dim(0);
    check_frames(frames, d_v, "score_frames");
    const std::size_t t_len = frames.dim(0);

    cache.scoring_enabled = true;
    cache.deltas = Tensor({t_len, d_v});
    cache.z = Tensor({t_len, n_h});
    cache.act = Tensor({t_len, n_h});
    cache.u = Tensor({t_len});
    cache.w = Tensor({t_len});

    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t j = 0; j < d_v; ++j)
            cache.deltas.at(t, j) = t == 0 ? 0.0 : frames.at(t, j) - frames.at(t - 1, j);
        double u_t = p.b2.value.v[0];
        for (std::size_t h = 0; h < n_h; ++h) {
            double z = p.b1.value.v[h];
            for (std::size_t j = 0; j < d_v; ++j)
                z += p.w1.value.at(h, j) * cache.deltas.at(t, j);
            cache.z.at(t, h) = z;
            const double a = gelu_s(z);
            cache.act.at(t, h) = a;
            u_t += p.w2.value.v[h] * a;
        }
        cache.u.v[t] = u_t;
        cache.w.v[t] = sigmoid_s(u_t);
    }

    cache.wsum = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) cache.wsum += cache.w.v[t];
    const double denom = cache.wsum + 1e-8;
    cache.wmean = Tensor({d_v});
    for (std::size_t j = 0; j < d_v; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < t_len; ++t) s += cache.w.v[t] * frames.at(t, j);
        cache.wmean.v[j] = s / denom;
    }
    cache.anchor = tanh(layer_norm(cache.wmean, p.ln_gamma.value, p.ln_beta.value));

    return FrameScoreOutput{cache.u, cache.w, cache.anchor};
}

FrameScoreOutput score_frames_disabled(const Tensor& frames, FrameScoreCache& cache) {
    if (frames.rank() != 2 || frames.dim(0) == 0)
        throw ShapeError("score_frames_disabled: frames must be [T, d_v], got " +
                         frames.shape_str());
    const std::size_t t_len = frames.dim(0);
    const std::size_t d_v = frames.dim(1);

    cache.scoring_enabled = false;
    cache.u = Tensor({t_len});
    cache.w = Tensor({t_len});
    cache.w.fill(0.5);
    cache.wsum = 0.5 * static_cast<double>(t_len);
    cache.wmean = mean_pool_rows(frames);
    Tensor unit({d_v});
    unit.fill(1.0);
    cache.anchor = tanh(layer_norm(cache.wmean, unit, Tensor({d_v})));
    return FrameScoreOutput{cache.u, cache.w, cache.anchor};
}

void score_frames_backward(const Tensor& frames, FrameScoringParams* p,
                           const FrameScoreCache& cache, const Tensor& dweights,
                           const Tensor& danchor, Tensor& dframes) {
    const std::size_t t_len = frames.dim(0);
    const std::size_t d_v = frames.dim(1);
    require_same_shape(dframes, frames, "score_frames_backward");

    // anchor = tanh(LN(wmean)); unwind to a gradient on wmean.
    Tensor unit({d_v});
    unit.fill(1.0);
    const Tensor& gamma = cache.scoring_enabled ? p->ln_gamma.value : unit;
    const Tensor beta_zero({d_v});
    const Tensor& beta = cache.scoring_enabled ? p->ln_beta.value : beta_zero;
    const Tensor normed = layer_norm(cache.wmean, gamma, beta);
    const Tensor dnormed = tanh_vjp(normed, danchor);
    LayerNormGrads ln = layer_norm_vjp(cache.wmean, gamma, beta, kLayerNormEps, dnormed);
    if (cache.scoring_enabled) {
        add_inplace(p->ln_gamma.grad, ln.dgamma);
        add_inplace(p->ln_beta.grad, ln.dbeta);
    }

    const double denom = cache.scoring_enabled ? cache.wsum + 1e-8
                                               : static_cast<double>(t_len);
    Tensor dw_total = dweights;  // [T]; accumulate the anchor path below
    if (!cache.scoring_enabled) {
        // wmean is a plain mean; only the frame gradient survives.
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t j = 0; j < d_v; ++j)
                dframes.at(t, j) += ln.dx.v[j] / denom;
        return;
    }

    // wmean_j = sum_t w_t x_tj / (sum_t w_t + eps)
    for (std::size_t t = 0; t < t_len; ++t) {
        double g = 0.0;
        for (std::size_t j = 0; j < d_v; ++j) {
            dframes.at(t, j) += ln.dx.v[j] * cache.w.v[t] / denom;
            g += ln.dx.v[j] * (frames.at(t, j) - cache.wmean.v[j]) / denom;
        }
        dw_total.v[t] += g;
    }

    // Scoring MLP over frame-to-frame deltas.
    const std::size_t n_h = p->w1.value.dim(0);
    Tensor ddeltas({t_len, d_v});
    for (std::size_t t = 0; t < t_len; ++t) {
        const double du = dw_total.v[t] * cache.w.v[t] * (1.0 - cache.w.v[t]);
        p->b2.grad.v[0] += du;
        for (std::size_t h = 0; h < n_h; ++h) {
            p->w2.grad.v[h] += du * cache.act.at(t, h);
            const double dz = du * p->w2.value.v[h] * gelu_grad_s(cache.z.at(t, h));
            p->b1.grad.v[h] += dz;
            for (std::size_t j = 0; j < d_v; ++j) {
                p->w1.grad.at(h, j) += dz * cache.deltas.at(t, j);
                ddeltas.at(t, j) += dz * p->w1.value.at(h, j);
            }
        }
    }
    // delta_t = x_t - x_{t-1} for t >= 1; delta_0 = 0.
    for (std::size_t t = 1; t < t_len; ++t)
        for (std::size_t j = 0; j < d_v; ++j) {
            dframes.at(t, j) += ddeltas.at(t, j);
            dframes.at(t - 1, j) -= ddeltas.at(t, j);
        }
}

// --------------------------------------------------------------------------
// SSM scan
// --------------------------------------------------------------------------

void SsmConfig::validate() const {
    if (d_h == 0) throw std::invalid_argument("SsmConfig: d_h must be positive");
    if (!(delta_min > 0.0) || !(delta_min <= delta_max))
        throw std::invalid_argument("SsmConfig: need 0 < delta_min <= delta_max");
    if (!(delta_base > 0.0))
        throw std::invalid_argument("SsmConfig: delta_base must be positive");
}

SsmParams SsmParams::init(std::size_t d_v, std::size_t d_h, Rng& rng) {
    SsmParams p;
    // softplus(raw) in [0.5, 1.5]: raw = ln(exp(y) - 1).
    Tensor raw({d_h});
    for (std::size_t i = 0; i < d_h; ++i) {
        const double y = rng.uniform(0.5, 1.5);
        raw.v[i] = std::log(std::expm1(y));
    }
    p.lambda_raw = Param{"ssm.lambda_raw", raw};
    p.b = Param{"ssm.b", init_weight(rng, d_h, d_v)};
    p.c = Param{"ssm.c", init_weight(rng, d_v, d_h)};
    Tensor skip({d_v});
    skip.fill(1.0);
    p.d = Param{"ssm.d", skip};
    return p;
}

std::vector<Param*> SsmParams::params() { return {&lambda_raw, &b, &c, &d}; }

namespace {

inline std::size_t scan_time(ScanDirection dir, std::size_t step, std::size_t t_len) {
    return dir == ScanDirection::forward ? step : t_len - 1 - step;
}

double step_size(const SsmConfig& cfg, double weight, double cos_sim_val, bool* clamped) {
    double raw;
    if (cfg.mode == DeltaMode::score)
        raw = cfg.delta_base * (1.0 + cfg.alpha * (1.0 - weight));
    else
        raw = cfg.delta_base + cfg.alpha * cos_sim_val + cfg.rho * weight;
    const double clamped_val = std::clamp(raw, cfg.delta_min, cfg.delta_max);
    *clamped = clamped_val != raw;
    return clamped_val;
}

}  // namespace

Tensor ssm_scan(const Tensor& frames, const Tensor& weights, const Tensor& anchor,
                SsmParams& p, const SsmConfig& cfg, ScanDirection dir,
                SsmScanCache& cache) {
    cfg.validate();
    const std::size_t d_v = p.b.value.dim(1);
    const std::size_t d_h = p.b.value.dim(0);
    check_frames(frames, d_v, "ssm_scan");
    const std::size_t t_len = frames.dim(0);
    if (weights.numel() != t_len)
        throw ShapeError("ssm_scan: weights must have one entry per frame");

    cache.dir = dir;
    cache.lambda = softplus(p.lambda_raw.value);
    cache.delta.assign(t_len, 0.0);
    cache.clamped.assign(t_len, 0);
    cache.decay = Tensor({t_len, d_h});
    cache.bx = Tensor({t_len, d_h});
    cache.h = Tensor({t_len, d_h});

    Tensor y({t_len, d_v});
    for (std::size_t s = 0; s < t_len; ++s) {
        const std::size_t t = scan_time(dir, s, t_len);
        double cos_val = 0.0;
        if (cfg.mode == DeltaMode::anchor) {
            Tensor x_t({d_v});
            for (std::size_t j = 0; j < d_v; ++j) x_t.v[j] = frames.at(t, j);
            cos_val = cosine_similarity(anchor, x_t);
        }
        bool was_clamped = false;
        const double delta = step_size(cfg, weights.v[t], cos_val, &was_clamped);
        cache.delta[s] = delta;
        cache.clamped[s] = was_clamped ? 1 : 0;

        for (std::size_t i = 0; i < d_h; ++i) {
            double bx = 0.0;
            for (std::size_t j = 0; j < d_v; ++j) bx += p.b.value.at(i, j) * frames.at(t, j);
            cache.bx.at(s, i) = bx;
            const double decay = std::exp(-delta * cache.lambda.v[i]);
            cache.decay.at(s, i) = decay;
            const double h_prev = s == 0 ? 0.0 : cache.h.at(s - 1, i);
            cache.h.at(s, i) = decay * h_prev + delta * bx;
        }
        for (std::size_t j = 0; j < d_v; ++j) {
            double out = p.d.value.v[j] * frames.at(t, j);
            for (std::size_t i = 0; i < d_h; ++i)
                out += p.c.value.at(j, i) * cache.h.at(s, i);
            y.at(t, j) = out;
        }
    }
    return y;
}

void ssm_scan_backward(const Tensor& frames, const Tensor& weights, const Tensor& anchor,
                       SsmParams& p, const SsmConfig& cfg, const SsmScanCache& cache,
                       const Tensor& dy, Tensor& dframes, Tensor& dweights,
                       Tensor& danchor) {
    (void)weights;  // step sizes and clamp flags are cached
    const std::size_t d_v = p.b.value.dim(1);
    const std::size_t d_h = p.b.value.dim(0);
    const std::size_t t_len = frames.dim(0);
    require_same_shape(dy, frames, "ssm_scan_backward");

    Tensor dlambda({d_h});
    Tensor dh({d_h});  // gradient w.r.t. the state at the current scan step
    for (std::size_t s = t_len; s-- > 0;) {
        const std::size_t t = scan_time(cache.dir, s, t_len);
        for (std::size_t i = 0; i < d_h; ++i) {
            double g = 0.0;
            for (std::size_t j = 0; j < d_v; ++j) {
                g += p.c.value.at(j, i) * dy.at(t, j);
                p.c.grad.at(j, i) += dy.at(t, j) * cache.h.at(s, i);
            }
            dh.v[i] += g;
        }
        for (std::size_t j = 0; j < d_v; ++j) {
            p.d.grad.v[j] += dy.at(t, j) * frames.at(t, j);
            dframes.at(t, j) += p.d.value.v[j] * dy.at(t, j);
        }

        // h_s = decay (.) h_{s-1} + delta * bx
        const double delta = cache.delta[s];
        double ddelta = 0.0;
        for (std::size_t i = 0; i < d_h; ++i) {
            const double h_prev = s == 0 ? 0.0 : cache.h.at(s - 1, i);
            const double decay = cache.decay.at(s, i);
            ddelta += dh.v[i] * cache.bx.at(s, i);
            ddelta += dh.v[i] * h_prev * (-cache.lambda.v[i] * decay);
            dlambda.v[i] += dh.v[i] * h_prev * (-delta * decay);
            const double dbx = dh.v[i] * delta;
            for (std::size_t j = 0; j < d_v; ++j) {
                p.b.grad.at(i, j) += dbx * frames.at(t, j);
                dframes.at(t, j) += p.b.value.at(i, j) * dbx;
            }
            dh.v[i] *= decay;  // becomes the carry into step s-1
        }

        if (!cache.clamped[s]) {
            if (cfg.mode == DeltaMode::score) {
                dweights.v[t] += ddelta * (-cfg.delta_base * cfg.alpha);
            } else {
                dweights.v[t] += ddelta * cfg.rho;
                Tensor x_t({d_v});
                for (std::size_t j = 0; j < d_v; ++j) x_t.v[j] = frames.at(t, j);
                auto grads = cosine_similarity_vjp(anchor, x_t, ddelta * cfg.alpha);
                add_inplace(danchor, grads.first);
                for (std::size_t j = 0; j < d_v; ++j) dframes.at(t, j) += grads.second.v[j];
            }
        }
    }

    const Tensor draw = softplus_vjp(p.lambda_raw.value, dlambda);
    add_inplace(p.lambda_raw.grad, draw);
}

Tensor bidirectional_ssm(const Tensor& frames, const Tensor& weights, const Tensor& anchor,
                         SsmParams& p, const SsmConfig& cfg, BidirectionalCache& cache) {
    Tensor yf = ssm_scan(frames, weights, anchor, p, cfg, ScanDirection::forward, cache.fwd);
    Tensor yb = ssm_scan(frames, weights, anchor, p, cfg, ScanDirection::backward, cache.bwd);
    return add(yf, yb);
}

void bidirectional_ssm_backward(const Tensor& frames, const Tensor& weights,
                                const Tensor& anchor, SsmParams& p, const SsmConfig& cfg,
                                const BidirectionalCache& cache, const Tensor& dy,
                                Tensor& dframes, Tensor& dweights, Tensor& danchor) {
    ssm_scan_backward(frames, weights, anchor, p, cfg, cache.fwd, dy, dframes, dweights,
                      danchor);
    ssm_scan_backward(frames, weights, anchor, p, cfg, cache.bwd, dy, dframes, dweights,
                      danchor);
}

// --------------------------------------------------------------------------
// Sparse attention
// --------------------------------------------------------------------------

SparseAttnParams SparseAttnParams::init(std::size_t d_v, std::size_t d_a, Rng& rng) {
    SparseAttnParams p;
    p.wq = Param{"attn.wq", init_weight(rng, d_a, d_v)};
    p.wk = Param{"attn.wk", init_weight(rng, d_a, d_v)};
    p.wv = Param{"attn.wv", init_weight(rng, d_a, d_v)};
    p.wo = Param{"attn.wo", init_weight(rng, d_v, d_a)};
    return p;
}

std::vector<Param*> SparseAttnParams::params() { return {&wq, &wk, &wv, &wo}; }

std::size_t adaptive_window(double w_base, double beta, double frame_norm,
                            std::size_t t_len) {
    const double raw = std::round(w_base + beta * frame_norm);
    if (raw < 1.0) return 1;
    const double cap = static_cast<double>(t_len);
    return static_cast<std::size_t>(raw > cap ? cap : raw);
}

Tensor sparse_attention(const Tensor& frames, SparseAttnParams& p,
                        const SparseAttnConfig& cfg, SparseAttnCache& cache) {
    const std::size_t d_v = p.wq.value.dim(1);
    const std::size_t d_a = p.wq.value.dim(0);
    check_frames(frames, d_v, "sparse_attention");
    const std::size_t t_len = frames.dim(0);

    cache.q = matmul(frames, p.wq.value, false, true);
    cache.k = matmul(frames, p.wk.value, false, true);
    cache.val = matmul(frames, p.wv.value, false, true);
    cache.win.assign(t_len, 0);
    cache.lo.assign(t_len, 0);
    cache.hi.assign(t_len, 0);
    cache.probs.assign(t_len, {});
    cache.ctx = Tensor({t_len, d_a});

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_a));
    for (std::size_t t = 0; t < t_len; ++t) {
        double norm = 0.0;
        for (std::size_t j = 0; j < d_v; ++j) norm += frames.at(t, j) * frames.at(t, j);
        norm = std::sqrt(norm);
        const std::size_t win = adaptive_window(cfg.w_base, cfg.beta, norm, t_len);
        cache.win[t] = win;
        cache.lo[t] = t >= win ? t - win : 0;
        cache.hi[t] = std::min(t + win, t_len - 1);

        const std::size_t span = cache.hi[t] - cache.lo[t] + 1;
        std::vector<double> scores(span);
        double max_s = -1e300;
        for (std::size_t r = 0; r < span; ++r) {
            const std::size_t j = cache.lo[t] + r;
            double s = 0.0;
            for (std::size_t a = 0; a < d_a; ++a) s += cache.q.at(t, a) * cache.k.at(j, a);
            scores[r] = s * inv_sqrt;
            max_s = std::max(max_s, scores[r]);
        }
        double z = 0.0;
        for (std::size_t r = 0; r < span; ++r) {
            scores[r] = std::exp(scores[r] - max_s);
            z += scores[r];
        }
        for (std::size_t r = 0; r < span; ++r) scores[r] /= z;
        cache.probs[t] = scores;
        for (std::size_t a = 0; a < d_a; ++a) {
            double c = 0.0;
            for (std::size_t r = 0; r < span; ++r)
                c += scores[r] * cache.val.at(cache.lo[t] + r, a);
            cache.ctx.at(t, a) = c;
        }
    }
    return matmul(cache.ctx, p.wo.value, false, true);
}

void sparse_attention_backward(const Tensor& frames, SparseAttnParams& p,
                               const SparseAttnCache& cache, const Tensor& dy,
                               Tensor& dframes) {
    const std::size_t d_a = p.wq.value.dim(0);
    const std::size_t t_len = frames.dim(0);
    require_same_shape(dy, frames, "sparse_attention_backward");

    // y = ctx Wo^T
    Tensor dctx = matmul(dy, p.wo.value);                       // [T, d_a]
    add_inplace(p.wo.grad, matmul(dy, cache.ctx, true, false));  // [d_v, d_a]

    Tensor dq({t_len, d_a}), dk({t_len, d_a}), dval({t_len, d_a});
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_a));
    for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t lo = cache.lo[t];
        const auto& probs = cache.probs[t];
        const std::size_t span = probs.size();
        std::vector<double> dp(span, 0.0);
        for (std::size_t r = 0; r < span; ++r) {
            const std::size_t j = lo + r;
            for (std::size_t a = 0; a < d_a; ++a) {
                dp[r] += dctx.at(t, a) * cache.val.at(j, a);
                dval.at(j, a) += probs[r] * dctx.at(t, a);
            }
        }
        double inner = 0.0;
        for (std::size_t r = 0; r < span; ++r) inner += probs[r] * dp[r];
        for (std::size_t r = 0; r < span; ++r) {
            const std::size_t j = lo + r;
            const double ds = probs[r] * (dp[r] - inner) * inv_sqrt;
            for (std::size_t a = 0; a < d_a; ++a) {
                dq.at(t, a) += ds * cache.k.at(j, a);
                dk.at(j, a) += ds * cache.q.at(t, a);
            }
        }
    }

    add_inplace(p.wq.grad, matmul(dq, frames, true, false));
    add_inplace(p.wk.grad, matmul(dk, frames, true, false));
    add_inplace(p.wv.grad, matmul(dval, frames, true, false));
    add_inplace(dframes, matmul(dq, p.wq.value));
    add_inplace(dframes, matmul(dk, p.wk.value));
    add_inplace(dframes, matmul(dval, p.wv.value));
}

// --------------------------------------------------------------------------
// Gated fusion
// --------------------------------------------------------------------------

GatedFusionParams GatedFusionParams::init(std::size_t d_v, Rng& rng) {
    GatedFusionParams p;
    p.wg = Param{"fusion.wg", init_weight(rng, 3, 3 * d_v)};
    p.wres = Param{"fusion.wres", init_weight(rng, d_v, d_v)};
    p.bres = Param{"fusion.bres", Tensor({d_v})};
    return p;
}

std::vector<Param*> GatedFusionParams::params() { return {&wg, &wres, &bres}; }

void gated_fusion(const Tensor& frames, const Tensor& y_ssm, const Tensor& y_attn,
                  const Tensor& anchor, GatedFusionParams& p, GatedFusionCache& cache,
                  TemporalOutput& out) {
    const std::size_t d_v = frames.dim(1);
    const std::size_t t_len = frames.dim(0);
    require_same_shape(y_ssm, frames, "gated_fusion");
    require_same_shape(y_attn, frames, "gated_fusion");

    const Tensor ms = mean_pool_rows(y_ssm);
    const Tensor ma = mean_pool_rows(y_attn);
    cache.feat = concat({ms, ma, anchor});
    const Tensor logits = matvec(p.wg.value, cache.feat);
    cache.gates = softmax(logits, 0, 1.0);

    const double gs = cache.gates.v[0];
    const double ga = cache.gates.v[1];
    const double gg = cache.gates.v[2];
    out.v_seq = Tensor({t_len, d_v});
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t j = 0; j < d_v; ++j) {
            double res = p.bres.value.v[j];
            for (std::size_t i = 0; i < d_v; ++i)
                res += p.wres.value.at(j, i) * frames.at(t, i);
            out.v_seq.at(t, j) = gs * y_ssm.at(t, j) + ga * y_attn.at(t, j) +
                                 gg * anchor.v[j] + res;
        }
    }
    out.v = mean_pool_rows(out.v_seq);
    out.gates = cache.gates;
    out.y_ssm = y_ssm;
    out.y_attn = y_attn;
}

void gated_fusion_backward(const Tensor& frames, const Tensor& y_ssm, const Tensor& y_attn,
                           const Tensor& anchor, GatedFusionParams& p,
                           const GatedFusionCache& cache, const Tensor& dv_seq,
                           const Tensor& dv, Tensor& dframes, Tensor& dy_ssm,
                           Tensor& dy_attn, Tensor& danchor) {
    const std::size_t d_v = frames.dim(1);
    const std::size_t t_len = frames.dim(0);
    const double inv_t = 1.0 / static_cast<double>(t_len);

    Tensor dseq = dv_seq;  // [T, d_v]; fold the pooled-output gradient in
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t j = 0; j < d_v; ++j) dseq.at(t, j) += dv.v[j] * inv_t;

    const double gs = cache.gates.v[0];
    const double ga = cache.gates.v[1];
    const double gg = cache.gates.v[2];
    Tensor dgates({3});
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t j = 0; j < d_v; ++j) {
            const double g = dseq.at(t, j);
            dgates.v[0] += g * y_ssm.at(t, j);
            dgates.v[1] += g * y_attn.at(t, j);
            dgates.v[2] += g * anchor.v[j];
            dy_ssm.at(t, j) += gs * g;
            dy_attn.at(t, j) += ga * g;
            danchor.v[j] += gg * g;
            p.bres.grad.v[j] += g;
            for (std::size_t i = 0; i < d_v; ++i) {
                p.wres.grad.at(j, i) += g * frames.at(t, i);
                dframes.at(t, i) += p.wres.value.at(j, i) * g;
            }
        }
    }

    const Tensor dlogits = softmax_vjp(cache.gates, 0, 1.0, dgates);
    auto wg_grads = matvec_vjp(p.wg.value, cache.feat, dlogits);
    add_inplace(p.wg.grad, wg_grads.first);
    const Tensor& dfeat = wg_grads.second;
    // feat = [mean ssm; mean attn; anchor]
    for (std::size_t j = 0; j < d_v; ++j) {
        for (std::size_t t = 0; t < t_len; ++t) {
            dy_ssm.at(t, j) += dfeat.v[j] * inv_t;
            dy_attn.at(t, j) += dfeat.v[d_v + j] * inv_t;
        }
        danchor.v[j] += dfeat.v[2 * d_v + j];
    }
}

// --------------------------------------------------------------------------
// Temporal stage
// --------------------------------------------------------------------------

TemporalModule TemporalModule::init(const TemporalConfig& cfg, Rng& rng) {
    cfg.ssm.validate();
    TemporalModule m;
    m.cfg = cfg;
    m.scoring = FrameScoringParams::init(cfg.d_v, cfg.score_hidden, rng);
    m.ssm = SsmParams::init(cfg.d_v, cfg.ssm.d_h, rng);
    m.attn = SparseAttnParams::init(cfg.d_v, cfg.attn.d_a, rng);
    m.fusion = GatedFusionParams::init(cfg.d_v, rng);
    return m;
}

std::vector<Param*> TemporalModule::params() {
    std::vector<Param*> out;
    if (cfg.use_scoring)
        for (Param* p : scoring.params()) out.push_back(p);
    if (cfg.use_ssm)
        for (Param* p : ssm.params()) out.push_back(p);
    if (cfg.use_attn)
        for (Param* p : attn.params()) out.push_back(p);
    for (Param* p : fusion.params()) out.push_back(p);
    return out;
}

TemporalOutput TemporalModule::forward(const Tensor& frames, TemporalCache& cache) {
    check_frames(frames, cfg.d_v, "TemporalModule::forward");
    const std::size_t t_len = frames.dim(0);

    FrameScoreOutput score = cfg.use_scoring
                                 ? score_frames(frames, scoring, cache.score)
                                 : score_frames_disabled(frames, cache.score);

    Tensor y_ssm({t_len, cfg.d_v});
    if (cfg.use_ssm)
        y_ssm = bidirectional_ssm(frames, score.weights, score.anchor, ssm, cfg.ssm,
                                  cache.ssm);
    Tensor y_attn({t_len, cfg.d_v});
    if (cfg.use_attn) y_attn = sparse_attention(frames, attn, cfg.attn, cache.attn);

    gated_fusion(frames, y_ssm, y_attn, score.anchor, fusion, cache.fusion, cache.out);
    return cache.out;
}

Tensor TemporalModule::backward(const Tensor& frames, const TemporalCache& cache,
                                const Tensor& dv_seq, const Tensor& dv) {
    const std::size_t t_len = frames.dim(0);
    Tensor dframes({t_len, cfg.d_v});
    Tensor dy_ssm({t_len, cfg.d_v});
    Tensor dy_attn({t_len, cfg.d_v});
    Tensor danchor({cfg.d_v});
    Tensor dweights({t_len});

    gated_fusion_backward(frames, cache.out.y_ssm, cache.out.y_attn, cache.score.anchor,
                          fusion, cache.fusion, dv_seq, dv, dframes, dy_ssm, dy_attn,
                          danchor);
    if (cfg.use_attn)
        sparse_attention_backward(frames, attn, cache.attn, dy_attn, dframes);
    if (cfg.use_ssm)
        bidirectional_ssm_backward(frames, cache.score.w, cache.score.anchor, ssm, cfg.ssm,
                                   cache.ssm, dy_ssm, dframes, dweights, danchor);
    score_frames_backward(frames, cfg.use_scoring ? &scoring : nullptr, cache.score,
                          dweights, danchor, dframes);
    return dframes;
}

}  // namespace stap
