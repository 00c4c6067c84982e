#include "stap/model.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "stap/kernels.hpp"

namespace stap {

namespace {

void add_outer(Tensor& grad, const Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.numel(); ++i)
        for (std::size_t j = 0; j < b.numel(); ++j) grad.at(i, j) += a.v[i] * b.v[j];
}

/// Per-row non-affine layer norm of a rank-2 tensor.
Tensor ln_rows(const Tensor& x) {
    const std::size_t rows = x.dim(0);
    const std::size_t d = x.dim(1);
    Tensor unit({d});
    unit.fill(1.0);
    const Tensor beta({d});
    Tensor y(x.shape);
    Tensor row({d});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < d; ++j) row.v[j] = x.at(i, j);
        const Tensor out = layer_norm(row, unit, beta);
        for (std::size_t j = 0; j < d; ++j) y.at(i, j) = out.v[j];
    }
    return y;
}

Tensor ln_rows_vjp(const Tensor& x, const Tensor& gy) {
    const std::size_t rows = x.dim(0);
    const std::size_t d = x.dim(1);
    Tensor unit({d});
    unit.fill(1.0);
    const Tensor beta({d});
    Tensor dx(x.shape);
    Tensor row({d}), grow({d});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            row.v[j] = x.at(i, j);
            grow.v[j] = gy.at(i, j);
        }
        const LayerNormGrads g = layer_norm_vjp(row, unit, beta, kLayerNormEps, grow);
        for (std::size_t j = 0; j < d; ++j) dx.at(i, j) = g.dx.v[j];
    }
    return dx;
}

/// Single-query attention: probs = softmax(<q, k_j>/sqrt(d)); out = probs . val.
void pooled_attend(const Tensor& q, const Tensor& k, const Tensor& val, Tensor& probs,
                   Tensor& out) {
    const std::size_t n = k.dim(0);
    const std::size_t d = k.dim(1);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor scores({n});
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t a = 0; a < d; ++a) s += q.v[a] * k.at(j, a);
        scores.v[j] = s * inv_sqrt;
    }
    probs = softmax(scores, 0, 1.0);
    out = Tensor({d});
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t a = 0; a < d; ++a) out.v[a] += probs.v[j] * val.at(j, a);
}

/// Backward of pooled_attend; returns (dq, dk, dval) given d(out).
void pooled_attend_backward(const Tensor& q, const Tensor& k, const Tensor& val,
                            const Tensor& probs, const Tensor& dout, Tensor& dq,
                            Tensor& dk, Tensor& dval) {
    const std::size_t n = k.dim(0);
    const std::size_t d = k.dim(1);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    dq = Tensor({d});
    dk = Tensor({n, d});
    dval = Tensor({n, d});
    Tensor dp({n});
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t a = 0; a < d; ++a) {
            dp.v[j] += dout.v[a] * val.at(j, a);
            dval.at(j, a) += probs.v[j] * dout.v[a];
        }
    double inner = 0.0;
    for (std::size_t j = 0; j < n; ++j) inner += probs.v[j] * dp.v[j];
    for (std::size_t j = 0; j < n; ++j) {
        const double ds = probs.v[j] * (dp.v[j] - inner) * inv_sqrt;
        for (std::size_t a = 0; a < d; ++a) {
            dq.v[a] += ds * k.at(j, a);
            dk.at(j, a) += ds * q.v[a];
        }
    }
}

void check_finite(double x, const std::string& name) {
    if (!std::isfinite(x)) throw EvalError("non-finite value in " + name);
}

}  // namespace

// --------------------------------------------------------------------------
// Batch plumbing
// --------------------------------------------------------------------------

void SampleBatch::validate() const {
    if (frames.empty()) throw std::invalid_argument("SampleBatch: empty batch");
    if (text.size() != frames.size() || meta.size() != frames.size() ||
        labels.size() != frames.size())
        throw ShapeError("SampleBatch: field counts disagree");
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].rank() != 2 || text[i].rank() != 2 || meta[i].rank() != 1)
            throw ShapeError("SampleBatch: item " + std::to_string(i) + " malformed");
        if (frames[i].dim(1) != frames[0].dim(1) || text[i].dim(1) != text[0].dim(1) ||
            meta[i].dim(0) != meta[0].dim(0))
            throw ShapeError("SampleBatch: inconsistent widths at item " +
                             std::to_string(i));
    }
}

// --------------------------------------------------------------------------
// Predictor parameters
// --------------------------------------------------------------------------

PredictorParams PredictorParams::init(std::size_t d_v, std::size_t d_t, std::size_t d_u,
                                      std::size_t d_m, std::size_t d_c, std::size_t l_ca,
                                      std::size_t head_hidden, Rng& rng) {
    PredictorParams p;
    p.wv_in = Param{"pred.wv_in", init_weight(rng, d_c, d_v)};
    p.wt_in = Param{"pred.wt_in", init_weight(rng, d_c, d_t)};
    p.wu_in = Param{"pred.wu_in", init_weight(rng, d_c, d_u)};
    p.layers.resize(l_ca);
    for (std::size_t l = 0; l < l_ca; ++l) {
        const std::string tag = "pred.ca" + std::to_string(l);
        p.layers[l].wq_t = Param{tag + ".wq_t", init_weight(rng, d_c, d_c)};
        p.layers[l].wk_t = Param{tag + ".wk_t", init_weight(rng, d_c, d_c)};
        p.layers[l].wv_t = Param{tag + ".wv_t", init_weight(rng, d_c, d_c)};
        p.layers[l].wq_v = Param{tag + ".wq_v", init_weight(rng, d_c, d_c)};
        p.layers[l].wk_v = Param{tag + ".wk_v", init_weight(rng, d_c, d_c)};
        p.layers[l].wv_v = Param{tag + ".wv_v", init_weight(rng, d_c, d_c)};
    }
    p.wr = Param{"pred.wr", init_weight(rng, d_c, d_m + 1)};
    p.br = Param{"pred.br", Tensor({d_c})};
    p.head_w1 = Param{"pred.head_w1", init_weight(rng, head_hidden, 6 * d_c)};
    p.head_b1 = Param{"pred.head_b1", Tensor({head_hidden})};
    p.head_w2 = Param{"pred.head_w2", init_weight(rng, 1, head_hidden)};
    p.head_w2.value.shape = {head_hidden};
    p.head_w2.grad.shape = {head_hidden};
    p.head_b2 = Param{"pred.head_b2", Tensor({1})};
    return p;
}

std::vector<Param*> PredictorParams::params(bool include_retrieval) {
    std::vector<Param*> out{&wv_in, &wt_in, &wu_in};
    for (CrossAttnLayerParams& l : layers)
        for (Param* p : {&l.wq_t, &l.wk_t, &l.wv_t, &l.wq_v, &l.wk_v, &l.wv_v})
            out.push_back(p);
    if (include_retrieval) {
        out.push_back(&wr);
        out.push_back(&br);
    }
    for (Param* p : {&head_w1, &head_b1, &head_w2, &head_b2}) out.push_back(p);
    return out;
}

// --------------------------------------------------------------------------
// Cross-attention
// --------------------------------------------------------------------------

void cross_attention(const Tensor& v_seq, const Tensor& t_seq, PredictorParams& p,
                     std::size_t l_ca, CrossAttnCache& cache) {
    if (v_seq.rank() != 2 || t_seq.rank() != 2 || v_seq.dim(1) != t_seq.dim(1))
        throw ShapeError("cross_attention: sequences must share width d'");
    if (v_seq.dim(0) == 0 || t_seq.dim(0) == 0)
        throw ShapeError("cross_attention: empty sequence");
    if (l_ca != p.layers.size())
        throw ShapeError("cross_attention: layer count mismatch");

    cache.layers.assign(l_ca, {});
    Tensor v_cur = v_seq;
    Tensor t_cur = t_seq;
    for (std::size_t l = 0; l < l_ca; ++l) {
        CrossAttnLayerCache& c = cache.layers[l];
        CrossAttnLayerParams& lp = p.layers[l];
        c.v_in = v_cur;
        c.t_in = t_cur;
        c.v_pool = mean_pool_rows(v_cur);
        c.t_pool = mean_pool_rows(t_cur);

        c.qt = matvec(lp.wq_t.value, c.v_pool);
        c.kt = matmul(t_cur, lp.wk_t.value, false, true);
        c.vt = matmul(t_cur, lp.wv_t.value, false, true);
        pooled_attend(c.qt, c.kt, c.vt, c.probs_t, c.ot);

        c.qv = matvec(lp.wq_v.value, c.t_pool);
        c.kv = matmul(v_cur, lp.wk_v.value, false, true);
        c.vv = matmul(v_cur, lp.wv_v.value, false, true);
        pooled_attend(c.qv, c.kv, c.vv, c.probs_v, c.ov);

        c.t_res = Tensor(t_cur.shape);
        for (std::size_t j = 0; j < t_cur.dim(0); ++j)
            for (std::size_t a = 0; a < t_cur.dim(1); ++a)
                c.t_res.at(j, a) = c.t_in.at(j, a) + c.ot.v[a];
        c.v_res = Tensor(v_cur.shape);
        for (std::size_t t = 0; t < v_cur.dim(0); ++t)
            for (std::size_t a = 0; a < v_cur.dim(1); ++a)
                c.v_res.at(t, a) = c.v_in.at(t, a) + c.ov.v[a];

        t_cur = ln_rows(c.t_res);
        v_cur = ln_rows(c.v_res);
    }
    cache.v_final = v_cur;
    cache.t_final = t_cur;
    cache.v_star = mean_pool_rows(v_cur);
    cache.t_star = mean_pool_rows(t_cur);
}

void cross_attention_backward(PredictorParams& p, const CrossAttnCache& cache,
                              const Tensor& dv_star, const Tensor& dt_star,
                              Tensor& dv_seq, Tensor& dt_seq) {
    Tensor dv_cur = mean_pool_rows_vjp(cache.v_final, dv_star);
    Tensor dt_cur = mean_pool_rows_vjp(cache.t_final, dt_star);

    for (std::size_t l = cache.layers.size(); l-- > 0;) {
        const CrossAttnLayerCache& c = cache.layers[l];
        CrossAttnLayerParams& lp = p.layers[l];
        const std::size_t t_len = c.v_in.dim(0);
        const std::size_t l_len = c.t_in.dim(0);
        const std::size_t d = c.v_in.dim(1);

        const Tensor dv_res = ln_rows_vjp(c.v_res, dv_cur);
        const Tensor dt_res = ln_rows_vjp(c.t_res, dt_cur);

        Tensor dv_in = dv_res;
        Tensor dt_in = dt_res;
        Tensor do_v({d}), do_t({d});
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t a = 0; a < d; ++a) do_v.v[a] += dv_res.at(t, a);
        for (std::size_t j = 0; j < l_len; ++j)
            for (std::size_t a = 0; a < d; ++a) do_t.v[a] += dt_res.at(j, a);

        // Text-stream update: query from visual pool, keys/values from text.
        Tensor dqt, dkt, dvt;
        pooled_attend_backward(c.qt, c.kt, c.vt, c.probs_t, do_t, dqt, dkt, dvt);
        auto qt_grads = matvec_vjp(lp.wq_t.value, c.v_pool, dqt);
        add_inplace(lp.wq_t.grad, qt_grads.first);
        add_inplace(dv_in, mean_pool_rows_vjp(c.v_in, qt_grads.second));
        add_inplace(lp.wk_t.grad, matmul(dkt, c.t_in, true, false));
        add_inplace(dt_in, matmul(dkt, lp.wk_t.value));
        add_inplace(lp.wv_t.grad, matmul(dvt, c.t_in, true, false));
        add_inplace(dt_in, matmul(dvt, lp.wv_t.value));

        // Visual-stream update: query from text pool, keys/values from visual.
        Tensor dqv, dkv, dvv;
        pooled_attend_backward(c.qv, c.kv, c.vv, c.probs_v, do_v, dqv, dkv, dvv);
        auto qv_grads = matvec_vjp(lp.wq_v.value, c.t_pool, dqv);
        add_inplace(lp.wq_v.grad, qv_grads.first);
        add_inplace(dt_in, mean_pool_rows_vjp(c.t_in, qv_grads.second));
        add_inplace(lp.wk_v.grad, matmul(dkv, c.v_in, true, false));
        add_inplace(dv_in, matmul(dkv, lp.wk_v.value));
        add_inplace(lp.wv_v.grad, matmul(dvv, c.v_in, true, false));
        add_inplace(dv_in, matmul(dvv, lp.wv_v.value));

        dv_cur = dv_in;
        dt_cur = dt_in;
    }
    dv_seq = dv_cur;
    dt_seq = dt_cur;
}

// --------------------------------------------------------------------------
// Assembly and head
// --------------------------------------------------------------------------

double assemble_and_predict(const Tensor& v_star, const Tensor& t_star, const Tensor& u,
                            const Tensor& z_aug, double c_pop, PredictorParams& p,
                            bool use_retrieval, PredictCache& cache) {
    const std::size_t d_c = v_star.dim(0);
    cache.u_proj = matvec(p.wu_in.value, u);
    if (use_retrieval) {
        cache.rin = concat({z_aug, Tensor::scalar(c_pop)});
        cache.r_pre = add(matvec(p.wr.value, cache.rin), p.br.value);
        cache.r = relu(cache.r_pre);
    } else {
        cache.rin = Tensor();
        cache.r_pre = Tensor();
        cache.r = Tensor({d_c});
    }
    cache.h = concat({v_star, t_star, cache.u_proj, cache.r, mul(v_star, cache.r),
                      mul(t_star, cache.r)});
    cache.z1 = add(matvec(p.head_w1.value, cache.h), p.head_b1.value);
    cache.a1 = gelu(cache.z1);
    cache.pred = dot(p.head_w2.value, cache.a1) + p.head_b2.value.v[0];
    return cache.pred;
}

PredictGrads assemble_and_predict_backward(const Tensor& v_star, const Tensor& t_star,
                                           const Tensor& u, PredictorParams& p,
                                           bool use_retrieval, const PredictCache& cache,
                                           double dpred) {
    const std::size_t d_c = v_star.dim(0);
    const std::size_t d_m = p.wr.value.dim(1) - 1;

    for (std::size_t i = 0; i < cache.a1.numel(); ++i)
        p.head_w2.grad.v[i] += dpred * cache.a1.v[i];
    p.head_b2.grad.v[0] += dpred;
    const Tensor da1 = scale(p.head_w2.value, dpred);
    const Tensor dz1 = gelu_vjp(cache.z1, da1);
    add_outer(p.head_w1.grad, dz1, cache.h);
    add_inplace(p.head_b1.grad, dz1);
    Tensor dh({6 * d_c});
    for (std::size_t i = 0; i < dz1.numel(); ++i)
        for (std::size_t j = 0; j < dh.numel(); ++j)
            dh.v[j] += p.head_w1.value.at(i, j) * dz1.v[i];

    auto block = [&](std::size_t b, std::size_t j) { return dh.v[b * d_c + j]; };
    PredictGrads g;
    g.dv_star = Tensor({d_c});
    g.dt_star = Tensor({d_c});
    Tensor du_proj({d_c}), dr({d_c});
    for (std::size_t j = 0; j < d_c; ++j) {
        g.dv_star.v[j] = block(0, j) + block(4, j) * cache.r.v[j];
        g.dt_star.v[j] = block(1, j) + block(5, j) * cache.r.v[j];
        du_proj.v[j] = block(2, j);
        dr.v[j] = block(3, j) + block(4, j) * v_star.v[j] + block(5, j) * t_star.v[j];
    }

    if (use_retrieval) {
        const Tensor dr_pre = relu_vjp(cache.r_pre, dr);
        add_outer(p.wr.grad, dr_pre, cache.rin);
        add_inplace(p.br.grad, dr_pre);
        Tensor drin({d_m + 1});
        for (std::size_t i = 0; i < d_c; ++i)
            for (std::size_t j = 0; j < d_m + 1; ++j)
                drin.v[j] += p.wr.value.at(i, j) * dr_pre.v[i];
        g.dz_aug = Tensor({d_m});
        for (std::size_t j = 0; j < d_m; ++j) g.dz_aug.v[j] = drin.v[j];
        g.dc_pop = drin.v[d_m];
    } else {
        g.dz_aug = Tensor({d_m});
        g.dc_pop = 0.0;
    }

    auto wu_grads = matvec_vjp(p.wu_in.value, u, du_proj);
    add_inplace(p.wu_in.grad, wu_grads.first);
    g.du = wu_grads.second;
    return g;
}

// --------------------------------------------------------------------------
// Model
// --------------------------------------------------------------------------

void ModelConfig::validate() const {
    temporal.ssm.validate();
    if (temporal.d_v == 0 || d_t == 0 || d_u == 0 || d_m == 0 || d_c == 0 ||
        head_hidden == 0)
        throw std::invalid_argument("ModelConfig: zero width");
    if (l_ca == 0) throw std::invalid_argument("ModelConfig: need at least one layer");
    if (p_count == 0 || c_count == 0 || k_top == 0 || k_top > p_count * c_count)
        throw std::invalid_argument("ModelConfig: need 1 <= K <= P*C");
    if (!(tau_min > 0.0) || !(tau_min <= tau_init) || !(tau_init <= tau_max))
        throw std::invalid_argument("ModelConfig: need 0 < tau_min <= tau <= tau_max");
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("ModelConfig: eta in [0,1]");
    if (!(lr > 0.0)) throw std::invalid_argument("ModelConfig: lr must be positive");
    if (lambda_pref < 0.0 || lambda_bal < 0.0 || weight_decay < 0.0)
        throw std::invalid_argument("ModelConfig: negative loss weight");
}

StapModel StapModel::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    StapModel m;
    m.cfg = cfg;
    m.temporal = TemporalModule::init(cfg.temporal, rng);
    m.routing = RoutingParams::init(cfg.d_q(), cfg.d_m, rng);
    m.predictor = PredictorParams::init(cfg.temporal.d_v, cfg.d_t, cfg.d_u, cfg.d_m,
                                        cfg.d_c, cfg.l_ca, cfg.head_hidden, rng);
    m.bank.p_count = cfg.p_count;
    m.bank.c_count = cfg.c_count;
    m.bank.d_m = cfg.d_m;
    m.bank.m = Param{"bank.m", Tensor({cfg.p_count * cfg.c_count, cfg.d_m})};
    m.bank.mu = Tensor({cfg.p_count * cfg.c_count});
    m.bank.tau = cfg.tau_init;
    m.bank.tau_min = cfg.tau_min;
    m.bank.tau_max = cfg.tau_max;
    return m;
}

std::vector<Param*> StapModel::params() {
    std::vector<Param*> out = temporal.params();
    if (cfg.use_memory) {
        out.push_back(&routing.wq);
        out.push_back(&bank.m);
    }
    for (Param* p : predictor.params(cfg.use_memory)) out.push_back(p);
    return out;
}

std::vector<Param*> StapModel::all_params() {
    std::vector<Param*> out;
    for (Param* p : temporal.scoring.params()) out.push_back(p);
    for (Param* p : temporal.ssm.params()) out.push_back(p);
    for (Param* p : temporal.attn.params()) out.push_back(p);
    for (Param* p : temporal.fusion.params()) out.push_back(p);
    out.push_back(&routing.wq);
    out.push_back(&bank.m);
    for (Param* p : predictor.params(true)) out.push_back(p);
    return out;
}

void StapModel::zero_grad() {
    for (Param* p : all_params()) p->zero_grad();
    bank.tau_grad = 0.0;
}

Tensor StapModel::project_query(const Tensor& query) const {
    const Tensor q_lin = matvec(routing.wq.value, query);
    Tensor unit({cfg.d_m});
    unit.fill(1.0);
    return tanh(layer_norm(q_lin, unit, Tensor({cfg.d_m})));
}

double StapModel::predict_item(const Tensor& frames, const Tensor& text,
                               const Tensor& meta, ItemCache& cache) {
    const TemporalOutput t_out = temporal.forward(frames, cache.temporal);
    cache.query = concat({t_out.v, mean_pool_rows(text), meta});

    Tensor z_aug({cfg.d_m});
    double c_pop = 0.0;
    if (cfg.use_memory) {
        if (!bank_ready)
            throw std::logic_error("StapModel: routing before init_model_bank");
        const RoutingResult res =
            route(cache.query, bank, routing, cfg.k_top, cache.route, cfg.renorm_topk);
        z_aug = res.z_aug;
        c_pop = res.c_pop;
    }

    cache.v_seq_proj = matmul(t_out.v_seq, predictor.wv_in.value, false, true);
    cache.t_seq_proj = matmul(text, predictor.wt_in.value, false, true);
    cross_attention(cache.v_seq_proj, cache.t_seq_proj, predictor, cfg.l_ca, cache.cross);
    return assemble_and_predict(cache.cross.v_star, cache.cross.t_star, meta, z_aug,
                                c_pop, predictor, cfg.use_memory, cache.predict);
}

LossBreakdown StapModel::forward_loss(const SampleBatch& batch, BatchCache& cache) {
    batch.validate();
    const std::size_t b = batch.size();
    cache.items.assign(b, {});
    cache.preds = Tensor({b});
    for (std::size_t i = 0; i < b; ++i) {
        cache.preds.v[i] =
            predict_item(batch.frames[i], batch.text[i], batch.meta[i], cache.items[i]);
        check_finite(cache.preds.v[i], "prediction for item " + std::to_string(i));
    }

    LossBreakdown loss;
    loss.lambda_pref = cfg.lambda_pref;
    loss.lambda_bal = cfg.lambda_bal;
    const Tensor labels = Tensor::from_vector(batch.labels);
    loss.reg = huber_loss(cache.preds, labels, 1.0);

    cache.pairs.clear();
    if (cfg.use_memory) {
        cache.batch_pi = Tensor({b, cfg.p_count, cfg.c_count});
        const std::size_t slots = cfg.p_count * cfg.c_count;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t s = 0; s < slots; ++s)
                cache.batch_pi.v[i * slots + s] = cache.items[i].route.res.pi_soft.v[s];
        if (cfg.use_balance) loss.balance = load_balance_loss(cache.batch_pi, cfg.balance);
        if (cfg.use_dppo) {
            const double margin = pairing_margin(batch.labels, cfg.margin_scale);
            cache.pairs = make_preference_pairs(batch.labels, margin);
            loss.pref = dppo_loss(cache.batch_pi, cache.pairs, cfg.gamma_pref).loss;
        }
    } else {
        cache.batch_pi = Tensor();
    }

    check_finite(loss.reg, "regression loss");
    check_finite(loss.pref, "preference loss");
    check_finite(loss.balance, "balance loss");
    loss.total = loss.reg + cfg.lambda_pref * loss.pref + cfg.lambda_bal * loss.balance;
    check_finite(loss.total, "total loss");
    cache.loss = loss;
    return loss;
}

void StapModel::backward_loss(const SampleBatch& batch, BatchCache& cache) {
    const std::size_t b = batch.size();
    const Tensor labels = Tensor::from_vector(batch.labels);
    const Tensor dpreds = huber_loss_vjp(cache.preds, labels, 1.0, 1.0).first;

    Tensor dpi_batch;
    if (cfg.use_memory) {
        dpi_batch = Tensor({b, cfg.p_count, cfg.c_count});
        if (cfg.use_balance)
            add_inplace(dpi_batch,
                        load_balance_backward(cache.batch_pi, cfg.balance, cfg.lambda_bal));
        if (cfg.use_dppo && !cache.pairs.empty())
            add_inplace(dpi_batch, dppo_backward(cache.batch_pi, cache.pairs,
                                                 cfg.gamma_pref, cfg.lambda_pref));
    }

    const std::size_t slots = cfg.p_count * cfg.c_count;
    for (std::size_t i = 0; i < b; ++i) {
        ItemCache& it = cache.items[i];
        const PredictGrads g =
            assemble_and_predict_backward(it.cross.v_star, it.cross.t_star, batch.meta[i],
                                          predictor, cfg.use_memory, it.predict,
                                          dpreds.v[i]);
        Tensor dv_seq_proj, dt_seq_proj;
        cross_attention_backward(predictor, it.cross, g.dv_star, g.dt_star, dv_seq_proj,
                                 dt_seq_proj);

        add_inplace(predictor.wv_in.grad,
                    matmul(dv_seq_proj, it.temporal.out.v_seq, true, false));
        const Tensor dv_seq = matmul(dv_seq_proj, predictor.wv_in.value);
        add_inplace(predictor.wt_in.grad, matmul(dt_seq_proj, batch.text[i], true, false));

        Tensor dquery({cfg.d_q()});
        if (cfg.use_memory) {
            Tensor dpi_item({cfg.p_count, cfg.c_count});
            for (std::size_t s = 0; s < slots; ++s)
                dpi_item.v[s] = dpi_batch.v[i * slots + s];
            dquery = route_backward(it.query, bank, routing, it.route, g.dz_aug, g.dc_pop,
                                    dpi_item, cfg.renorm_topk);
        }
        Tensor dv_pool({cfg.temporal.d_v});
        for (std::size_t j = 0; j < cfg.temporal.d_v; ++j) dv_pool.v[j] = dquery.v[j];
        temporal.backward(batch.frames[i], it.temporal, dv_seq, dv_pool);
    }
}

LossBreakdown StapModel::train_step(const SampleBatch& batch, BatchCache* out) {
    zero_grad();
    BatchCache local;
    BatchCache& cache = out ? *out : local;
    forward_loss(batch, cache);
    backward_loss(batch, cache);

    for (Param* p : params())
        for (std::size_t i = 0; i < p->numel(); ++i)
            p->value.v[i] -= cfg.lr * (p->grad.v[i] + cfg.weight_decay * p->value.v[i]);

    if (cfg.use_memory) {
        std::vector<RoutingResult> routes;
        std::vector<Tensor> q_primes;
        routes.reserve(batch.size());
        q_primes.reserve(batch.size());
        for (const ItemCache& it : cache.items) {
            routes.push_back(it.route.res);
            q_primes.push_back(it.route.q_prime);
        }
        update_bank(bank, routes, q_primes, batch.labels, cfg.eta, cfg.lr);
    }
    return cache.loss;
}

std::vector<std::string> StapModel::dead_params(const SampleBatch& batch) {
    zero_grad();
    BatchCache cache;
    forward_loss(batch, cache);
    backward_loss(batch, cache);
    std::vector<std::string> dead;
    for (Param* p : params()) {
        bool live = false;
        for (double g : p->grad.v)
            if (g != 0.0) {
                live = true;
                break;
            }
        if (!live) dead.push_back(p->name);
    }
    zero_grad();
    return dead;
}

void init_model_bank(StapModel& model, const SampleBatch& items, std::uint64_t seed) {
    items.validate();
    const std::size_t n = items.size();
    Tensor embeddings({n, model.cfg.d_m});
    for (std::size_t i = 0; i < n; ++i) {
        TemporalCache tcache;
        const TemporalOutput out = model.temporal.forward(items.frames[i], tcache);
        const Tensor query =
            concat({out.v, mean_pool_rows(items.text[i]), items.meta[i]});
        const Tensor q_prime = model.project_query(query);
        for (std::size_t j = 0; j < model.cfg.d_m; ++j)
            embeddings.at(i, j) = q_prime.v[j];
    }
    MemoryBank bank = init_bank(embeddings, items.labels, model.cfg.p_count,
                                model.cfg.c_count, seed);
    bank.tau = model.cfg.tau_init;
    bank.tau_min = model.cfg.tau_min;
    bank.tau_max = model.cfg.tau_max;
    model.bank = std::move(bank);
    model.bank_ready = true;
}

}  // namespace stap
