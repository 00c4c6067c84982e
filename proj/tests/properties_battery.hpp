#pragma once

// Randomized structural-invariant batteries shared by the property suite and
// the acceptance gate. Each battery runs `cases` independent random cases and
// reports the number of violations plus the worst violation magnitude.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>

#include "stap/kernels.hpp"
#include "stap/memory.hpp"
#include "stap/model.hpp"
#include "stap/rng.hpp"
#include "stap/temporal.hpp"
#include "stap/tensor.hpp"

namespace stap::test {

struct BatteryResult {
    std::size_t cases = 0;
    std::size_t failures = 0;
    double worst = 0.0;
    bool ok() const { return cases > 0 && failures == 0; }
};

namespace detail {

inline MemoryBank random_bank(Rng& rng, std::size_t p, std::size_t c, std::size_t d_m) {
    MemoryBank bank;
    bank.p_count = p;
    bank.c_count = c;
    bank.d_m = d_m;
    bank.m = Param("bank.m", rng.normal_tensor({p * c, d_m}));
    bank.mu = rng.normal_tensor({p * c});
    bank.tau_min = 0.05;
    bank.tau_max = 8.0;
    bank.tau = rng.uniform(0.1, 5.0);
    return bank;
}

}  // namespace detail

/// pi_soft is a probability vector over all slots: finite, nonnegative,
/// total mass within 1e-9 of one.
inline BatteryResult battery_pi_normalization(std::size_t cases, std::uint64_t seed) {
    BatteryResult res;
    Rng rng(derive_seed(seed, 81));
    for (std::size_t n = 0; n < cases; ++n) {
        const std::size_t p = 1 + rng.index(5);
        const std::size_t c = 1 + rng.index(5);
        const std::size_t d_m = 2 + rng.index(7);
        const std::size_t d_q = 2 + rng.index(7);
        MemoryBank bank = detail::random_bank(rng, p, c, d_m);
        RoutingParams proj = RoutingParams::init(d_q, d_m, rng);
        const Tensor query = rng.normal_tensor({d_q});
        const std::size_t k = 1 + rng.index(p * c);
        RouteCache cache;
        const RoutingResult r = route(query, bank, proj, k, cache);
        double sum = 0.0;
        bool bad = false;
        for (double v : r.pi_soft.v) {
            if (!std::isfinite(v) || v < 0.0) bad = true;
            sum += v;
        }
        const double gap = std::fabs(sum - 1.0);
        res.worst = std::max(res.worst, gap);
        ++res.cases;
        if (bad || gap > 1e-9) ++res.failures;
    }
    return res;
}

/// The gated vector pi_k has exactly K nonzero entries, at the selected flat
/// indices, stored strictly ascending.
inline BatteryResult battery_exact_k_gates(std::size_t cases, std::uint64_t seed) {
    BatteryResult res;
    Rng rng(derive_seed(seed, 82));
    for (std::size_t n = 0; n < cases; ++n) {
        const std::size_t p = 1 + rng.index(5);
        const std::size_t c = 1 + rng.index(5);
        const std::size_t d_m = 2 + rng.index(7);
        const std::size_t d_q = 2 + rng.index(7);
        MemoryBank bank = detail::random_bank(rng, p, c, d_m);
        RoutingParams proj = RoutingParams::init(d_q, d_m, rng);
        const Tensor query = rng.normal_tensor({d_q});
        const std::size_t k = 1 + rng.index(p * c);
        RouteCache cache;
        const RoutingResult r = route(query, bank, proj, k, cache);

        bool bad = r.selected.size() != k;
        for (std::size_t i = 1; i < r.selected.size() && !bad; ++i)
            if (r.selected[i] <= r.selected[i - 1]) bad = true;
        std::size_t nonzero = 0;
        for (std::size_t s = 0; s < r.pi_k.numel(); ++s) {
            if (r.pi_k.v[s] == 0.0) continue;
            ++nonzero;
            if (std::find(r.selected.begin(), r.selected.end(), s) == r.selected.end())
                bad = true;
            if (r.pi_k.v[s] != r.pi_soft.v[s]) bad = true;
        }
        if (nonzero != k) bad = true;
        ++res.cases;
        if (bad) ++res.failures;
    }
    return res;
}

/// Every step size the scan actually uses lies inside [delta_min, delta_max].
inline BatteryResult battery_delta_clamp(std::size_t cases, std::uint64_t seed) {
    BatteryResult res;
    Rng rng(derive_seed(seed, 83));
    for (std::size_t n = 0; n < cases; ++n) {
        const std::size_t t_len = 1 + rng.index(12);
        const std::size_t d_v = 2 + rng.index(6);
        SsmConfig cfg;
        cfg.d_h = 2 + rng.index(6);
        cfg.delta_min = rng.uniform(0.01, 0.3);
        cfg.delta_max = cfg.delta_min + rng.uniform(0.05, 1.5);
        cfg.delta_base = rng.uniform(0.02, 1.5);
        cfg.alpha = rng.uniform(0.0, 4.0);
        cfg.rho = rng.uniform(0.0, 2.0);
        cfg.mode = rng.index(2) == 0 ? DeltaMode::score : DeltaMode::anchor;
        SsmParams p = SsmParams::init(d_v, cfg.d_h, rng);
        const Tensor frames = rng.normal_tensor({t_len, d_v});
        const Tensor weights = rng.uniform_tensor({t_len}, 0.0, 1.0);
        Tensor anchor = rng.normal_tensor({d_v});
        while (l2_norm(anchor) < 0.1) anchor = rng.normal_tensor({d_v});
        const ScanDirection dir =
            rng.index(2) == 0 ? ScanDirection::forward : ScanDirection::backward;
        SsmScanCache cache;
        ssm_scan(frames, weights, anchor, p, cfg, dir, cache);
        bool bad = cache.delta.size() != t_len;
        for (double d : cache.delta) {
            if (!std::isfinite(d) || d < cfg.delta_min || d > cfg.delta_max) bad = true;
            const double over = std::max(cfg.delta_min - d, d - cfg.delta_max);
            res.worst = std::max(res.worst, over);
        }
        ++res.cases;
        if (bad) ++res.failures;
    }
    return res;
}

/// Fusion gates form a simplex: nonnegative, summing to one within 1e-12.
inline BatteryResult battery_gate_simplex(std::size_t cases, std::uint64_t seed) {
    BatteryResult res;
    Rng rng(derive_seed(seed, 84));
    for (std::size_t n = 0; n < cases; ++n) {
        const std::size_t t_len = 1 + rng.index(8);
        const std::size_t d_v = 1 + rng.index(8);
        GatedFusionParams p = GatedFusionParams::init(d_v, rng);
        const Tensor frames = rng.normal_tensor({t_len, d_v});
        const Tensor y_ssm = rng.normal_tensor({t_len, d_v});
        const Tensor y_attn = rng.normal_tensor({t_len, d_v});
        const Tensor anchor = rng.normal_tensor({d_v});
        GatedFusionCache cache;
        TemporalOutput out;
        gated_fusion(frames, y_ssm, y_attn, anchor, p, cache, out);
        bool bad = out.gates.numel() != 3;
        double sum = 0.0;
        for (double g : out.gates.v) {
            if (!std::isfinite(g) || g < 0.0) bad = true;
            sum += g;
        }
        const double gap = std::fabs(sum - 1.0);
        res.worst = std::max(res.worst, gap);
        ++res.cases;
        if (bad || gap > 1e-12) ++res.failures;
    }
    return res;
}

/// Popularity centroids respect the quantile partition order: no slot of a
/// lower partition carries a higher centroid than any slot of a higher one.
inline BatteryResult battery_quantile_monotone(std::size_t cases, std::uint64_t seed) {
    BatteryResult res;
    Rng rng(derive_seed(seed, 85));
    for (std::size_t n = 0; n < cases; ++n) {
        const std::size_t count = 24;
        const std::size_t p_count = 3;
        const std::size_t c_count = 2;
        const Tensor emb = rng.normal_tensor({count, 4});
        std::vector<double> labels(count);
        for (double& y : labels) y = rng.normal(0.0, 3.0);
        const MemoryBank bank =
            init_bank(emb, labels, p_count, c_count, rng.next_u64());
        bool bad = false;
        for (std::size_t p = 0; p + 1 < p_count; ++p) {
            double hi = -1e300, lo = 1e300;
            for (std::size_t c = 0; c < c_count; ++c) {
                hi = std::max(hi, bank.mu.v[p * c_count + c]);
                lo = std::min(lo, bank.mu.v[(p + 1) * c_count + c]);
            }
            res.worst = std::max(res.worst, hi - lo);
            if (hi > lo + 1e-9) bad = true;
        }
        ++res.cases;
        if (bad) ++res.failures;
    }
    return res;
}

/// total = reg + lambda_pref * pref + lambda_bal * balance, exactly as the
/// breakdown reports it.
inline BatteryResult battery_loss_additivity(std::size_t cases, std::uint64_t seed) {
    BatteryResult res;
    Rng rng(derive_seed(seed, 86));

    ModelConfig cfg;
    cfg.temporal.d_v = 4;
    cfg.temporal.score_hidden = 4;
    cfg.temporal.ssm.d_h = 4;
    cfg.temporal.attn.d_a = 4;
    cfg.temporal.attn.w_base = 3.0;
    cfg.d_t = 3;
    cfg.d_u = 2;
    cfg.d_m = 6;
    cfg.d_c = 6;
    cfg.l_ca = 1;
    cfg.head_hidden = 6;
    cfg.p_count = 2;
    cfg.c_count = 2;
    cfg.k_top = 3;
    Rng init_rng(derive_seed(seed, 87));
    StapModel model = StapModel::init(cfg, init_rng);

    SampleBatch seed_items;
    for (std::size_t i = 0; i < 8; ++i) {
        seed_items.frames.push_back(init_rng.normal_tensor({5, cfg.temporal.d_v}));
        seed_items.text.push_back(init_rng.normal_tensor({3, cfg.d_t}));
        seed_items.meta.push_back(init_rng.normal_tensor({cfg.d_u}));
        seed_items.labels.push_back(init_rng.normal(0.0, 2.0));
    }
    init_model_bank(model, seed_items, derive_seed(seed, 88));

    for (std::size_t n = 0; n < cases; ++n) {
        model.cfg.lambda_pref = rng.uniform(0.0, 2.0);
        model.cfg.lambda_bal = rng.uniform(0.0, 2.0);
        model.cfg.use_balance = rng.index(2) == 0;
        model.cfg.use_dppo = rng.index(2) == 0;
        const std::size_t b = 2 + rng.index(3);
        SampleBatch batch;
        for (std::size_t i = 0; i < b; ++i) {
            batch.frames.push_back(rng.normal_tensor({4 + rng.index(3), 4}));
            batch.text.push_back(rng.normal_tensor({2 + rng.index(2), 3}));
            batch.meta.push_back(rng.normal_tensor({2}));
            batch.labels.push_back(rng.normal(0.0, 2.0));
        }
        BatchCache cache;
        const LossBreakdown loss = model.forward_loss(batch, cache);
        const double recon = loss.reg + loss.lambda_pref * loss.pref +
                             loss.lambda_bal * loss.balance;
        const double gap = std::fabs(loss.total - recon);
        res.worst = std::max(res.worst, gap);
        ++res.cases;
        if (gap > 1e-12) ++res.failures;
    }
    return res;
}

}  // namespace stap::test
