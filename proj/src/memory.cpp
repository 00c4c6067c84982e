#include "stap/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "stap/kernels.hpp"

namespace stap {

namespace {

double dist2(const Tensor& points, std::size_t row, const Tensor& centers,
             std::size_t center) {
    const std::size_t d = points.dim(1);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = points.at(row, j) - centers.at(center, j);
        s += diff * diff;
    }
    return s;
}

}  // namespace

// --------------------------------------------------------------------------
// k-means and bank construction
// --------------------------------------------------------------------------

std::pair<Tensor, std::vector<std::size_t>> kmeans_cluster(const Tensor& points,
                                                           std::size_t c_count, Rng& rng,
                                                           std::size_t max_iter,
                                                           double tol) {
    if (points.rank() != 2)
        throw ShapeError("kmeans_cluster: points must be [n, d], got " + points.shape_str());
    const std::size_t n = points.dim(0);
    const std::size_t d = points.dim(1);
    if (c_count == 0 || c_count > n)
        throw std::invalid_argument("kmeans_cluster: need 1 <= C <= point count");

    // k-means++ seeding.
    Tensor centers({c_count, d});
    std::vector<double> min_d2(n, 0.0);
    {
        const std::size_t first = rng.index(n);
        for (std::size_t j = 0; j < d; ++j) centers.at(0, j) = points.at(first, j);
        for (std::size_t i = 0; i < n; ++i) min_d2[i] = dist2(points, i, centers, 0);
        for (std::size_t c = 1; c < c_count; ++c) {
            double total = std::accumulate(min_d2.begin(), min_d2.end(), 0.0);
            std::size_t pick;
            if (total <= 0.0) {
                pick = rng.index(n);
            } else {
                const double r = rng.uniform(0.0, total);
                double acc = 0.0;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += min_d2[i];
                    if (acc >= r) {
                        pick = i;
                        break;
                    }
                }
            }
            for (std::size_t j = 0; j < d; ++j) centers.at(c, j) = points.at(pick, j);
            for (std::size_t i = 0; i < n; ++i)
                min_d2[i] = std::min(min_d2[i], dist2(points, i, centers, c));
        }
    }

    std::vector<std::size_t> assign(n, 0);
    std::vector<std::size_t> counts(c_count, 0);
    auto assign_all = [&]() {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_c = 0;
            for (std::size_t c = 0; c < c_count; ++c) {
                const double d2 = dist2(points, i, centers, c);
                if (d2 < best) {
                    best = d2;
                    best_c = c;
                }
            }
            assign[i] = best_c;
            ++counts[best_c];
        }
    };
    auto fix_empty = [&]() {
        for (std::size_t c = 0; c < c_count; ++c) {
            if (counts[c] != 0) continue;
            // Re-seed from the point farthest from its own center, taken from
            // a cluster that can spare it.
            double far_d = -1.0;
            std::size_t far_i = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[assign[i]] <= 1) continue;
                const double d2 = dist2(points, i, centers, assign[i]);
                if (d2 > far_d) {
                    far_d = d2;
                    far_i = i;
                }
            }
            --counts[assign[far_i]];
            assign[far_i] = c;
            ++counts[c];
            for (std::size_t j = 0; j < d; ++j) centers.at(c, j) = points.at(far_i, j);
        }
    };

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        assign_all();
        fix_empty();
        Tensor next({c_count, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) next.at(assign[i], j) += points.at(i, j);
        double max_shift = 0.0;
        for (std::size_t c = 0; c < c_count; ++c) {
            double shift2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                next.at(c, j) /= static_cast<double>(counts[c]);
                const double diff = next.at(c, j) - centers.at(c, j);
                shift2 += diff * diff;
            }
            max_shift = std::max(max_shift, std::sqrt(shift2));
        }
        centers = next;
        if (max_shift <= tol) break;
    }
    assign_all();
    fix_empty();
    return {centers, assign};
}

MemoryBank init_bank(const Tensor& embeddings, const std::vector<double>& labels,
                     std::size_t p_count, std::size_t c_count, std::uint64_t seed) {
    if (embeddings.rank() != 2)
        throw ShapeError("init_bank: embeddings must be [N, d_m], got " +
                         embeddings.shape_str());
    const std::size_t n = embeddings.dim(0);
    const std::size_t d_m = embeddings.dim(1);
    if (labels.size() != n)
        throw ShapeError("init_bank: label count != embedding count");
    if (p_count == 0 || c_count == 0)
        throw std::invalid_argument("init_bank: P and C must be positive");
    if (n < p_count * c_count)
        throw std::invalid_argument("init_bank: need at least P*C samples, got " +
                                    std::to_string(n));
    for (double y : labels)
        if (!std::isfinite(y)) throw DataError("init_bank: non-finite label");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (labels[a] != labels[b]) return labels[a] < labels[b];
        return a < b;
    });

    MemoryBank bank;
    bank.p_count = p_count;
    bank.c_count = c_count;
    bank.d_m = d_m;
    bank.m = Param{"bank.m", Tensor({p_count * c_count, d_m})};
    bank.mu = Tensor({p_count * c_count});

    std::size_t start = 0;
    for (std::size_t p = 0; p < p_count; ++p) {
        const std::size_t size = n / p_count + (p < n % p_count ? 1 : 0);
        Tensor pts({size, d_m});
        std::vector<double> part_labels(size);
        for (std::size_t i = 0; i < size; ++i) {
            const std::size_t src = order[start + i];
            part_labels[i] = labels[src];
            for (std::size_t j = 0; j < d_m; ++j) pts.at(i, j) = embeddings.at(src, j);
        }
        start += size;

        Rng rng(derive_seed(seed, 1000 + p));
        auto [centers, assign] = kmeans_cluster(pts, c_count, rng);
        double part_mean = 0.0;
        for (double y : part_labels) part_mean += y;
        part_mean /= static_cast<double>(size);
        for (std::size_t c = 0; c < c_count; ++c) {
            const std::size_t slot = p * c_count + c;
            for (std::size_t j = 0; j < d_m; ++j)
                bank.m.value.at(slot, j) = centers.at(c, j);
            double lab = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < size; ++i)
                if (assign[i] == c) {
                    lab += part_labels[i];
                    ++cnt;
                }
            bank.mu.v[slot] = cnt == 0 ? part_mean : lab / static_cast<double>(cnt);
        }
    }
    return bank;
}

// --------------------------------------------------------------------------
// Routing
// --------------------------------------------------------------------------

RoutingParams RoutingParams::init(std::size_t d_q, std::size_t d_m, Rng& rng) {
    RoutingParams p;
    p.wq = Param{"route.wq", init_weight(rng, d_m, d_q)};
    return p;
}

std::vector<Param*> RoutingParams::params() { return {&wq}; }

RoutingResult route(const Tensor& query, const MemoryBank& bank, RoutingParams& proj,
                    std::size_t k, RouteCache& cache, bool renormalize) {
    const std::size_t n_slots = bank.slots();
    if (k == 0 || k > n_slots)
        throw std::invalid_argument("route: K must satisfy 1 <= K <= P*C, got " +
                                    std::to_string(k));
    if (query.rank() != 1 || query.dim(0) != proj.wq.value.dim(1))
        throw ShapeError("route: query length != W_q columns");

    cache.q_lin = matvec(proj.wq.value, query);
    Tensor unit({bank.d_m});
    unit.fill(1.0);
    cache.q_norm = layer_norm(cache.q_lin, unit, Tensor({bank.d_m}));
    cache.q_prime = tanh(cache.q_norm);

    RoutingResult res;
    res.scores = Tensor({bank.p_count, bank.c_count});
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(bank.d_m));
    for (std::size_t s = 0; s < n_slots; ++s) {
        double dp = 0.0;
        for (std::size_t j = 0; j < bank.d_m; ++j)
            dp += cache.q_prime.v[j] * bank.m.value.at(s, j);
        res.scores.v[s] = dp * inv_sqrt;
    }
    Tensor flat({n_slots}, res.scores.v);
    Tensor pi = softmax(flat, 0, bank.tau);
    res.pi_soft = Tensor({bank.p_count, bank.c_count}, pi.v);

    std::vector<std::size_t> idx(n_slots);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (res.pi_soft.v[a] != res.pi_soft.v[b]) return res.pi_soft.v[a] > res.pi_soft.v[b];
        return a < b;
    });
    res.selected.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(res.selected.begin(), res.selected.end());

    res.pi_k = Tensor({bank.p_count, bank.c_count});
    double kept = 0.0;
    for (std::size_t s : res.selected) {
        res.pi_k.v[s] = res.pi_soft.v[s];
        kept += res.pi_soft.v[s];
    }
    if (renormalize && kept > kDivGuard)
        for (std::size_t s : res.selected) res.pi_k.v[s] /= kept;

    res.z_aug = Tensor({bank.d_m});
    res.c_pop = 0.0;
    for (std::size_t s : res.selected) {
        const double g = res.pi_k.v[s];
        for (std::size_t j = 0; j < bank.d_m; ++j)
            res.z_aug.v[j] += g * bank.m.value.at(s, j);
        res.c_pop += g * bank.mu.v[s];
    }
    cache.res = res;
    return res;
}

Tensor route_backward(const Tensor& query, MemoryBank& bank, RoutingParams& proj,
                      const RouteCache& cache, const Tensor& dz_aug, double dc_pop,
                      const Tensor& dpi_soft, bool renormalize) {
    const std::size_t n_slots = bank.slots();
    const RoutingResult& res = cache.res;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(bank.d_m));

    // Gate-level gradient from the aggregation outputs.
    std::vector<double> dgate(n_slots, 0.0);
    for (std::size_t s : res.selected) {
        double g = dc_pop * bank.mu.v[s];
        for (std::size_t j = 0; j < bank.d_m; ++j) {
            g += dz_aug.v[j] * bank.m.value.at(s, j);
            bank.m.grad.at(s, j) += res.pi_k.v[s] * dz_aug.v[j];
        }
        dgate[s] = g;
    }

    // Map gate gradient onto pi_soft (mask constant; renormalization folds in
    // its quotient rule when enabled).
    Tensor dpi({n_slots});
    if (dpi_soft.numel() != 0) {
        require_same_shape(dpi_soft, res.pi_soft, "route_backward");
        for (std::size_t s = 0; s < n_slots; ++s) dpi.v[s] = dpi_soft.v[s];
    }
    if (renormalize) {
        double kept = 0.0;
        for (std::size_t s : res.selected) kept += res.pi_soft.v[s];
        if (kept > kDivGuard) {
            double mix = 0.0;
            for (std::size_t s : res.selected) mix += dgate[s] * res.pi_k.v[s];
            for (std::size_t s : res.selected) dpi.v[s] += (dgate[s] - mix) / kept;
        }
    } else {
        for (std::size_t s : res.selected) dpi.v[s] += dgate[s];
    }

    // Softmax with temperature: a = S/tau, pi = softmax(a).
    double inner = 0.0;
    for (std::size_t s = 0; s < n_slots; ++s) inner += dpi.v[s] * res.pi_soft.v[s];
    Tensor ds({n_slots});
    double dtau = 0.0;
    for (std::size_t s = 0; s < n_slots; ++s) {
        const double da = res.pi_soft.v[s] * (dpi.v[s] - inner);
        ds.v[s] = da / bank.tau;
        dtau -= da * res.scores.v[s] / (bank.tau * bank.tau);
    }
    bank.tau_grad += dtau;

    // Scores: S_s = <q', M_s>/sqrt(d_m).
    Tensor dq_prime({bank.d_m});
    for (std::size_t s = 0; s < n_slots; ++s) {
        const double g = ds.v[s] * inv_sqrt;
        if (g == 0.0) continue;
        for (std::size_t j = 0; j < bank.d_m; ++j) {
            dq_prime.v[j] += g * bank.m.value.at(s, j);
            bank.m.grad.at(s, j) += g * cache.q_prime.v[j];
        }
    }

    // q' = tanh(LN(W_q q)), LN non-affine.
    Tensor dq_norm({bank.d_m});
    for (std::size_t j = 0; j < bank.d_m; ++j)
        dq_norm.v[j] = dq_prime.v[j] * (1.0 - cache.q_prime.v[j] * cache.q_prime.v[j]);
    Tensor unit({bank.d_m});
    unit.fill(1.0);
    LayerNormGrads ln =
        layer_norm_vjp(cache.q_lin, unit, Tensor({bank.d_m}), kLayerNormEps, dq_norm);
    auto wq_grads = matvec_vjp(proj.wq.value, query, ln.dx);
    add_inplace(proj.wq.grad, wq_grads.first);
    return wq_grads.second;
}

// --------------------------------------------------------------------------
// Regularizers
// --------------------------------------------------------------------------

Tensor zipf_prior(std::size_t p_count, double s) {
    Tensor prior({p_count});
    double total = 0.0;
    for (std::size_t p = 0; p < p_count; ++p) {
        const double rank = static_cast<double>(p_count - p);
        prior.v[p] = std::pow(rank, -s);
        total += prior.v[p];
    }
    for (std::size_t p = 0; p < p_count; ++p) prior.v[p] /= total;
    return prior;
}

namespace {

void check_batch_pi(const Tensor& batch_pi) {
    if (batch_pi.rank() != 3)
        throw ShapeError("balance/dppo: batch pi must be [B, P, C], got " +
                         batch_pi.shape_str());
    const std::size_t b = batch_pi.dim(0);
    const std::size_t slots = batch_pi.dim(1) * batch_pi.dim(2);
    for (std::size_t i = 0; i < b; ++i) {
        double sum = 0.0;
        for (std::size_t s = 0; s < slots; ++s) {
            const double v = batch_pi.v[i * slots + s];
            if (!(v >= -1e-12) || !std::isfinite(v))
                throw DataError("balance/dppo: negative or non-finite probability");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw DataError("balance/dppo: row " + std::to_string(i) +
                            " does not sum to 1");
    }
}

struct Marginals {
    Tensor part;     // [P]
    Tensor cluster;  // [C]
};

Marginals batch_marginals(const Tensor& batch_pi) {
    const std::size_t b = batch_pi.dim(0);
    const std::size_t p_count = batch_pi.dim(1);
    const std::size_t c_count = batch_pi.dim(2);
    Marginals m{Tensor({p_count}), Tensor({c_count})};
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t p = 0; p < p_count; ++p)
            for (std::size_t c = 0; c < c_count; ++c) {
                const double v = batch_pi.v[(i * p_count + p) * c_count + c] * inv_b;
                m.part.v[p] += v;
                m.cluster.v[c] += v;
            }
    return m;
}

}  // namespace

double load_balance_loss(const Tensor& batch_pi, const BalanceConfig& cfg) {
    check_batch_pi(batch_pi);
    const Marginals m = batch_marginals(batch_pi);
    const Tensor zipf = zipf_prior(batch_pi.dim(1), cfg.zipf_s);
    Tensor uniform({batch_pi.dim(2)});
    uniform.fill(1.0 / static_cast<double>(batch_pi.dim(2)));
    return cfg.gamma_lb * kl_divergence(m.part, zipf) +
           cfg.beta_lb * kl_divergence(m.cluster, uniform);
}

Tensor load_balance_backward(const Tensor& batch_pi, const BalanceConfig& cfg, double gy) {
    check_batch_pi(batch_pi);
    const std::size_t b = batch_pi.dim(0);
    const std::size_t p_count = batch_pi.dim(1);
    const std::size_t c_count = batch_pi.dim(2);
    const Marginals m = batch_marginals(batch_pi);
    const Tensor zipf = zipf_prior(p_count, cfg.zipf_s);
    Tensor uniform({c_count});
    uniform.fill(1.0 / static_cast<double>(c_count));

    const Tensor dpart = kl_divergence_vjp(m.part, zipf, kKlEps, gy * cfg.gamma_lb).first;
    const Tensor dclu =
        kl_divergence_vjp(m.cluster, uniform, kKlEps, gy * cfg.beta_lb).first;

    Tensor dpi(batch_pi.shape);
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t p = 0; p < p_count; ++p)
            for (std::size_t c = 0; c < c_count; ++c)
                dpi.v[(i * p_count + p) * c_count + c] =
                    (dpart.v[p] + dclu.v[c]) * inv_b;
    return dpi;
}

double pairing_margin(const std::vector<double>& labels, double margin_scale) {
    if (labels.empty()) return 0.0;
    double mean = 0.0;
    for (double y : labels) mean += y;
    mean /= static_cast<double>(labels.size());
    double var = 0.0;
    for (double y : labels) var += (y - mean) * (y - mean);
    var /= static_cast<double>(labels.size());
    return margin_scale * std::sqrt(var);
}

std::vector<PrefPair> make_preference_pairs(const std::vector<double>& labels,
                                            double margin) {
    const std::size_t n = labels.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (labels[a] != labels[b]) return labels[a] > labels[b];
        return a < b;
    });
    std::vector<std::size_t> uses(n, 0);
    std::vector<PrefPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pos = order[i];
        for (std::size_t j = i + 1; j < n && uses[pos] < 2; ++j) {
            const std::size_t neg = order[j];
            if (uses[neg] >= 2) continue;
            if (labels[pos] - labels[neg] > margin) {
                pairs.push_back({pos, neg});
                ++uses[pos];
                ++uses[neg];
            }
        }
    }
    return pairs;
}

namespace {

double pair_gap(const Tensor& batch_pi, std::size_t pos, std::size_t neg) {
    const std::size_t slots = batch_pi.dim(1) * batch_pi.dim(2);
    double gap = 0.0;
    for (std::size_t s = 0; s < slots; ++s) {
        const double p = std::max(batch_pi.v[pos * slots + s], kKlEps);
        const double q = std::max(batch_pi.v[neg * slots + s], kKlEps);
        gap += std::log(p) - std::log(q);
    }
    return gap;
}

}  // namespace

DppoOut dppo_loss(const Tensor& batch_pi, const std::vector<PrefPair>& pairs,
                  double gamma_pref) {
    check_batch_pi(batch_pi);
    if (pairs.empty()) return DppoOut{0.0, true};
    double loss = 0.0;
    for (const PrefPair& pr : pairs) {
        const double gap = pair_gap(batch_pi, pr.pos, pr.neg);
        loss += softplus_s(-gamma_pref * gap);  // -ln sigmoid(gamma * gap)
    }
    return DppoOut{loss / static_cast<double>(pairs.size()), false};
}

Tensor dppo_backward(const Tensor& batch_pi, const std::vector<PrefPair>& pairs,
                     double gamma_pref, double gy) {
    Tensor dpi(batch_pi.shape);
    if (pairs.empty()) return dpi;
    const std::size_t slots = batch_pi.dim(1) * batch_pi.dim(2);
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    for (const PrefPair& pr : pairs) {
        const double gap = pair_gap(batch_pi, pr.pos, pr.neg);
        const double dgap = -gy * inv_n * gamma_pref * sigmoid_s(-gamma_pref * gap);
        for (std::size_t s = 0; s < slots; ++s) {
            const double p = batch_pi.v[pr.pos * slots + s];
            const double q = batch_pi.v[pr.neg * slots + s];
            if (p > kKlEps) dpi.v[pr.pos * slots + s] += dgap / p;
            if (q > kKlEps) dpi.v[pr.neg * slots + s] -= dgap / q;
        }
    }
    return dpi;
}

DppoOut dppo_loss_pairs(const std::vector<std::pair<Tensor, Tensor>>& pairs,
                        double gamma_pref) {
    if (pairs.empty()) return DppoOut{0.0, true};
    double loss = 0.0;
    for (const auto& [pos, neg] : pairs) {
        require_same_shape(pos, neg, "dppo_loss_pairs");
        double gap = 0.0;
        for (std::size_t s = 0; s < pos.numel(); ++s)
            gap += std::log(std::max(pos.v[s], kKlEps)) -
                   std::log(std::max(neg.v[s], kKlEps));
        loss += softplus_s(-gamma_pref * gap);
    }
    return DppoOut{loss / static_cast<double>(pairs.size()), false};
}

// --------------------------------------------------------------------------
// Bank maintenance
// --------------------------------------------------------------------------

void update_bank(MemoryBank& bank, const std::vector<RoutingResult>& routes,
                 const std::vector<Tensor>& projected_queries,
                 const std::vector<double>& labels, double eta, double tau_lr) {
    if (eta < 0.0 || eta > 1.0)
        throw std::invalid_argument("update_bank: eta must lie in [0, 1]");
    if (routes.size() != projected_queries.size() || routes.size() != labels.size())
        throw ShapeError("update_bank: routes, queries, labels must align");

    const std::size_t n_slots = bank.slots();
    std::vector<double> mass(n_slots, 0.0);
    Tensor q_sum({n_slots, bank.d_m});
    std::vector<double> label_sum(n_slots, 0.0);
    for (std::size_t b = 0; b < routes.size(); ++b) {
        for (std::size_t s : routes[b].selected) {
            const double g = routes[b].pi_k.v[s];
            mass[s] += g;
            label_sum[s] += g * labels[b];
            for (std::size_t j = 0; j < bank.d_m; ++j)
                q_sum.at(s, j) += g * projected_queries[b].v[j];
        }
    }
    for (std::size_t s = 0; s < n_slots; ++s) {
        if (mass[s] <= kDivGuard) continue;
        for (std::size_t j = 0; j < bank.d_m; ++j) {
            const double q_agg = q_sum.at(s, j) / mass[s];
            bank.m.value.at(s, j) = (1.0 - eta) * bank.m.value.at(s, j) + eta * q_agg;
        }
        bank.mu.v[s] = (1.0 - eta) * bank.mu.v[s] + eta * (label_sum[s] / mass[s]);
    }

    bank.tau = std::clamp(bank.tau - tau_lr * bank.tau_grad, bank.tau_min, bank.tau_max);
    bank.tau_grad = 0.0;
}

SlotStats slot_statistics(const std::vector<Tensor>& pi_history, std::size_t top_k) {
    if (pi_history.empty())
        throw std::invalid_argument("slot_statistics: empty history");
    SlotStats stats;
    stats.top_k = top_k;
    stats.activation = Tensor(pi_history.front().shape);
    for (const Tensor& pi : pi_history) {
        require_same_shape(pi, stats.activation, "slot_statistics");
        add_inplace(stats.activation, pi);
    }
    const double inv_n = 1.0 / static_cast<double>(pi_history.size());
    for (double& v : stats.activation.v) v *= inv_n;

    const std::size_t n = stats.activation.numel();
    double total = 0.0;
    for (double v : stats.activation.v) total += v;
    if (total <= kDivGuard) return stats;

    double entropy = 0.0;
    for (double v : stats.activation.v) {
        const double p = v / total;
        if (p > 0.0) entropy -= p * std::log(p);
    }
    stats.entropy = n > 1 ? entropy / std::log(static_cast<double>(n)) : 0.0;

    std::vector<double> sorted(stats.activation.v);
    std::sort(sorted.begin(), sorted.end());
    double gini = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        gini += (2.0 * static_cast<double>(i + 1) - static_cast<double>(n) - 1.0) *
                sorted[i];
    stats.gini = gini / (static_cast<double>(n) * total);

    double share = 0.0;
    const std::size_t k = std::min(top_k, n);
    for (std::size_t i = 0; i < k; ++i) share += sorted[n - 1 - i];
    stats.top_share = share / total;
    return stats;
}

}  // namespace stap
