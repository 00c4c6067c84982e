#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "stap/rng.hpp"
#include "stap/tensor.hpp"

namespace stap {

// ---------------------------------------------------------------------------
// Topology-aware memory bank: a P x C grid of prototype slots with per-slot
// popularity centroids and a learnable clamped routing temperature.
// ---------------------------------------------------------------------------

struct MemoryBank {
    std::size_t p_count = 0;  // label partitions
    std::size_t c_count = 0;  // clusters per partition
    std::size_t d_m = 0;
    Param m;        // [P*C, d_m] slot grid; row p*C+c is slot (p, c)
    Tensor mu;      // [P*C] popularity centroids, label units
    double tau = 1.0;
    double tau_min = 0.1;
    double tau_max = 5.0;
    double tau_grad = 0.0;  // accumulated; consumed and cleared by update_bank

    std::size_t slots() const { return p_count * c_count; }
};

/// Quantile-partitions samples by label (sizes differ by at most 1), then runs
/// k-means (k-means++ seeding, <=100 iterations, tol 1e-6) with C centers
/// inside each partition. mu is the mean label of each converged cluster.
MemoryBank init_bank(const Tensor& embeddings, const std::vector<double>& labels,
                     std::size_t p_count, std::size_t c_count, std::uint64_t seed);

/// Standalone k-means used by init_bank; exposed for oracle tests.
/// Returns centers [C, d] and the final assignment per point.
std::pair<Tensor, std::vector<std::size_t>> kmeans_cluster(const Tensor& points,
                                                           std::size_t c_count, Rng& rng,
                                                           std::size_t max_iter = 100,
                                                           double tol = 1e-6);

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

struct RoutingParams {
    Param wq;  // [d_m, d_q]

    static RoutingParams init(std::size_t d_q, std::size_t d_m, Rng& rng);
    std::vector<Param*> params();
};

struct RoutingResult {
    Tensor scores;    // [P, C]
    Tensor pi_soft;   // [P, C], sums to 1 over all slots
    Tensor pi_k;      // [P, C], top-K mask applied, no renormalization
    std::vector<std::size_t> selected;  // K flat slot indices, ascending
    Tensor z_aug;     // [d_m]
    double c_pop = 0.0;
};

struct RouteCache {
    Tensor q_lin;    // W_q q
    Tensor q_norm;   // LN(q_lin), non-affine
    Tensor q_prime;  // tanh(q_norm)
    RoutingResult res;
};

/// q' = tanh(LN(W_q q)); S_pc = <q', M_pc>/sqrt(d_m); pi_soft = softmax(S/tau)
/// over all slots; top-K kept by value, ties broken by lower flat index.
/// `renormalize` rescales the kept gates to sum 1 (ablation flag, off by
/// default).
RoutingResult route(const Tensor& query, const MemoryBank& bank, RoutingParams& proj,
                    std::size_t k, RouteCache& cache, bool renormalize = false);

/// Straight-through backward: the hard selection mask is constant; gradients
/// to S (hence tau, M, W_q, query) flow through pi_soft restricted to the
/// selected set plus any direct upstream gradient on pi_soft (`dpi_soft` may
/// be empty). Accumulates into proj.wq.grad, bank.m.grad, bank.tau_grad;
/// returns the query gradient.
Tensor route_backward(const Tensor& query, MemoryBank& bank, RoutingParams& proj,
                      const RouteCache& cache, const Tensor& dz_aug, double dc_pop,
                      const Tensor& dpi_soft, bool renormalize = false);

// ---------------------------------------------------------------------------
// Regularizers
// ---------------------------------------------------------------------------

struct BalanceConfig {
    double zipf_s = 1.0;     // power-law exponent over partitions
    double gamma_lb = 0.01;  // partition-marginal weight
    double beta_lb = 0.01;   // cluster-marginal weight
};

/// Zipf prior over partitions; partition P-1 (highest label quantile) has
/// rank 1 and receives the most mass.
Tensor zipf_prior(std::size_t p_count, double s);

/// batch_pi: [B, P, C]. Loss = gamma_lb * KL(partition marginal || zipf) +
/// beta_lb * KL(cluster marginal || uniform), marginals batch-averaged.
double load_balance_loss(const Tensor& batch_pi, const BalanceConfig& cfg);

/// Gradient of load_balance_loss w.r.t. batch_pi, scaled by gy.
Tensor load_balance_backward(const Tensor& batch_pi, const BalanceConfig& cfg, double gy);

struct PrefPair {
    std::size_t pos, neg;
};

/// Greedy margin pairs: items sorted by label descending; each item is used
/// at most twice; a pair requires label[pos] - label[neg] > margin.
std::vector<PrefPair> make_preference_pairs(const std::vector<double>& labels,
                                            double margin);

/// margin = margin_scale * population std of the labels.
double pairing_margin(const std::vector<double>& labels, double margin_scale);

struct DppoOut {
    double loss = 0.0;
    bool no_pairs = false;
};

/// Mean over pairs of -ln sigmoid(gamma_pref * sum_slots [ln pi+ - ln pi-])
/// on full soft probabilities, log-floored at kKlEps.
DppoOut dppo_loss(const Tensor& batch_pi, const std::vector<PrefPair>& pairs,
                  double gamma_pref);

Tensor dppo_backward(const Tensor& batch_pi, const std::vector<PrefPair>& pairs,
                     double gamma_pref, double gy);

/// Convenience overload on explicit (pi+, pi-) tensors.
DppoOut dppo_loss_pairs(const std::vector<std::pair<Tensor, Tensor>>& pairs,
                        double gamma_pref);

// ---------------------------------------------------------------------------
// Bank maintenance and health statistics
// ---------------------------------------------------------------------------

/// EMA refresh of every slot selected by any batch item: M <- (1-eta) M +
/// eta * q_agg with q_agg the gate-weighted mean of projected queries routed
/// to the slot (detached), mu likewise toward gate-weighted labels. tau is
/// stepped by its accumulated gradient (tau_lr) and clamped.
void update_bank(MemoryBank& bank, const std::vector<RoutingResult>& routes,
                 const std::vector<Tensor>& projected_queries,
                 const std::vector<double>& labels, double eta, double tau_lr);

struct SlotStats {
    Tensor activation;      // [P, C] mean pi_soft over the history
    double entropy = 0.0;   // Shannon entropy / ln(P*C), in [0, 1]
    double gini = 0.0;      // 0 for uniform
    double top_share = 0.0; // mass of the top_k most active slots
    std::size_t top_k = 5;
};

SlotStats slot_statistics(const std::vector<Tensor>& pi_history, std::size_t top_k = 5);

}  // namespace stap
