#pragma once

#include <utility>
#include <vector>

#include "stap/tensor.hpp"

namespace stap {

// Numeric floors shared across modules.
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kKlEps = 1e-8;
inline constexpr double kDivGuard = 1e-12;

// ---------------------------------------------------------------------------
// Forward kernels. Every kernel here has a matching hand-derived
// vector-Jacobian product below; the pair is what grad_check exercises.
// ---------------------------------------------------------------------------

/// [m,k] x [k,n] -> [m,n]. A rank-1 rhs of length k is treated as [k,1]
/// collapsed back to rank-1.
Tensor matmul(const Tensor& a, const Tensor& b);

/// matmul of optionally transposed operands (both must be rank-2).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b);

/// [m,k] x [k] -> [m].
Tensor matvec(const Tensor& a, const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
/// a += b, shapes must match.
void add_inplace(Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);       // tanh approximation
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor relu(const Tensor& x);

double l2_norm(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);
double cosine_similarity(const Tensor& a, const Tensor& b);

/// Mean over rows: [t,d] -> [d].
Tensor mean_pool_rows(const Tensor& x);

/// Rank-1 concatenation.
Tensor concat(const std::vector<Tensor>& parts);

/// Numerically stable softmax along `axis` of a rank-1 or rank-2 tensor,
/// with logits divided by `temperature` first.
Tensor softmax(const Tensor& x, std::size_t axis, double temperature);

/// Rank-1 layer norm with affine parameters gamma, beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

/// Mean elementwise Huber value; quadratic for |r|<=delta, linear beyond.
double huber_loss(const Tensor& pred, const Tensor& target, double delta);

/// sum_i p_i ln(p_i / max(q_i, eps)), with 0 ln(0/.) := 0.
double kl_divergence(const Tensor& p, const Tensor& q, double eps = kKlEps);

// ---------------------------------------------------------------------------
// Vector-Jacobian products. `gy` is the upstream gradient with the output's
// shape; scalar-output kernels take a plain double. Returned tensors are
// fresh gradients (callers accumulate).
// ---------------------------------------------------------------------------

std::pair<Tensor, Tensor> matmul_vjp(const Tensor& a, const Tensor& b, const Tensor& gy);
std::pair<Tensor, Tensor> matvec_vjp(const Tensor& a, const Tensor& x, const Tensor& gy);

std::pair<Tensor, Tensor> mul_vjp(const Tensor& a, const Tensor& b, const Tensor& gy);

Tensor tanh_vjp(const Tensor& x, const Tensor& gy);
Tensor sigmoid_vjp(const Tensor& x, const Tensor& gy);
Tensor gelu_vjp(const Tensor& x, const Tensor& gy);
Tensor softplus_vjp(const Tensor& x, const Tensor& gy);
Tensor exp_vjp(const Tensor& x, const Tensor& gy);
Tensor relu_vjp(const Tensor& x, const Tensor& gy);

Tensor l2_norm_vjp(const Tensor& x, double gy);
std::pair<Tensor, Tensor> cosine_similarity_vjp(const Tensor& a, const Tensor& b, double gy);

Tensor mean_pool_rows_vjp(const Tensor& x, const Tensor& gy);

std::vector<Tensor> concat_vjp(const std::vector<Tensor>& parts, const Tensor& gy);

/// VJP through softmax given the forward output `y` (not the logits).
Tensor softmax_vjp(const Tensor& y, std::size_t axis, double temperature, const Tensor& gy);

struct LayerNormGrads {
    Tensor dx, dgamma, dbeta;
};
LayerNormGrads layer_norm_vjp(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps, const Tensor& gy);

std::pair<Tensor, Tensor> huber_loss_vjp(const Tensor& pred, const Tensor& target,
                                         double delta, double gy);

std::pair<Tensor, Tensor> kl_divergence_vjp(const Tensor& p, const Tensor& q, double eps,
                                            double gy);

// Scalar helpers used by hand-written module backwards.
double sigmoid_s(double x);
double softplus_s(double x);
double gelu_s(double x);
double gelu_grad_s(double x);

}  // namespace stap
