#include "stap/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stap {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void require_rank(const Tensor& t, std::size_t r, const char* where) {
    if (t.rank() != r) {
        throw ShapeError(std::string(where) + ": expected rank " + std::to_string(r) +
                         ", got " + t.shape_str());
    }
}

template <typename F>
Tensor map(const Tensor& x, F f) {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.v[i] = f(x.v[i]);
    return y;
}

}  // namespace

double sigmoid_s(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_s(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double gelu_s(double x) {
    double u = kGeluC * (x + kGeluA * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_s(double x) {
    double u = kGeluC * (x + kGeluA * x * x * x);
    double t = std::tanh(u);
    double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (b.rank() == 1) return matvec(a, b);
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.shape[1] != b.shape[0]) {
        throw ShapeError("matmul: inner dims " + a.shape_str() + " vs " + b.shape_str());
    }
    std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor y({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            double av = a.v[i * k + l];
            if (av == 0.0) continue;
            const double* brow = &b.v[l * n];
            double* yrow = &y.v[i * n];
            for (std::size_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
    return y;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = trans_a ? a.shape[1] : a.shape[0];
    const std::size_t k = trans_a ? a.shape[0] : a.shape[1];
    const std::size_t kb = trans_b ? b.shape[1] : b.shape[0];
    const std::size_t n = trans_b ? b.shape[0] : b.shape[1];
    if (k != kb) {
        throw ShapeError("matmul: inner dims " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor y({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < k; ++l) {
                const double av = trans_a ? a.at(l, i) : a.at(i, l);
                const double bv = trans_b ? b.at(j, l) : b.at(l, j);
                s += av * bv;
            }
            y.v[i * n + j] = s;
        }
    }
    return y;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    require_rank(a, 2, "matvec");
    require_rank(x, 1, "matvec");
    if (a.shape[1] != x.shape[0]) {
        throw ShapeError("matvec: dims " + a.shape_str() + " vs " + x.shape_str());
    }
    std::size_t m = a.shape[0], k = a.shape[1];
    Tensor y({m});
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        const double* arow = &a.v[i * k];
        for (std::size_t l = 0; l < k; ++l) s += arow[l] * x.v[l];
        y.v[i] = s;
    }
    return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor y(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) y.v[i] = a.v[i] + b.v[i];
    return y;
}

void add_inplace(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add_inplace");
    for (std::size_t i = 0; i < a.numel(); ++i) a.v[i] += b.v[i];
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor y(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) y.v[i] = a.v[i] - b.v[i];
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor y(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) y.v[i] = a.v[i] * b.v[i];
    return y;
}

Tensor scale(const Tensor& a, double s) {
    Tensor y(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) y.v[i] = a.v[i] * s;
    return y;
}

Tensor tanh(const Tensor& x) { return map(x, [](double t) { return std::tanh(t); }); }
Tensor sigmoid(const Tensor& x) { return map(x, sigmoid_s); }
Tensor gelu(const Tensor& x) { return map(x, gelu_s); }
Tensor softplus(const Tensor& x) { return map(x, softplus_s); }
Tensor exp(const Tensor& x) { return map(x, [](double t) { return std::exp(t); }); }
Tensor relu(const Tensor& x) { return map(x, [](double t) { return t > 0.0 ? t : 0.0; }); }

double l2_norm(const Tensor& x) {
    double s = 0.0;
    for (double t : x.v) s += t * t;
    return std::sqrt(s);
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.v[i] * b.v[i];
    return s;
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "cosine_similarity");
    double na = std::max(l2_norm(a), kDivGuard);
    double nb = std::max(l2_norm(b), kDivGuard);
    return dot(a, b) / (na * nb);
}

Tensor mean_pool_rows(const Tensor& x) {
    require_rank(x, 2, "mean_pool_rows");
    std::size_t t = x.shape[0], d = x.shape[1];
    Tensor y({d});
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < d; ++j) y.v[j] += x.v[i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) y.v[j] /= static_cast<double>(t);
    return y;
}

Tensor concat(const std::vector<Tensor>& parts) {
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 1) throw ShapeError("concat: rank-1 parts only, got " + p.shape_str());
        n += p.numel();
    }
    Tensor y({n});
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::copy(p.v.begin(), p.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(off));
        off += p.numel();
    }
    return y;
}

namespace {

// Iterates the rank-1/rank-2 slices a softmax runs over.
struct AxisView {
    std::size_t slices, len, stride, slice_stride;
};

AxisView axis_view(const Tensor& x, std::size_t axis, const char* where) {
    if (x.rank() == 1) {
        if (axis != 0) throw ShapeError(std::string(where) + ": axis out of range for rank-1");
        return {1, x.shape[0], 1, 0};
    }
    if (x.rank() == 2) {
        if (axis == 0) return {x.shape[1], x.shape[0], x.shape[1], 1};
        if (axis == 1) return {x.shape[0], x.shape[1], 1, x.shape[1]};
        throw ShapeError(std::string(where) + ": axis out of range for rank-2");
    }
    throw ShapeError(std::string(where) + ": rank-1 or rank-2 only, got " + x.shape_str());
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis, double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("softmax: temperature must be positive");
    }
    AxisView view = axis_view(x, axis, "softmax");
    Tensor y(x.shape);
    for (std::size_t s = 0; s < view.slices; ++s) {
        std::size_t base = s * view.slice_stride;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < view.len; ++i) {
            mx = std::max(mx, x.v[base + i * view.stride] / temperature);
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < view.len; ++i) {
            double e = std::exp(x.v[base + i * view.stride] / temperature - mx);
            y.v[base + i * view.stride] = e;
            sum += e;
        }
        for (std::size_t i = 0; i < view.len; ++i) y.v[base + i * view.stride] /= sum;
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 1, "layer_norm");
    require_same_shape(x, gamma, "layer_norm");
    require_same_shape(x, beta, "layer_norm");
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
    std::size_t n = x.numel();
    double mean = 0.0;
    for (double t : x.v) mean += t;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double t : x.v) var += (t - mean) * (t - mean);
    var /= static_cast<double>(n);
    double inv = 1.0 / std::sqrt(var + eps);
    Tensor y({n});
    for (std::size_t i = 0; i < n; ++i) {
        y.v[i] = gamma.v[i] * (x.v[i] - mean) * inv + beta.v[i];
    }
    return y;
}

double huber_loss(const Tensor& pred, const Tensor& target, double delta) {
    require_same_shape(pred, target, "huber_loss");
    if (!(delta > 0.0)) throw std::invalid_argument("huber_loss: delta must be positive");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        double r = pred.v[i] - target.v[i];
        double a = std::fabs(r);
        s += a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
    }
    return s / static_cast<double>(pred.numel());
}

double kl_divergence(const Tensor& p, const Tensor& q, double eps) {
    require_same_shape(p, q, "kl_divergence");
    double s = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        if (p.v[i] == 0.0) continue;
        s += p.v[i] * std::log(p.v[i] / std::max(q.v[i], eps));
    }
    return s;
}

// --- VJPs -------------------------------------------------------------------

std::pair<Tensor, Tensor> matmul_vjp(const Tensor& a, const Tensor& b, const Tensor& gy) {
    if (b.rank() == 1) return matvec_vjp(a, b, gy);
    std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor ga(a.shape), gb(b.shape);
    // ga = gy . b^T
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double g = gy.v[i * n + j];
            if (g == 0.0) continue;
            for (std::size_t l = 0; l < k; ++l) ga.v[i * k + l] += g * b.v[l * n + j];
        }
    }
    // gb = a^T . gy
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            double av = a.v[i * k + l];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb.v[l * n + j] += av * gy.v[i * n + j];
        }
    }
    return {std::move(ga), std::move(gb)};
}

std::pair<Tensor, Tensor> matvec_vjp(const Tensor& a, const Tensor& x, const Tensor& gy) {
    std::size_t m = a.shape[0], k = a.shape[1];
    Tensor ga(a.shape), gx(x.shape);
    for (std::size_t i = 0; i < m; ++i) {
        double g = gy.v[i];
        const double* arow = &a.v[i * k];
        double* garow = &ga.v[i * k];
        for (std::size_t l = 0; l < k; ++l) {
            garow[l] += g * x.v[l];
            gx.v[l] += g * arow[l];
        }
    }
    return {std::move(ga), std::move(gx)};
}

std::pair<Tensor, Tensor> mul_vjp(const Tensor& a, const Tensor& b, const Tensor& gy) {
    return {mul(gy, b), mul(gy, a)};
}

Tensor tanh_vjp(const Tensor& x, const Tensor& gy) {
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double t = std::tanh(x.v[i]);
        g.v[i] = gy.v[i] * (1.0 - t * t);
    }
    return g;
}

Tensor sigmoid_vjp(const Tensor& x, const Tensor& gy) {
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double s = sigmoid_s(x.v[i]);
        g.v[i] = gy.v[i] * s * (1.0 - s);
    }
    return g;
}

Tensor gelu_vjp(const Tensor& x, const Tensor& gy) {
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) g.v[i] = gy.v[i] * gelu_grad_s(x.v[i]);
    return g;
}

Tensor softplus_vjp(const Tensor& x, const Tensor& gy) {
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) g.v[i] = gy.v[i] * sigmoid_s(x.v[i]);
    return g;
}

Tensor exp_vjp(const Tensor& x, const Tensor& gy) {
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) g.v[i] = gy.v[i] * std::exp(x.v[i]);
    return g;
}

Tensor relu_vjp(const Tensor& x, const Tensor& gy) {
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) g.v[i] = x.v[i] > 0.0 ? gy.v[i] : 0.0;
    return g;
}

Tensor l2_norm_vjp(const Tensor& x, double gy) {
    double n = std::max(l2_norm(x), kDivGuard);
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) g.v[i] = gy * x.v[i] / n;
    return g;
}

std::pair<Tensor, Tensor> cosine_similarity_vjp(const Tensor& a, const Tensor& b, double gy) {
    double na = std::max(l2_norm(a), kDivGuard);
    double nb = std::max(l2_norm(b), kDivGuard);
    double d = dot(a, b);
    double c = d / (na * nb);
    Tensor ga(a.shape), gb(b.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        ga.v[i] = gy * (b.v[i] / (na * nb) - c * a.v[i] / (na * na));
        gb.v[i] = gy * (a.v[i] / (na * nb) - c * b.v[i] / (nb * nb));
    }
    return {std::move(ga), std::move(gb)};
}

Tensor mean_pool_rows_vjp(const Tensor& x, const Tensor& gy) {
    std::size_t t = x.shape[0], d = x.shape[1];
    Tensor g(x.shape);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < d; ++j) g.v[i * d + j] = gy.v[j] / static_cast<double>(t);
    }
    return g;
}

std::vector<Tensor> concat_vjp(const std::vector<Tensor>& parts, const Tensor& gy) {
    std::vector<Tensor> grads;
    grads.reserve(parts.size());
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        Tensor g(p.shape);
        std::copy(gy.v.begin() + static_cast<std::ptrdiff_t>(off),
                  gy.v.begin() + static_cast<std::ptrdiff_t>(off + p.numel()), g.v.begin());
        off += p.numel();
        grads.push_back(std::move(g));
    }
    return grads;
}

Tensor softmax_vjp(const Tensor& y, std::size_t axis, double temperature, const Tensor& gy) {
    AxisView view = axis_view(y, axis, "softmax_vjp");
    Tensor gx(y.shape);
    for (std::size_t s = 0; s < view.slices; ++s) {
        std::size_t base = s * view.slice_stride;
        double inner = 0.0;
        for (std::size_t i = 0; i < view.len; ++i) {
            std::size_t idx = base + i * view.stride;
            inner += gy.v[idx] * y.v[idx];
        }
        for (std::size_t i = 0; i < view.len; ++i) {
            std::size_t idx = base + i * view.stride;
            gx.v[idx] = y.v[idx] * (gy.v[idx] - inner) / temperature;
        }
    }
    return gx;
}

LayerNormGrads layer_norm_vjp(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps, const Tensor& gy) {
    (void)beta;
    std::size_t n = x.numel();
    double nn = static_cast<double>(n);
    double mean = 0.0;
    for (double t : x.v) mean += t;
    mean /= nn;
    double var = 0.0;
    for (double t : x.v) var += (t - mean) * (t - mean);
    var /= nn;
    double inv = 1.0 / std::sqrt(var + eps);

    LayerNormGrads out{Tensor(x.shape), Tensor(x.shape), Tensor(x.shape)};
    std::vector<double> xhat(n), dxhat(n);
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        xhat[i] = (x.v[i] - mean) * inv;
        out.dgamma.v[i] = gy.v[i] * xhat[i];
        out.dbeta.v[i] = gy.v[i];
        dxhat[i] = gy.v[i] * gamma.v[i];
        sum_dxhat += dxhat[i];
        sum_dxhat_xhat += dxhat[i] * xhat[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        out.dx.v[i] = inv * (dxhat[i] - sum_dxhat / nn - xhat[i] * sum_dxhat_xhat / nn);
    }
    return out;
}

std::pair<Tensor, Tensor> huber_loss_vjp(const Tensor& pred, const Tensor& target,
                                         double delta, double gy) {
    std::size_t n = pred.numel();
    Tensor gp(pred.shape), gt(target.shape);
    for (std::size_t i = 0; i < n; ++i) {
        double r = pred.v[i] - target.v[i];
        double d = std::fabs(r) <= delta ? r : delta * (r > 0.0 ? 1.0 : -1.0);
        gp.v[i] = gy * d / static_cast<double>(n);
        gt.v[i] = -gp.v[i];
    }
    return {std::move(gp), std::move(gt)};
}

std::pair<Tensor, Tensor> kl_divergence_vjp(const Tensor& p, const Tensor& q, double eps,
                                            double gy) {
    Tensor gp(p.shape), gq(q.shape);
    for (std::size_t i = 0; i < p.numel(); ++i) {
        double qc = std::max(q.v[i], eps);
        if (p.v[i] > 0.0) {
            gp.v[i] = gy * (std::log(p.v[i] / qc) + 1.0);
            if (q.v[i] > eps) gq.v[i] = -gy * p.v[i] / q.v[i];
        }
    }
    return {std::move(gp), std::move(gq)};
}

}  // namespace stap
