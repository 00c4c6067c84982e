#include "stap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stap/kernels.hpp"

namespace stap {

namespace {

double project(const Tensor& y, const Tensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y.v[i] * r.v[i];
    return s;
}

}  // namespace

GradCheckReport grad_check(const CheckedKernel& kernel, const std::vector<Tensor>& point,
                           const GradCheckOptions& opts) {
    if (opts.step < 1e-7 || opts.step > 1e-3) {
        throw std::invalid_argument("grad_check: step outside [1e-7, 1e-3]");
    }
    Rng rng(derive_seed(opts.seed, 0xbadcafeULL));

    Tensor y0 = kernel.forward(point);
    if (!y0.all_finite()) {
        throw EvalError("grad_check(" + kernel.name + "): non-finite forward at probe point");
    }

    // Fixed random projection turns tensor outputs into a scalar objective.
    Tensor proj(y0.shape);
    if (y0.numel() == 1) {
        proj.v[0] = 1.0;
    } else {
        for (double& x : proj.v) x = rng.normal();
    }

    std::vector<Tensor> analytic = kernel.vjp(point, proj);
    if (analytic.size() != point.size()) {
        throw std::logic_error("grad_check(" + kernel.name + "): vjp arity mismatch");
    }

    GradCheckReport report;
    report.kernel = kernel.name;

    std::vector<Tensor> work = point;
    for (std::size_t input = 0; input < point.size(); ++input) {
        std::size_t n = point[input].numel();
        // Probe every coordinate of small inputs, a random subset of large ones.
        std::vector<std::size_t> coords;
        if (n <= opts.max_probes_per_input) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            for (std::size_t i = 0; i < opts.max_probes_per_input; ++i) {
                coords.push_back(rng.index(n));
            }
        }
        for (std::size_t c : coords) {
            double saved = work[input].v[c];
            work[input].v[c] = saved + opts.step;
            double fp = project(kernel.forward(work), proj);
            work[input].v[c] = saved - opts.step;
            double fm = project(kernel.forward(work), proj);
            work[input].v[c] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw EvalError("grad_check(" + kernel.name + "): non-finite forward at input " +
                                std::to_string(input) + " coord " + std::to_string(c));
            }
            double fd = (fp - fm) / (2.0 * opts.step);
            double an = analytic[input].v[c];
            double rel = std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
            report.max_rel_error = std::max(report.max_rel_error, rel);
            ++report.probes;
        }
    }
    report.pass = report.max_rel_error <= opts.tol;
    return report;
}

namespace {

CheckedKernel unary(const std::string& name, Tensor (*fwd)(const Tensor&),
                    Tensor (*bwd)(const Tensor&, const Tensor&)) {
    return CheckedKernel{
        name,
        [fwd](const std::vector<Tensor>& in) { return fwd(in[0]); },
        [bwd](const std::vector<Tensor>& in, const Tensor& gy) {
            return std::vector<Tensor>{bwd(in[0], gy)};
        }};
}

std::function<std::vector<Tensor>(Rng&)> normal_vecs(std::initializer_list<std::size_t> lens) {
    std::vector<std::size_t> sizes(lens);
    return [sizes](Rng& rng) {
        std::vector<Tensor> point;
        for (std::size_t n : sizes) point.push_back(rng.normal_tensor({n}));
        return point;
    };
}

}  // namespace

std::vector<KernelSuiteEntry> kernel_suite() {
    std::vector<KernelSuiteEntry> suite;

    suite.push_back({CheckedKernel{
                         "matmul",
                         [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             auto [ga, gb] = matmul_vjp(in[0], in[1], gy);
                             return std::vector<Tensor>{ga, gb};
                         }},
                     [](Rng& rng) {
                         return std::vector<Tensor>{rng.normal_tensor({4, 3}),
                                                    rng.normal_tensor({3, 2})};
                     }});

    suite.push_back({CheckedKernel{
                         "add",
                         [](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             (void)in;
                             return std::vector<Tensor>{gy, gy};
                         }},
                     normal_vecs({7, 7})});

    suite.push_back({CheckedKernel{
                         "elementwise_multiply",
                         [](const std::vector<Tensor>& in) { return mul(in[0], in[1]); },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             auto [ga, gb] = mul_vjp(in[0], in[1], gy);
                             return std::vector<Tensor>{ga, gb};
                         }},
                     normal_vecs({7, 7})});

    suite.push_back({unary("tanh", tanh, tanh_vjp), normal_vecs({7})});
    suite.push_back({unary("sigmoid", sigmoid, sigmoid_vjp), normal_vecs({7})});
    suite.push_back({unary("gelu", gelu, gelu_vjp), normal_vecs({7})});
    suite.push_back({unary("softplus", softplus, softplus_vjp), normal_vecs({7})});
    suite.push_back({unary("exp", exp, exp_vjp),
                     [](Rng& rng) {
                         return std::vector<Tensor>{rng.uniform_tensor({7}, -2.0, 2.0)};
                     }});
    suite.push_back({unary("relu", relu, relu_vjp),
                     [](Rng& rng) {
                         // keep coordinates away from the kink at 0
                         Tensor x = rng.normal_tensor({7});
                         for (double& t : x.v) {
                             if (std::fabs(t) < 0.05) t += t >= 0.0 ? 0.1 : -0.1;
                         }
                         return std::vector<Tensor>{x};
                     }});

    suite.push_back({CheckedKernel{
                         "l2_norm",
                         [](const std::vector<Tensor>& in) {
                             return Tensor::scalar(l2_norm(in[0]));
                         },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             return std::vector<Tensor>{l2_norm_vjp(in[0], gy.item())};
                         }},
                     [](Rng& rng) {
                         Tensor x = rng.normal_tensor({6});
                         while (l2_norm(x) < 0.5) x = rng.normal_tensor({6});
                         return std::vector<Tensor>{x};
                     }});

    suite.push_back({CheckedKernel{
                         "mean_pool",
                         [](const std::vector<Tensor>& in) { return mean_pool_rows(in[0]); },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             return std::vector<Tensor>{mean_pool_rows_vjp(in[0], gy)};
                         }},
                     [](Rng& rng) {
                         return std::vector<Tensor>{rng.normal_tensor({5, 4})};
                     }});

    suite.push_back({CheckedKernel{
                         "concat",
                         [](const std::vector<Tensor>& in) { return concat(in); },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             return concat_vjp(in, gy);
                         }},
                     normal_vecs({4, 3, 5})});

    suite.push_back({CheckedKernel{
                         "softmax_rows",
                         [](const std::vector<Tensor>& in) { return softmax(in[0], 1, 0.7); },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             Tensor y = softmax(in[0], 1, 0.7);
                             return std::vector<Tensor>{softmax_vjp(y, 1, 0.7, gy)};
                         }},
                     [](Rng& rng) {
                         return std::vector<Tensor>{rng.normal_tensor({3, 5})};
                     }});

    suite.push_back({CheckedKernel{
                         "layer_norm",
                         [](const std::vector<Tensor>& in) {
                             return layer_norm(in[0], in[1], in[2], kLayerNormEps);
                         },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             LayerNormGrads g =
                                 layer_norm_vjp(in[0], in[1], in[2], kLayerNormEps, gy);
                             return std::vector<Tensor>{g.dx, g.dgamma, g.dbeta};
                         }},
                     normal_vecs({6, 6, 6})});

    suite.push_back({CheckedKernel{
                         "huber_loss",
                         [](const std::vector<Tensor>& in) {
                             return Tensor::scalar(huber_loss(in[0], in[1], 1.0));
                         },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             auto [gp, gt] = huber_loss_vjp(in[0], in[1], 1.0, gy.item());
                             return std::vector<Tensor>{gp, gt};
                         }},
                     [](Rng& rng) {
                         // residuals kept away from |r| == delta where the loss
                         // is only C^1 and finite differences degrade
                         Tensor target = rng.normal_tensor({6});
                         Tensor pred = target;
                         for (std::size_t i = 0; i < pred.numel(); ++i) {
                             double r = rng.normal();
                             while (std::fabs(std::fabs(r) - 1.0) < 0.05) r = rng.normal();
                             pred.v[i] += r;
                         }
                         return std::vector<Tensor>{pred, target};
                     }});

    suite.push_back({CheckedKernel{
                         "kl_divergence",
                         [](const std::vector<Tensor>& in) {
                             return Tensor::scalar(kl_divergence(in[0], in[1], kKlEps));
                         },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             auto [gp, gq] = kl_divergence_vjp(in[0], in[1], kKlEps, gy.item());
                             return std::vector<Tensor>{gp, gq};
                         }},
                     [](Rng& rng) {
                         Tensor p = softmax(rng.normal_tensor({5}), 0, 1.0);
                         Tensor q = softmax(rng.normal_tensor({5}), 0, 1.0);
                         return std::vector<Tensor>{p, q};
                     }});

    suite.push_back({CheckedKernel{
                         "cosine_similarity",
                         [](const std::vector<Tensor>& in) {
                             return Tensor::scalar(cosine_similarity(in[0], in[1]));
                         },
                         [](const std::vector<Tensor>& in, const Tensor& gy) {
                             auto [ga, gb] = cosine_similarity_vjp(in[0], in[1], gy.item());
                             return std::vector<Tensor>{ga, gb};
                         }},
                     [](Rng& rng) {
                         Tensor a = rng.normal_tensor({6});
                         Tensor b = rng.normal_tensor({6});
                         while (l2_norm(a) < 0.5) a = rng.normal_tensor({6});
                         while (l2_norm(b) < 0.5) b = rng.normal_tensor({6});
                         return std::vector<Tensor>{a, b};
                     }});

    return suite;
}

std::vector<GradCheckReport> run_kernel_suite(std::size_t points, double tol,
                                              std::uint64_t seed) {
    std::vector<GradCheckReport> reports;
    std::vector<KernelSuiteEntry> suite = kernel_suite();
    for (std::size_t k = 0; k < suite.size(); ++k) {
        Rng rng(derive_seed(seed, k));
        GradCheckReport worst;
        worst.kernel = suite[k].kernel.name;
        worst.pass = true;
        for (std::size_t p = 0; p < points; ++p) {
            GradCheckOptions opts;
            opts.tol = tol;
            opts.seed = derive_seed(seed, k * 1000 + p);
            std::vector<Tensor> point = suite[k].sample_point(rng);
            GradCheckReport r = grad_check(suite[k].kernel, point, opts);
            worst.max_rel_error = std::max(worst.max_rel_error, r.max_rel_error);
            worst.probes += r.probes;
            worst.pass = worst.pass && r.pass;
        }
        reports.push_back(std::move(worst));
    }
    return reports;
}

}  // namespace stap
