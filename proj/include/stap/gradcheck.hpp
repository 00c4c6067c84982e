#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stap/rng.hpp"
#include "stap/tensor.hpp"

namespace stap {

/// A differentiable kernel as a checkable unit: forward, plus the analytic
/// vector-Jacobian product for every input.
struct CheckedKernel {
    std::string name;
    std::function<Tensor(const std::vector<Tensor>&)> forward;
    /// Returns one gradient tensor per input, given the upstream gradient
    /// on the output.
    std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)> vjp;
};

struct GradCheckReport {
    std::string kernel;
    double max_rel_error = 0.0;
    bool pass = false;
    std::size_t probes = 0;
};

struct GradCheckOptions {
    double step = 1e-5;      // central-difference step, must lie in [1e-7, 1e-3]
    double tol = 1e-4;
    std::size_t max_probes_per_input = 24;
    std::uint64_t seed = 0x5eedu;
};

/// Compares the kernel's analytic backward against central finite
/// differences at randomly probed coordinates. Tensor-valued kernels are
/// reduced to a scalar through a fixed random projection before
/// differencing, so the analytic side is vjp(inputs, projection).
GradCheckReport grad_check(const CheckedKernel& kernel, const std::vector<Tensor>& point,
                           const GradCheckOptions& opts = {});

/// The full differentiable-kernel contract: every kernel the model uses,
/// wrapped for grad_check with input samplers that stay clear of kinks.
struct KernelSuiteEntry {
    CheckedKernel kernel;
    std::function<std::vector<Tensor>(Rng&)> sample_point;
};

std::vector<KernelSuiteEntry> kernel_suite();

/// Runs every suite kernel at `points` random points; returns one report per
/// kernel with the worst error seen across points.
std::vector<GradCheckReport> run_kernel_suite(std::size_t points, double tol,
                                              std::uint64_t seed);

}  // namespace stap
