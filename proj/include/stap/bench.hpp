#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stap/temporal.hpp"
#include "stap/tensor.hpp"

namespace stap {

enum class BenchKernel {
    ssm_scan,
    sparse_attention,
    dense_attention,
    route,
    flat_retrieval,
};

const char* bench_kernel_name(BenchKernel k);
BenchKernel bench_kernel_from_name(const std::string& name);

struct ScalingReport {
    BenchKernel kernel = BenchKernel::ssm_scan;
    std::vector<std::size_t> sizes;
    std::vector<double> median_ms;           // per size
    std::vector<std::uint64_t> checksums;    // per size, workload output hash
    double slope = 0.0;                      // log-log least squares
    double slope_halfwidth = 0.0;            // 2 * standard error
    std::size_t trials = 0;
    bool unstable = false;  // spread > 50% of median even after one retry

    double max_min_ratio() const;
};

/// Least-squares fit of ln(time) on ln(size); returns (slope, 2*SE).
std::pair<double, double> fit_loglog_slope(const std::vector<std::size_t>& sizes,
                                           const std::vector<double>& times);

/// Wall-times the kernel over the given sizes (sequence length T, or stored
/// corpus size N for route/flat_retrieval). Warm calibration run per size,
/// >=5 trials, median reported; monotonic clock.
ScalingReport bench_scaling(BenchKernel kernel, const std::vector<std::size_t>& sizes,
                            std::size_t trials, std::uint64_t seed);

/// Brute-force full-window attention with the same projections; oracle for
/// sparse_attention and the quadratic-cost benchmark subject.
Tensor dense_attention_reference(const Tensor& frames, const SparseAttnParams& p);

}  // namespace stap
